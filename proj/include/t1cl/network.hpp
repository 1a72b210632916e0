#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "t1cl/conv_ops.hpp"
#include "t1cl/layer.hpp"
#include "t1cl/tn_kernel.hpp"

namespace t1cl {

struct OwanOp {
    OpKind kind = OpKind::Identity;
    DenseTensor weights;  // empty for weightless kinds
};

/// N parallel operations on the same input, channel-concatenated and fused by
/// a 1x1 tensor layer, with an optional skip connection.
struct OwanBlock {
    std::vector<OwanOp> ops;
    T1clLayer fusion;
    bool residual = true;
};

/// stem conv3x3 -> blocks -> head conv3x3, with an optional global skip.
/// The head starts zeroed so a fresh net with the global skip is an identity.
struct MicroOwanNet {
    std::size_t img_channels = 0;
    std::size_t channels = 0;
    DenseTensor stem;  // [3,3,img_channels,channels]
    std::vector<OwanBlock> blocks;
    DenseTensor head;  // [3,3,channels,img_channels]
    bool global_residual = true;
};

struct FusionSetup {
    KernelFormat format = KernelFormat::CP;
    std::size_t order = 1;
    std::size_t rank = 8;  // replicated into the per-format rank list
    bool shared = true;
    bool add_one = true;
    Activation activation = Activation::LeakyRelu;
};

// Rank list a uniform scalar rank expands to for the given format/order.
std::vector<std::size_t> uniform_rank_list(KernelFormat format, std::size_t order,
                                           std::size_t rank);

// Operation bank order: conv1x1, conv3x3, dilated3x3, avgpool3x3, conv5x5,
// identity; a block takes the first num_ops of these.
OpKind default_op_bank(std::size_t index);

OwanBlock make_block(std::size_t channels, std::size_t num_ops, const FusionSetup& fusion,
                     bool residual, Rng& rng);
MicroOwanNet make_net(std::size_t img_channels, std::size_t channels, std::size_t num_blocks,
                      std::size_t num_ops, const FusionSetup& fusion, bool block_residual,
                      bool global_residual, Rng& rng);

struct BlockCache {
    FeatureMap input;
    FeatureMap concat;
    LayerCache fusion;
    int zeroed_op = -1;  // set when a forward hook blanked an op; backward refuses
};

struct NetCache {
    FeatureMap input;
    FeatureMap stem_out;
    std::vector<BlockCache> blocks;
    FeatureMap head_in;
    bool hooked = false;
};

/// Inference-time instrumentation: blank one operation's output in every
/// block, and/or capture the concatenated fusion input of one block.
struct RunHooks {
    int zero_op = -1;
    int capture_block = -1;
    FeatureMap captured;
};

FeatureMap block_forward(const OwanBlock& block, const FeatureMap& in, BlockCache& cache,
                         int zero_op = -1);
FeatureMap net_forward(const MicroOwanNet& net, const FeatureMap& in, NetCache& cache,
                       RunHooks* hooks = nullptr);

struct BlockGrads {
    std::vector<DenseTensor> ops;          // aligned with block.ops; empty for weightless
    std::vector<DenseTensor> fusion_cores;
};

struct NetGrads {
    DenseTensor stem;
    std::vector<BlockGrads> blocks;
    DenseTensor head;
};

NetGrads zero_grads(const MicroOwanNet& net);
// Gradient of the block output wrt its input; parameter grads accumulate into g.
FeatureMap block_backward(const OwanBlock& block, const BlockCache& cache,
                          const FeatureMap& upstream, BlockGrads& g);
// Parameter gradients for <upstream, net output>; the input gradient is dropped.
NetGrads net_backward(const MicroOwanNet& net, const NetCache& cache,
                      const FeatureMap& upstream);

// The single declared parameter order shared by the optimizer and the
// checkpoint: stem, then per block each op's weights then the fusion cores,
// then head.  grad_tensors flattens a NetGrads identically.
std::vector<DenseTensor*> net_parameters(MicroOwanNet& net);
std::vector<DenseTensor*> grad_tensors(NetGrads& g);
std::size_t net_param_count(const MicroOwanNet& net);

// Pre-activation additive components of the fusion, one per operation; the
// constant channel (add_one) rides with the last operation's component.
// Only defined for order-1 fusion.
std::vector<FeatureMap> decompose_by_operation(const OwanBlock& block, const FeatureMap& in,
                                               int zero_op = -1);
// Cross terms for order-p fusion: one component per operation-index tuple
// (N^p of them), keyed by the tuple; components sum to the pre-activation.
std::map<std::vector<int>, FeatureMap> decompose_by_operation_highorder(const OwanBlock& block,
                                                                        const FeatureMap& in,
                                                                        int zero_op = -1);

void save_checkpoint(std::ostream& out, const MicroOwanNet& net);
MicroOwanNet load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const MicroOwanNet& net);
MicroOwanNet load_checkpoint_file(const std::string& path);

}  // namespace t1cl
