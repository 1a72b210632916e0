#include "t1cl/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace t1cl {

namespace {

constexpr char kCheckpointMagic[4] = {'T', '1', 'C', 'N'};
constexpr std::uint8_t kCheckpointVersion = 0x01;

// Output channel count of one op applied to in_ch channels.
std::size_t op_out_channels(const OwanOp& op, std::size_t in_ch) {
    if (!op_has_weights(op.kind)) return in_ch;
    return op.weights.shape[3];
}

std::size_t concat_channels(const OwanBlock& block, std::size_t in_ch) {
    std::size_t total = 0;
    for (const OwanOp& op : block.ops) total += op_out_channels(op, in_ch);
    return total;
}

FeatureMap slice_channels(const FeatureMap& m, std::size_t c0, std::size_t c1) {
    FeatureMap out = FeatureMap::zeros(m.height, m.width, c1 - c0);
    for (std::size_t px = 0; px < m.pixels(); ++px) {
        const double* src = m.data.data.data() + px * m.channels + c0;
        double* dst = out.data.data.data() + px * out.channels;
        for (std::size_t c = 0; c < c1 - c0; ++c) dst[c] = src[c];
    }
    return out;
}

void add_into(FeatureMap& dst, const FeatureMap& src) {
    if (!dst.same_shape(src)) throw std::invalid_argument("feature map shape mismatch in add");
    for (std::size_t t = 0; t < dst.data.size(); ++t) dst.data.data[t] += src.data.data[t];
}

// Fill the augmented fusion input for one pixel of the concatenated map.
void fill_augmented(const T1clLayer& fusion, const double* concat_px, double* aug) {
    const std::size_t I = fusion.kernel.in_dim;
    const std::size_t cin = fusion.in_channels();
    for (std::size_t c = 0; c < cin; ++c) aug[c] = concat_px[c];
    if (fusion.add_one) aug[I - 1] = 1.0;
}

}  // namespace

std::vector<std::size_t> uniform_rank_list(KernelFormat format, std::size_t order,
                                           std::size_t rank) {
    switch (format) {
        case KernelFormat::CP: return {rank};
        case KernelFormat::TT: return std::vector<std::size_t>(order - 1, rank);
        case KernelFormat::TR: return std::vector<std::size_t>(order, rank);
    }
    return {};
}

OpKind default_op_bank(std::size_t index) {
    static constexpr OpKind bank[] = {OpKind::Conv1x1,    OpKind::Conv3x3, OpKind::Dilated3x3,
                                      OpKind::AvgPool3x3, OpKind::Conv5x5, OpKind::Identity};
    if (index >= sizeof(bank) / sizeof(bank[0]))
        throw std::invalid_argument("operation bank holds six kinds");
    return bank[index];
}

OwanBlock make_block(std::size_t channels, std::size_t num_ops, const FusionSetup& fusion,
                     bool residual, Rng& rng) {
    if (num_ops == 0) throw std::invalid_argument("block needs at least one operation");
    OwanBlock b;
    for (std::size_t o = 0; o < num_ops; ++o) {
        OwanOp op;
        op.kind = default_op_bank(o);
        op.weights = init_op_weights(op.kind, channels, channels, rng);
        b.ops.push_back(std::move(op));
    }
    const std::size_t in_dim = num_ops * channels + (fusion.add_one ? 1 : 0);
    b.fusion.kernel = init_kernel(fusion.format, fusion.order, in_dim, channels,
                                  uniform_rank_list(fusion.format, fusion.order, fusion.rank),
                                  fusion.shared, rng);
    b.fusion.add_one = fusion.add_one;
    b.fusion.activation = fusion.activation;
    b.residual = residual;
    return b;
}

MicroOwanNet make_net(std::size_t img_channels, std::size_t channels, std::size_t num_blocks,
                      std::size_t num_ops, const FusionSetup& fusion, bool block_residual,
                      bool global_residual, Rng& rng) {
    MicroOwanNet net;
    net.img_channels = img_channels;
    net.channels = channels;
    net.stem = init_op_weights(OpKind::Conv3x3, img_channels, channels, rng);
    for (std::size_t b = 0; b < num_blocks; ++b)
        net.blocks.push_back(make_block(channels, num_ops, fusion, block_residual, rng));
    // zeroed head: with the global skip the fresh net is an identity map
    net.head = DenseTensor::zeros(op_weight_shape(OpKind::Conv3x3, channels, img_channels));
    net.global_residual = global_residual;
    return net;
}

FeatureMap block_forward(const OwanBlock& block, const FeatureMap& in, BlockCache& cache,
                         int zero_op) {
    if (zero_op >= static_cast<int>(block.ops.size()))
        throw std::invalid_argument("zero_op index out of range");
    cache.input = in;
    cache.zeroed_op = zero_op >= 0 ? zero_op : -1;
    const std::size_t cc = concat_channels(block, in.channels);
    if (cache.concat.height != in.height || cache.concat.width != in.width ||
        cache.concat.channels != cc)
        cache.concat = FeatureMap::zeros(in.height, in.width, cc);
    else if (zero_op >= 0)  // a blanked slice must read as zeros in a reused buffer
        std::fill(cache.concat.data.data.begin(), cache.concat.data.data.end(), 0.0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < block.ops.size(); ++o) {
        const OwanOp& op = block.ops[o];
        const std::size_t cout = op_out_channels(op, in.channels);
        if (static_cast<int>(o) != zero_op) {
            FeatureMap fo = op_forward(op.kind, op.weights, in);
            for (std::size_t px = 0; px < in.pixels(); ++px) {
                const double* src = fo.data.data.data() + px * cout;
                double* dst = cache.concat.data.data.data() + px * cache.concat.channels + off;
                for (std::size_t c = 0; c < cout; ++c) dst[c] = src[c];
            }
        }
        off += cout;
    }
    FeatureMap out = layer_forward(block.fusion, cache.concat, cache.fusion);
    if (block.residual) {
        if (out.channels != in.channels)
            throw std::invalid_argument("residual block must preserve channel count");
        add_into(out, in);
    }
    return out;
}

FeatureMap net_forward(const MicroOwanNet& net, const FeatureMap& in, NetCache& cache,
                       RunHooks* hooks) {
    if (in.channels != net.img_channels)
        throw std::invalid_argument("network input channel mismatch");
    cache.input = in;
    cache.stem_out = op_forward(OpKind::Conv3x3, net.stem, in);
    cache.blocks.resize(net.blocks.size());  // keep per-block buffers across calls
    cache.hooked = hooks && hooks->zero_op >= 0;
    FeatureMap cur = cache.stem_out;
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        cur = block_forward(net.blocks[b], cur, cache.blocks[b], hooks ? hooks->zero_op : -1);
        if (hooks && hooks->capture_block == static_cast<int>(b))
            hooks->captured = cache.blocks[b].concat;
    }
    cache.head_in = cur;
    FeatureMap out = op_forward(OpKind::Conv3x3, net.head, cur);
    if (net.global_residual) add_into(out, in);
    return out;
}

NetGrads zero_grads(const MicroOwanNet& net) {
    NetGrads g;
    g.stem = DenseTensor::zeros(net.stem.shape);
    for (const OwanBlock& b : net.blocks) {
        BlockGrads bg;
        for (const OwanOp& op : b.ops)
            bg.ops.push_back(op.weights.empty() ? DenseTensor{}
                                                : DenseTensor::zeros(op.weights.shape));
        for (const DenseTensor& c : b.fusion.kernel.cores)
            bg.fusion_cores.push_back(DenseTensor::zeros(c.shape));
        g.blocks.push_back(std::move(bg));
    }
    g.head = DenseTensor::zeros(net.head.shape);
    return g;
}

FeatureMap block_backward(const OwanBlock& block, const BlockCache& cache,
                          const FeatureMap& upstream, BlockGrads& g) {
    if (cache.zeroed_op >= 0)
        throw std::logic_error("cannot backprop a forward pass that blanked an operation");
    if (g.ops.size() != block.ops.size() ||
        g.fusion_cores.size() != block.fusion.kernel.cores.size())
        throw std::invalid_argument("block gradient buffers mismatch");

    LayerGrads lg = layer_backward(block.fusion, cache.fusion, upstream);
    for (std::size_t s = 0; s < lg.cores.size(); ++s) {
        for (std::size_t t = 0; t < lg.cores[s].size(); ++t)
            g.fusion_cores[s].data[t] += lg.cores[s].data[t];
    }

    FeatureMap grad_in = FeatureMap::zeros(cache.input.height, cache.input.width,
                                           cache.input.channels);
    if (block.residual) add_into(grad_in, upstream);

    std::size_t off = 0;
    for (std::size_t o = 0; o < block.ops.size(); ++o) {
        const OwanOp& op = block.ops[o];
        const std::size_t cout = op_out_channels(op, cache.input.channels);
        FeatureMap up_slice = slice_channels(lg.input, off, off + cout);
        op_backward(op.kind, op.weights, cache.input, up_slice,
                    op.weights.empty() ? nullptr : &g.ops[o], grad_in);
        off += cout;
    }
    return grad_in;
}

NetGrads net_backward(const MicroOwanNet& net, const NetCache& cache,
                      const FeatureMap& upstream) {
    if (cache.hooked)
        throw std::logic_error("cannot backprop a forward pass that ran with hooks");
    if (cache.blocks.size() != net.blocks.size())
        throw std::logic_error("network cache does not match network");
    NetGrads g = zero_grads(net);

    FeatureMap grad_body = FeatureMap::zeros(cache.head_in.height, cache.head_in.width,
                                             cache.head_in.channels);
    op_backward(OpKind::Conv3x3, net.head, cache.head_in, upstream, &g.head, grad_body);
    for (std::size_t b = net.blocks.size(); b-- > 0;)
        grad_body = block_backward(net.blocks[b], cache.blocks[b], grad_body, g.blocks[b]);
    FeatureMap grad_input = FeatureMap::zeros(cache.input.height, cache.input.width,
                                              cache.input.channels);
    op_backward(OpKind::Conv3x3, net.stem, cache.input, grad_body, &g.stem, grad_input);
    return g;
}

std::vector<DenseTensor*> net_parameters(MicroOwanNet& net) {
    std::vector<DenseTensor*> ps;
    ps.push_back(&net.stem);
    for (OwanBlock& b : net.blocks) {
        for (OwanOp& op : b.ops)
            if (!op.weights.empty()) ps.push_back(&op.weights);
        for (DenseTensor& c : b.fusion.kernel.cores) ps.push_back(&c);
    }
    ps.push_back(&net.head);
    return ps;
}

std::vector<DenseTensor*> grad_tensors(NetGrads& g) {
    std::vector<DenseTensor*> ts;
    ts.push_back(&g.stem);
    for (BlockGrads& b : g.blocks) {
        for (DenseTensor& t : b.ops)
            if (!t.empty()) ts.push_back(&t);
        for (DenseTensor& c : b.fusion_cores) ts.push_back(&c);
    }
    ts.push_back(&g.head);
    return ts;
}

std::size_t net_param_count(const MicroOwanNet& net) {
    std::size_t n = net.stem.size() + net.head.size();
    for (const OwanBlock& b : net.blocks) {
        for (const OwanOp& op : b.ops) n += op.weights.size();
        n += param_count(b.fusion.kernel);
    }
    return n;
}

namespace {

// Channel range of op k inside the augmented fusion input; the appended
// constant index joins the last op's range.
void component_range(const OwanBlock& block, const FeatureMap& in, std::size_t k,
                     std::size_t& begin, std::size_t& end) {
    begin = 0;
    for (std::size_t o = 0; o < k; ++o) begin += op_out_channels(block.ops[o], in.channels);
    end = begin + op_out_channels(block.ops[k], in.channels);
    if (block.fusion.add_one && k + 1 == block.ops.size()) ++end;
}

}  // namespace

std::vector<FeatureMap> decompose_by_operation(const OwanBlock& block, const FeatureMap& in,
                                               int zero_op) {
    if (block.fusion.kernel.order != 1)
        throw std::invalid_argument("use the high-order decomposition for order >= 2 fusion");
    BlockCache cache;
    block_forward(block, in, cache, zero_op);

    const TnKernel& k = block.fusion.kernel;
    const std::size_t I = k.in_dim;
    const std::size_t J = k.out_dim;
    const std::size_t N = block.ops.size();
    std::vector<FeatureMap> comps;
    for (std::size_t o = 0; o < N; ++o)
        comps.push_back(FeatureMap::zeros(in.height, in.width, J));

    ContractScratch scratch;
    std::vector<double> aug(I), masked(I);
    for (std::size_t px = 0; px < in.pixels(); ++px) {
        fill_augmented(block.fusion, cache.concat.data.data.data() + px * cache.concat.channels,
                       aug.data());
        for (std::size_t o = 0; o < N; ++o) {
            std::size_t c0, c1;
            component_range(block, in, o, c0, c1);
            std::fill(masked.begin(), masked.end(), 0.0);
            for (std::size_t c = c0; c < c1; ++c) masked[c] = aug[c];
            contract_into(k, masked.data(), comps[o].data.data.data() + px * J, scratch);
        }
    }
    return comps;
}

std::map<std::vector<int>, FeatureMap> decompose_by_operation_highorder(const OwanBlock& block,
                                                                        const FeatureMap& in,
                                                                        int zero_op) {
    const TnKernel& k = block.fusion.kernel;
    if (k.order < 2)
        throw std::invalid_argument("high-order decomposition needs order >= 2 fusion");
    const std::size_t N = block.ops.size();
    const std::size_t p = k.order;
    const std::size_t J = k.out_dim;
    double components = 1.0;
    for (std::size_t q = 0; q < p; ++q) components *= static_cast<double>(N);
    if (components * static_cast<double>(in.pixels()) * static_cast<double>(J) > 1e7)
        throw std::length_error("high-order decomposition exceeds component budget");

    BlockCache cache;
    block_forward(block, in, cache, zero_op);

    const std::size_t I = k.in_dim;
    const std::size_t count = static_cast<std::size_t>(components);
    std::vector<FeatureMap> flat;
    for (std::size_t t = 0; t < count; ++t)
        flat.push_back(FeatureMap::zeros(in.height, in.width, J));

    std::vector<double> aug(I);
    std::vector<DenseTensor> masked(N);
    std::vector<DenseTensor> xs(p);
    for (std::size_t px = 0; px < in.pixels(); ++px) {
        fill_augmented(block.fusion, cache.concat.data.data.data() + px * cache.concat.channels,
                       aug.data());
        for (std::size_t o = 0; o < N; ++o) {
            std::size_t c0, c1;
            component_range(block, in, o, c0, c1);
            masked[o] = DenseTensor::zeros({I});
            for (std::size_t c = c0; c < c1; ++c) masked[o].data[c] = aug[c];
        }
        std::vector<std::size_t> tuple(p, 0);
        for (std::size_t t = 0; t < count; ++t) {
            for (std::size_t q = 0; q < p; ++q) xs[q] = masked[tuple[q]];
            DenseTensor y = contract_per_mode(k, xs);
            double* dst = flat[t].data.data.data() + px * J;
            for (std::size_t j = 0; j < J; ++j) dst[j] = y.data[j];
            for (std::size_t q = p; q-- > 0;) {
                if (++tuple[q] < N) break;
                tuple[q] = 0;
            }
        }
    }

    std::map<std::vector<int>, FeatureMap> out;
    std::vector<std::size_t> tuple(p, 0);
    for (std::size_t t = 0; t < count; ++t) {
        std::vector<int> key(tuple.begin(), tuple.end());
        out.emplace(std::move(key), std::move(flat[t]));
        for (std::size_t q = p; q-- > 0;) {
            if (++tuple[q] < N) break;
            tuple[q] = 0;
        }
    }
    return out;
}

void save_checkpoint(std::ostream& out, const MicroOwanNet& net) {
    out.write(kCheckpointMagic, 4);
    write_u8(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(net.img_channels));
    write_u32(out, static_cast<std::uint32_t>(net.channels));
    write_u32(out, static_cast<std::uint32_t>(net.blocks.size()));
    write_u8(out, net.global_residual ? 1 : 0);
    for (const OwanBlock& b : net.blocks) {
        write_u8(out, static_cast<std::uint8_t>(b.ops.size()));
        for (const OwanOp& op : b.ops) write_u8(out, static_cast<std::uint8_t>(op.kind));
        write_u8(out, b.residual ? 1 : 0);
        write_u8(out, b.fusion.add_one ? 1 : 0);
        write_u8(out, static_cast<std::uint8_t>(b.fusion.activation));
        save_kernel(out, b.fusion.kernel);
    }
    save_tensor(out, net.stem);
    for (const OwanBlock& b : net.blocks)
        for (const OwanOp& op : b.ops)
            if (!op.weights.empty()) save_tensor(out, op.weights);
    save_tensor(out, net.head);
    if (!out) throw io_error("failed to write checkpoint");
}

MicroOwanNet load_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::char_traits<char>::compare(magic, kCheckpointMagic, 4) != 0)
        throw io_error("bad checkpoint magic");
    if (read_u8(in) != kCheckpointVersion) throw io_error("unsupported checkpoint version");
    MicroOwanNet net;
    net.img_channels = read_u32(in);
    net.channels = read_u32(in);
    const std::uint32_t nblocks = read_u32(in);
    const std::uint8_t gres = read_u8(in);
    if (net.img_channels == 0 || net.channels == 0 || gres > 1)
        throw io_error("corrupt checkpoint header");
    net.global_residual = gres == 1;
    for (std::uint32_t b = 0; b < nblocks; ++b) {
        OwanBlock blk;
        const std::uint8_t nops = read_u8(in);
        if (nops == 0) throw io_error("corrupt checkpoint header");
        for (std::uint8_t o = 0; o < nops; ++o) {
            const std::uint8_t kind = read_u8(in);
            if (kind > static_cast<std::uint8_t>(OpKind::AvgPool3x3))
                throw io_error("unknown operation kind in checkpoint");
            OwanOp op;
            op.kind = static_cast<OpKind>(kind);
            blk.ops.push_back(std::move(op));
        }
        const std::uint8_t res = read_u8(in);
        const std::uint8_t add1 = read_u8(in);
        const std::uint8_t act = read_u8(in);
        if (res > 1 || add1 > 1 || act > static_cast<std::uint8_t>(Activation::LeakyRelu))
            throw io_error("corrupt checkpoint header");
        blk.residual = res == 1;
        blk.fusion.add_one = add1 == 1;
        blk.fusion.activation = static_cast<Activation>(act);
        blk.fusion.kernel = load_kernel(in);
        net.blocks.push_back(std::move(blk));
    }

    net.stem = load_tensor(in);
    if (net.stem.shape != op_weight_shape(OpKind::Conv3x3, net.img_channels, net.channels))
        throw io_error("checkpoint stem shape mismatch");
    for (OwanBlock& b : net.blocks) {
        std::size_t fused_in = 0;
        for (OwanOp& op : b.ops) {
            if (op_has_weights(op.kind)) {
                op.weights = load_tensor(in);
                if (op.weights.shape != op_weight_shape(op.kind, net.channels, net.channels))
                    throw io_error("checkpoint op weight shape mismatch");
            }
            fused_in += op_out_channels(op, net.channels);
        }
        if (b.fusion.add_one) ++fused_in;
        if (b.fusion.kernel.in_dim != fused_in || b.fusion.kernel.out_dim != net.channels)
            throw io_error("checkpoint fusion kernel shape mismatch");
    }
    net.head = load_tensor(in);
    if (net.head.shape != op_weight_shape(OpKind::Conv3x3, net.channels, net.img_channels))
        throw io_error("checkpoint head shape mismatch");
    return net;
}

void save_checkpoint_file(const std::string& path, const MicroOwanNet& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    save_checkpoint(out, net);
    if (!out) throw io_error("write failed: " + path);
}

MicroOwanNet load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path);
    return load_checkpoint(in);
}

}  // namespace t1cl
