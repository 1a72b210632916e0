#pragma once

#include <cstdint>
#include <string>

#include "t1cl/layer.hpp"
#include "t1cl/tensor.hpp"

namespace t1cl {

/// Shape-preserving spatial operations usable inside a block.  Convolutions
/// zero-pad; avgpool3x3 averages zero-padded 3x3 windows (so borders shrink
/// toward zero), identity passes through.
enum class OpKind : std::uint8_t {
    Identity = 0,
    Conv1x1 = 1,
    Conv3x3 = 2,
    Conv5x5 = 3,
    Dilated3x3 = 4,  // 3x3 taps, dilation rate 2
    AvgPool3x3 = 5,
};

const char* op_kind_name(OpKind k);
OpKind op_kind_from_name(const std::string& name);  // invalid name -> invalid_argument

bool op_has_weights(OpKind k);
// [kh, kw, in_channels, out_channels]; throws for weightless kinds.
std::vector<std::size_t> op_weight_shape(OpKind k, std::size_t in_ch, std::size_t out_ch);
// Uniform in ±sqrt(1 / (kh*kw*in_ch)); empty tensor for weightless kinds.
DenseTensor init_op_weights(OpKind k, std::size_t in_ch, std::size_t out_ch, Rng& rng);

FeatureMap op_forward(OpKind k, const DenseTensor& weights, const FeatureMap& in);

// Exact adjoint of op_forward.  Accumulates into grad_weights (may be null
// for weightless kinds) and grad_in, which must be pre-sized.
void op_backward(OpKind k, const DenseTensor& weights, const FeatureMap& in,
                 const FeatureMap& upstream, DenseTensor* grad_weights, FeatureMap& grad_in);

}  // namespace t1cl
