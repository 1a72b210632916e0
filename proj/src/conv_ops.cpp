#include "t1cl/conv_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace t1cl {

namespace {

struct Taps {
    std::size_t k;       // taps per axis
    std::ptrdiff_t dil;  // spacing between taps
};

Taps conv_taps(OpKind kind) {
    switch (kind) {
        case OpKind::Conv1x1: return {1, 1};
        case OpKind::Conv3x3: return {3, 1};
        case OpKind::Conv5x5: return {5, 1};
        case OpKind::Dilated3x3: return {3, 2};
        default: throw std::invalid_argument("operation has no convolution taps");
    }
}

void check_conv_args(OpKind kind, const DenseTensor& w, const FeatureMap& in) {
    const Taps t = conv_taps(kind);
    if (w.rank() != 4 || w.shape[0] != t.k || w.shape[1] != t.k)
        throw std::invalid_argument("convolution weight shape mismatch");
    if (w.shape[2] != in.channels)
        throw std::invalid_argument("convolution input channel mismatch");
}

// COUT = 0 compiles the runtime-width fallback; fixed widths keep the output
// accumulator in registers across every tap.  Accumulation order is identical
// either way, so both paths produce the same bits.
template <std::size_t COUT>
void conv_forward_loop(Taps t, const DenseTensor& w, const FeatureMap& in, FeatureMap& out) {
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(t.k / 2) * t.dil;
    const std::size_t cin = in.channels;
    const std::size_t cout = COUT ? COUT : w.shape[3];
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(in.height);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(in.width);
    std::vector<double> spill(COUT ? 0 : cout);
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x) {
            double fixed[COUT ? COUT : 1] = {0.0};
            if constexpr (COUT == 0)
                for (std::size_t co = 0; co < cout; ++co) spill[co] = 0.0;
            for (std::size_t ty = 0; ty < t.k; ++ty) {
                const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(ty) * t.dil - half;
                if (yy < 0 || yy >= H) continue;
                for (std::size_t tx = 0; tx < t.k; ++tx) {
                    const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(tx) * t.dil - half;
                    if (xx < 0 || xx >= W) continue;
                    const double* src = in.pixel(yy, xx);
                    const double* wrow = w.data.data() + (ty * t.k + tx) * cin * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci, wrow += cout) {
                        const double v = src[ci];
                        if constexpr (COUT != 0) {
                            for (std::size_t co = 0; co < COUT; ++co)
                                fixed[co] += v * wrow[co];
                        } else {
                            for (std::size_t co = 0; co < cout; ++co)
                                spill[co] += v * wrow[co];
                        }
                    }
                }
            }
            double* dst = out.pixel(y, x);
            if constexpr (COUT != 0) {
                for (std::size_t co = 0; co < COUT; ++co) dst[co] = fixed[co];
            } else {
                for (std::size_t co = 0; co < cout; ++co) dst[co] = spill[co];
            }
        }
}

FeatureMap conv_forward(OpKind kind, const DenseTensor& w, const FeatureMap& in) {
    check_conv_args(kind, w, in);
    const Taps t = conv_taps(kind);
    FeatureMap out = FeatureMap::zeros(in.height, in.width, w.shape[3]);
    switch (w.shape[3]) {
        case 3: conv_forward_loop<3>(t, w, in, out); break;
        case 4: conv_forward_loop<4>(t, w, in, out); break;
        case 8: conv_forward_loop<8>(t, w, in, out); break;
        case 16: conv_forward_loop<16>(t, w, in, out); break;
        case 32: conv_forward_loop<32>(t, w, in, out); break;
        default: conv_forward_loop<0>(t, w, in, out); break;
    }
    return out;
}

// Narrow outputs (e.g. the 3-channel head) take the plain scalar path; the
// vector setup cost of a 3-wide simd loop swamps the work itself.
template <std::size_t COUT>
void conv_backward_loop(Taps t, const DenseTensor& w, const FeatureMap& in, const FeatureMap& up,
                        DenseTensor* gw, FeatureMap& gin) {
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(t.k / 2) * t.dil;
    const std::size_t cin = in.channels;
    const std::size_t cout = COUT ? COUT : w.shape[3];
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(in.height);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(in.width);
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x) {
            const double* dup = up.pixel(y, x);
            for (std::size_t ty = 0; ty < t.k; ++ty) {
                const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(ty) * t.dil - half;
                if (yy < 0 || yy >= H) continue;
                for (std::size_t tx = 0; tx < t.k; ++tx) {
                    const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(tx) * t.dil - half;
                    if (xx < 0 || xx >= W) continue;
                    const double* src = in.pixel(yy, xx);
                    double* gsrc = gin.pixel(yy, xx);
                    const double* wtap = w.data.data() + (ty * t.k + tx) * cin * cout;
                    double* gtap = gw->data.data() + (ty * t.k + tx) * cin * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double v = src[ci];
                        const double* __restrict wrow = wtap + ci * cout;
                        double* __restrict grow = gtap + ci * cout;
                        double acc = 0.0;
                        if constexpr (COUT != 0 && COUT < 8) {
                            for (std::size_t co = 0; co < COUT; ++co) {
                                grow[co] += v * dup[co];
                                acc += wrow[co] * dup[co];
                            }
                        } else {
#pragma omp simd reduction(+ : acc)
                            for (std::size_t co = 0; co < cout; ++co) {
                                grow[co] += v * dup[co];
                                acc += wrow[co] * dup[co];
                            }
                        }
                        gsrc[ci] += acc;
                    }
                }
            }
        }
}

void conv_backward(OpKind kind, const DenseTensor& w, const FeatureMap& in,
                   const FeatureMap& up, DenseTensor* gw, FeatureMap& gin) {
    check_conv_args(kind, w, in);
    const Taps t = conv_taps(kind);
    const std::size_t cout = w.shape[3];
    if (up.channels != cout || up.height != in.height || up.width != in.width)
        throw std::logic_error("conv upstream shape does not match forward pass");
    if (!gw || gw->shape != w.shape)
        throw std::invalid_argument("conv weight gradient buffer mismatch");
    if (!gin.same_shape(in)) throw std::invalid_argument("conv input gradient buffer mismatch");
    switch (cout) {
        case 3: conv_backward_loop<3>(t, w, in, up, gw, gin); break;
        case 4: conv_backward_loop<4>(t, w, in, up, gw, gin); break;
        case 8: conv_backward_loop<8>(t, w, in, up, gw, gin); break;
        case 16: conv_backward_loop<16>(t, w, in, up, gw, gin); break;
        case 32: conv_backward_loop<32>(t, w, in, up, gw, gin); break;
        default: conv_backward_loop<0>(t, w, in, up, gw, gin); break;
    }
}

FeatureMap avgpool_forward(const FeatureMap& in) {
    FeatureMap out = FeatureMap::zeros(in.height, in.width, in.channels);
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(in.height);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(in.width);
    const std::size_t C = in.channels;
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x) {
            double* dst = out.pixel(y, x);
            for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                const std::ptrdiff_t yy = y + dy;
                if (yy < 0 || yy >= H) continue;
                for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                    const std::ptrdiff_t xx = x + dx;
                    if (xx < 0 || xx >= W) continue;
                    const double* src = in.pixel(yy, xx);
                    for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
            for (std::size_t c = 0; c < C; ++c) dst[c] /= 9.0;  // zero-pad: fixed divisor
        }
    return out;
}

}  // namespace

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Identity: return "identity";
        case OpKind::Conv1x1: return "conv1x1";
        case OpKind::Conv3x3: return "conv3x3";
        case OpKind::Conv5x5: return "conv5x5";
        case OpKind::Dilated3x3: return "dilated3x3";
        case OpKind::AvgPool3x3: return "avgpool3x3";
    }
    return "?";
}

OpKind op_kind_from_name(const std::string& name) {
    for (OpKind k : {OpKind::Identity, OpKind::Conv1x1, OpKind::Conv3x3, OpKind::Conv5x5,
                     OpKind::Dilated3x3, OpKind::AvgPool3x3})
        if (name == op_kind_name(k)) return k;
    throw std::invalid_argument("unknown operation kind: " + name);
}

bool op_has_weights(OpKind k) {
    return k != OpKind::Identity && k != OpKind::AvgPool3x3;
}

std::vector<std::size_t> op_weight_shape(OpKind k, std::size_t in_ch, std::size_t out_ch) {
    const Taps t = conv_taps(k);
    return {t.k, t.k, in_ch, out_ch};
}

DenseTensor init_op_weights(OpKind k, std::size_t in_ch, std::size_t out_ch, Rng& rng) {
    if (!op_has_weights(k)) return DenseTensor{};
    const auto shape = op_weight_shape(k, in_ch, out_ch);
    const double s = std::sqrt(1.0 / static_cast<double>(shape[0] * shape[1] * in_ch));
    return rng_uniform(rng, shape, -s, s);
}

FeatureMap op_forward(OpKind k, const DenseTensor& weights, const FeatureMap& in) {
    switch (k) {
        case OpKind::Identity:
            if (!weights.empty()) throw std::invalid_argument("identity takes no weights");
            return in;
        case OpKind::AvgPool3x3:
            if (!weights.empty()) throw std::invalid_argument("avgpool takes no weights");
            return avgpool_forward(in);
        default: return conv_forward(k, weights, in);
    }
}

void op_backward(OpKind k, const DenseTensor& weights, const FeatureMap& in,
                 const FeatureMap& upstream, DenseTensor* grad_weights, FeatureMap& grad_in) {
    if (!grad_in.same_shape(in)) throw std::invalid_argument("grad_in buffer shape mismatch");
    switch (k) {
        case OpKind::Identity: {
            if (!upstream.same_shape(in))
                throw std::logic_error("identity upstream shape does not match forward pass");
            for (std::size_t t = 0; t < grad_in.data.size(); ++t)
                grad_in.data.data[t] += upstream.data.data[t];
            return;
        }
        case OpKind::AvgPool3x3: {
            if (!upstream.same_shape(in))
                throw std::logic_error("avgpool upstream shape does not match forward pass");
            // the zero-padded 3x3 mean is self-adjoint
            FeatureMap g = avgpool_forward(upstream);
            for (std::size_t t = 0; t < grad_in.data.size(); ++t)
                grad_in.data.data[t] += g.data.data[t];
            return;
        }
        default: conv_backward(k, weights, in, upstream, grad_weights, grad_in);
    }
}

}  // namespace t1cl
