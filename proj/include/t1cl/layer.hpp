#pragma once

#include <cstdint>
#include <vector>

#include "t1cl/tensor.hpp"
#include "t1cl/tn_kernel.hpp"

namespace t1cl {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1, LeakyRelu = 2 };

constexpr double kLeakySlope = 0.2;

const char* activation_name(Activation a);

inline double activate(Activation a, double v) {
    switch (a) {
        case Activation::Identity: return v;
        case Activation::Relu: return v > 0.0 ? v : 0.0;
        case Activation::LeakyRelu: return v > 0.0 ? v : kLeakySlope * v;
    }
    return v;
}

// Derivative at the cached pre-activation; the kink at 0 uses the left branch.
inline double activate_grad(Activation a, double v) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Relu: return v > 0.0 ? 1.0 : 0.0;
        case Activation::LeakyRelu: return v > 0.0 ? 1.0 : kLeakySlope;
    }
    return 1.0;
}

/// Spatial grid of channel vectors, stored [H, W, C] so one pixel's channels
/// are contiguous.
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    DenseTensor data;

    static FeatureMap zeros(std::size_t h, std::size_t w, std::size_t c);
    static FeatureMap from_tensor(DenseTensor t);  // rank-3 [H,W,C]

    std::size_t pixels() const { return height * width; }
    double* pixel(std::size_t y, std::size_t x) {
        return data.data.data() + (y * width + x) * channels;
    }
    const double* pixel(std::size_t y, std::size_t x) const {
        return data.data.data() + (y * width + x) * channels;
    }
    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// Per-pixel channel fusion: optionally append a constant 1 to the channel
/// vector, contract it against the kernel p times, apply the activation.
struct T1clLayer {
    TnKernel kernel;
    bool add_one = false;
    Activation activation = Activation::LeakyRelu;

    std::size_t in_channels() const { return kernel.in_dim - (add_one ? 1 : 0); }
    std::size_t out_channels() const { return kernel.out_dim; }
};

// Everything backward needs: augmented per-pixel inputs and pre-activations,
// both in row-major pixel order.
struct LayerCache {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<double> aug;   // pixels x in_dim
    std::vector<double> pre;   // pixels x out_dim
    std::vector<double> proj;  // pixels x per-pixel core projections
};

FeatureMap layer_forward(const T1clLayer& layer, const FeatureMap& in, LayerCache& cache);

struct LayerGrads {
    std::vector<DenseTensor> cores;  // one per stored kernel core, summed over pixels
    FeatureMap input;                // constant channel's slot already dropped
};

LayerGrads layer_backward(const T1clLayer& layer, const LayerCache& cache,
                          const FeatureMap& upstream);

}  // namespace t1cl
