#pragma once

#include <cstddef>
#include <vector>

#include "t1cl/tensor.hpp"

namespace t1cl {

constexpr double kAdamAlpha = 0.001;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.99;
constexpr double kAdamEps = 1e-8;

/// Bias-corrected Adam.  Moment buffers mirror the parameter list handed to
/// make_adam_state; every later step must pass lists of the same shapes.
struct AdamState {
    std::size_t t = 0;
    std::vector<DenseTensor> m;
    std::vector<DenseTensor> v;
};

AdamState make_adam_state(const std::vector<DenseTensor*>& params);

void adam_step(AdamState& state, const std::vector<DenseTensor*>& params,
               const std::vector<DenseTensor*>& grads, double lr = kAdamAlpha);

// eta_min + (eta_max - eta_min) * (1 + cos(pi t / T)) / 2; t past T is refused.
double cosine_lr(std::size_t t, std::size_t total, double eta_max, double eta_min);

}  // namespace t1cl
