#pragma once

#include "t1cl/layer.hpp"

namespace t1cl {

// Mean absolute difference over every element.  Shapes must match.
double l1_loss(const FeatureMap& pred, const FeatureMap& target);

// 10*log10(peak^2 / MSE), capped at 99 dB (identical inputs hit the cap).
double psnr(const FeatureMap& img, const FeatureMap& ref, double peak = 1.0);

constexpr double kPsnrCap = 99.0;

// Mean local SSIM over all fully-interior 8x8 windows, uniform weighting,
// C1=(0.01)^2 and C2=(0.03)^2 for a peak of 1.  Channels are scored
// independently and averaged.  Images smaller than the window are rejected.
double ssim(const FeatureMap& img, const FeatureMap& ref);

constexpr std::size_t kSsimWindow = 8;

}  // namespace t1cl
