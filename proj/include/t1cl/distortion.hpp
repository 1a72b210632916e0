#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t1cl/layer.hpp"
#include "t1cl/tensor.hpp"

namespace t1cl {

enum class DistortLevel : std::uint8_t { Mild = 0, Moderate = 1, Severe = 2, Custom = 3 };

const char* distort_level_name(DistortLevel level);
DistortLevel distort_level_from_name(const std::string& name);

/// One concrete degradation: 5x5 truncated-Gaussian blur, additive Gaussian
/// noise, then salt-and-pepper replacement, always clipped back to [0,1].
/// All-zero parameters leave the image untouched.
struct DistortionSpec {
    double blur_sigma = 0.0;          // pixels; 0 disables the blur
    double gaussian_noise_sigma = 0.0;  // pixel units on a [0,1] scale
    double salt_pepper_prob = 0.0;      // per-pixel replacement probability
    DistortLevel level = DistortLevel::Custom;
};

// Draw concrete parameters from the named level's calibrated ranges.
DistortionSpec sample_spec(DistortLevel level, Rng& rng);

FeatureMap apply_distortion(const FeatureMap& clean, const DistortionSpec& spec, Rng& rng);

/// Procedural clean patch: smooth sinusoidal shading plus a few hard-edged
/// rectangles, values inside [0,1].  Deterministic under the rng.
FeatureMap synth_clean_patch(std::size_t side, std::size_t channels, Rng& rng);

struct Patch {
    FeatureMap clean;
    FeatureMap distorted;
};

struct PatchSet {
    std::vector<Patch> patches;
};

// Each patch gets its own parameter draw from the level, so a set mixes a
// range of degradation strengths.
PatchSet make_patch_set(std::size_t count, std::size_t side, std::size_t channels,
                        DistortLevel level, Rng& rng);

}  // namespace t1cl
