#include "t1cl/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace t1cl {

const char* distort_level_name(DistortLevel level) {
    switch (level) {
        case DistortLevel::Mild: return "mild";
        case DistortLevel::Moderate: return "moderate";
        case DistortLevel::Severe: return "severe";
        case DistortLevel::Custom: return "custom";
    }
    return "?";
}

DistortLevel distort_level_from_name(const std::string& name) {
    for (int i = 0; i <= 3; ++i) {
        const DistortLevel l = static_cast<DistortLevel>(i);
        if (name == distort_level_name(l)) return l;
    }
    throw std::invalid_argument("unknown distortion level: " + name);
}

namespace {

struct Range {
    double lo, hi;
};

struct LevelRanges {
    Range blur, noise, sp;
};

// Calibrated for [0,1] images at desk scale; each named level draws uniformly
// from its band so a set mixes strengths.
LevelRanges level_ranges(DistortLevel level) {
    switch (level) {
        case DistortLevel::Mild: return {{0.5, 1.0}, {0.01, 0.03}, {0.0, 0.01}};
        case DistortLevel::Moderate: return {{1.0, 2.0}, {0.03, 0.06}, {0.01, 0.03}};
        case DistortLevel::Severe: return {{2.0, 3.0}, {0.06, 0.10}, {0.03, 0.06}};
        case DistortLevel::Custom: break;
    }
    throw std::invalid_argument("custom level has no ranges to sample");
}

FeatureMap blur5x5(const FeatureMap& in, double sigma) {
    double w[5][5];
    double total = 0.0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            const double d2 = static_cast<double>(dy * dy + dx * dx);
            w[dy + 2][dx + 2] = std::exp(-d2 / (2.0 * sigma * sigma));
            total += w[dy + 2][dx + 2];
        }
    for (auto& row : w)
        for (double& v : row) v /= total;

    const long H = static_cast<long>(in.height), W = static_cast<long>(in.width);
    FeatureMap out = FeatureMap::zeros(in.height, in.width, in.channels);
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            double* dst = out.pixel(y, x);
            for (int dy = -2; dy <= 2; ++dy) {
                const long sy = std::clamp(y + dy, 0L, H - 1);  // replicate edges
                for (int dx = -2; dx <= 2; ++dx) {
                    const long sx = std::clamp(x + dx, 0L, W - 1);
                    const double wt = w[dy + 2][dx + 2];
                    const double* src = in.pixel(sy, sx);
                    for (std::size_t c = 0; c < in.channels; ++c) dst[c] += wt * src[c];
                }
            }
        }
    }
    return out;
}

}  // namespace

DistortionSpec sample_spec(DistortLevel level, Rng& rng) {
    const LevelRanges r = level_ranges(level);
    DistortionSpec spec;
    spec.blur_sigma = rng.uniform(r.blur.lo, r.blur.hi);
    spec.gaussian_noise_sigma = rng.uniform(r.noise.lo, r.noise.hi);
    spec.salt_pepper_prob = rng.uniform(r.sp.lo, r.sp.hi);
    spec.level = level;
    return spec;
}

FeatureMap apply_distortion(const FeatureMap& clean, const DistortionSpec& spec, Rng& rng) {
    if (spec.blur_sigma < 0.0 || spec.gaussian_noise_sigma < 0.0 ||
        spec.salt_pepper_prob < 0.0 || spec.salt_pepper_prob > 1.0)
        throw std::invalid_argument("distortion parameters out of range");

    FeatureMap out = spec.blur_sigma > 0.0 ? blur5x5(clean, spec.blur_sigma) : clean;
    if (spec.gaussian_noise_sigma > 0.0)
        for (double& v : out.data.data) v += spec.gaussian_noise_sigma * rng.normal();
    if (spec.salt_pepper_prob > 0.0) {
        for (std::size_t px = 0; px < out.pixels(); ++px) {
            if (rng.next_unit() < spec.salt_pepper_prob) {
                const double v = rng.next_unit() < 0.5 ? 0.0 : 1.0;
                double* p = out.data.data.data() + px * out.channels;
                for (std::size_t c = 0; c < out.channels; ++c) p[c] = v;
            }
        }
    }
    for (double& v : out.data.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

FeatureMap synth_clean_patch(std::size_t side, std::size_t channels, Rng& rng) {
    std::vector<double> base(side * side, rng.uniform(0.25, 0.75));

    for (int wave = 0; wave < 3; ++wave) {
        const double amp = rng.uniform(0.05, 0.2);
        const double fy = rng.uniform(0.5, 3.0) / static_cast<double>(side);
        const double fx = rng.uniform(0.5, 3.0) / static_cast<double>(side);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x)
                base[y * side + x] +=
                    amp * std::sin(2.0 * M_PI *
                                       (fy * static_cast<double>(y) + fx * static_cast<double>(x)) +
                                   phase);
    }
    for (int rect = 0; rect < 2; ++rect) {
        std::size_t y0 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(side)));
        std::size_t x0 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(side)));
        std::size_t y1 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(side)));
        std::size_t x1 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(side)));
        if (y1 < y0) std::swap(y0, y1);
        if (x1 < x0) std::swap(x0, x1);
        const double off = rng.uniform(-0.25, 0.25);
        for (std::size_t y = y0; y <= y1 && y < side; ++y)
            for (std::size_t x = x0; x <= x1 && x < side; ++x) base[y * side + x] += off;
    }

    FeatureMap out = FeatureMap::zeros(side, side, channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const double tint = channels > 1 ? rng.uniform(-0.05, 0.05) : 0.0;
        for (std::size_t px = 0; px < side * side; ++px)
            out.data.data[px * channels + c] = std::clamp(base[px] + tint, 0.0, 1.0);
    }
    return out;
}

PatchSet make_patch_set(std::size_t count, std::size_t side, std::size_t channels,
                        DistortLevel level, Rng& rng) {
    PatchSet set;
    set.patches.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const DistortionSpec spec = sample_spec(level, rng);
        Patch p;
        p.clean = synth_clean_patch(side, channels, rng);
        p.distorted = apply_distortion(p.clean, spec, rng);
        set.patches.push_back(std::move(p));
    }
    return set;
}

}  // namespace t1cl
