#include "t1cl/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace t1cl {

double l1_loss(const FeatureMap& pred, const FeatureMap& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("l1_loss shape mismatch");
    double acc = 0.0;
    for (std::size_t t = 0; t < pred.data.size(); ++t)
        acc += std::abs(pred.data.data[t] - target.data.data[t]);
    return acc / static_cast<double>(pred.data.size());
}

double psnr(const FeatureMap& img, const FeatureMap& ref, double peak) {
    if (!img.same_shape(ref)) throw std::invalid_argument("psnr shape mismatch");
    double mse = 0.0;
    for (std::size_t t = 0; t < img.data.size(); ++t) {
        const double d = img.data.data[t] - ref.data.data[t];
        mse += d * d;
    }
    mse /= static_cast<double>(img.data.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(10.0 * std::log10(peak * peak / mse), kPsnrCap);
}

namespace {

double ssim_channel(const FeatureMap& a, const FeatureMap& b, std::size_t ch) {
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const std::size_t w = kSsimWindow;
    const double n = static_cast<double>(w * w);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t y0 = 0; y0 + w <= a.height; ++y0) {
        for (std::size_t x0 = 0; x0 + w <= a.width; ++x0) {
            double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (std::size_t dy = 0; dy < w; ++dy) {
                for (std::size_t dx = 0; dx < w; ++dx) {
                    const double va = a.pixel(y0 + dy, x0 + dx)[ch];
                    const double vb = b.pixel(y0 + dy, x0 + dx)[ch];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            const double mua = sa / n, mub = sb / n;
            const double vara = saa / n - mua * mua;
            const double varb = sbb / n - mub * mub;
            const double cov = sab / n - mua * mub;
            const double num = (2.0 * mua * mub + c1) * (2.0 * cov + c2);
            const double den = (mua * mua + mub * mub + c1) * (vara + varb + c2);
            total += num / den;
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

}  // namespace

double ssim(const FeatureMap& img, const FeatureMap& ref) {
    if (!img.same_shape(ref)) throw std::invalid_argument("ssim shape mismatch");
    if (img.height < kSsimWindow || img.width < kSsimWindow)
        throw std::invalid_argument("image smaller than the ssim window");
    double acc = 0.0;
    for (std::size_t ch = 0; ch < img.channels; ++ch) acc += ssim_channel(img, ref, ch);
    return acc / static_cast<double>(img.channels);
}

}  // namespace t1cl
