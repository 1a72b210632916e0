#include "t1cl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace t1cl {

AdamState make_adam_state(const std::vector<DenseTensor*>& params) {
    AdamState s;
    for (const DenseTensor* p : params) {
        s.m.push_back(DenseTensor::zeros(p->shape));
        s.v.push_back(DenseTensor::zeros(p->shape));
    }
    return s;
}

void adam_step(AdamState& state, const std::vector<DenseTensor*>& params,
               const std::vector<DenseTensor*>& grads, double lr) {
    if (params.size() != state.m.size() || grads.size() != params.size())
        throw std::invalid_argument("adam parameter/gradient lists do not match the state");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        DenseTensor& p = *params[i];
        const DenseTensor& g = *grads[i];
        DenseTensor& m = state.m[i];
        DenseTensor& v = state.v[i];
        if (p.shape != m.shape || g.shape != m.shape)
            throw std::invalid_argument("adam tensor shape drifted from the state");
        for (std::size_t t = 0; t < p.size(); ++t) {
            m.data[t] = kAdamBeta1 * m.data[t] + (1.0 - kAdamBeta1) * g.data[t];
            v.data[t] = kAdamBeta2 * v.data[t] + (1.0 - kAdamBeta2) * g.data[t] * g.data[t];
            const double mhat = m.data[t] / bc1;
            const double vhat = v.data[t] / bc2;
            p.data[t] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

double cosine_lr(std::size_t t, std::size_t total, double eta_max, double eta_min) {
    if (t > total) throw std::invalid_argument("cosine_lr step past the horizon");
    if (total == 0) return eta_max;
    const double phase = M_PI * static_cast<double>(t) / static_cast<double>(total);
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(phase));
}

}  // namespace t1cl
