#include "t1cl/layer.hpp"

#include <stdexcept>

namespace t1cl {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
    }
    return "?";
}

FeatureMap FeatureMap::zeros(std::size_t h, std::size_t w, std::size_t c) {
    FeatureMap m;
    m.height = h;
    m.width = w;
    m.channels = c;
    m.data = DenseTensor::zeros({h, w, c});
    return m;
}

FeatureMap FeatureMap::from_tensor(DenseTensor t) {
    if (t.rank() != 3) throw std::invalid_argument("feature map tensor must be rank-3");
    FeatureMap m;
    m.height = t.shape[0];
    m.width = t.shape[1];
    m.channels = t.shape[2];
    m.data = std::move(t);
    return m;
}

FeatureMap layer_forward(const T1clLayer& layer, const FeatureMap& in, LayerCache& cache) {
    if (in.channels != layer.in_channels())
        throw std::invalid_argument("layer input channel count mismatch");
    const std::size_t I = layer.kernel.in_dim;
    const std::size_t J = layer.kernel.out_dim;
    const std::size_t n = in.pixels();

    std::size_t L = 0;
    for (const DenseTensor& c : layer.kernel.cores) L += c.size() / I;

    cache.height = in.height;
    cache.width = in.width;
    cache.in_dim = I;
    cache.out_dim = J;
    cache.aug.resize(n * I);
    cache.pre.resize(n * J);
    cache.proj.resize(n * L);

    FeatureMap out = FeatureMap::zeros(in.height, in.width, J);
    ContractScratch scratch;
    const double* src = in.data.data.data();
    for (std::size_t px = 0; px < n; ++px) {
        double* xa = cache.aug.data() + px * I;
        for (std::size_t c = 0; c < in.channels; ++c) xa[c] = src[px * in.channels + c];
        if (layer.add_one) xa[I - 1] = 1.0;
        double* pre = cache.pre.data() + px * J;
        contract_into(layer.kernel, xa, pre, scratch);
        std::copy(scratch.proj.begin(), scratch.proj.end(), cache.proj.begin() + px * L);
        double* dst = out.data.data.data() + px * J;
        for (std::size_t j = 0; j < J; ++j) dst[j] = activate(layer.activation, pre[j]);
    }
    return out;
}

LayerGrads layer_backward(const T1clLayer& layer, const LayerCache& cache,
                          const FeatureMap& upstream) {
    const std::size_t I = layer.kernel.in_dim;
    const std::size_t J = layer.kernel.out_dim;
    const std::size_t n = cache.height * cache.width;
    if (cache.in_dim != I || cache.out_dim != J || cache.aug.size() != n * I ||
        cache.pre.size() != n * J)
        throw std::logic_error("layer cache does not match layer");
    if (upstream.height != cache.height || upstream.width != cache.width ||
        upstream.channels != J)
        throw std::logic_error("upstream shape does not match cached forward pass");

    LayerGrads g;
    for (const DenseTensor& c : layer.kernel.cores) g.cores.push_back(DenseTensor::zeros(c.shape));
    const std::size_t cin = layer.in_channels();
    g.input = FeatureMap::zeros(cache.height, cache.width, cin);

    std::size_t L = 0;
    for (const DenseTensor& c : layer.kernel.cores) L += c.size() / I;
    const bool cached_proj = cache.proj.size() == n * L;

    ContractScratch scratch;
    std::vector<double> dpre(J);
    std::vector<double> dx(I);
    for (std::size_t px = 0; px < n; ++px) {
        const double* pre = cache.pre.data() + px * J;
        const double* up = upstream.data.data.data() + px * J;
        for (std::size_t j = 0; j < J; ++j)
            dpre[j] = up[j] * activate_grad(layer.activation, pre[j]);
        std::fill(dx.begin(), dx.end(), 0.0);
        contract_grad_accum(layer.kernel, cache.aug.data() + px * I, dpre.data(), g.cores,
                            dx.data(), scratch,
                            cached_proj ? cache.proj.data() + px * L : nullptr);
        double* gin = g.input.data.data.data() + px * cin;
        for (std::size_t c = 0; c < cin; ++c) gin[c] = dx[c];
    }
    return g;
}

}  // namespace t1cl
