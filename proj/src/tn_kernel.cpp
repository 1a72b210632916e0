#include "t1cl/tn_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace t1cl {

const char* format_name(KernelFormat f) {
    switch (f) {
        case KernelFormat::CP: return "cp";
        case KernelFormat::TT: return "tt";
        case KernelFormat::TR: return "tr";
    }
    return "?";
}

namespace {

std::size_t expected_rank_count(KernelFormat f, std::size_t p) {
    switch (f) {
        case KernelFormat::CP: return 1;
        case KernelFormat::TT: return p - 1;
        case KernelFormat::TR: return p;
    }
    return 0;
}

std::size_t expected_stored_count(KernelFormat f, std::size_t p, bool shared) {
    if (p == 1) return 1;
    if (!shared) return p;
    switch (f) {
        case KernelFormat::CP: return 1;
        case KernelFormat::TT: return p == 2 ? 2 : 3;
        case KernelFormat::TR: return 1;
    }
    return 0;
}

bool uniform_ranks(const std::vector<std::size_t>& ranks) {
    for (std::size_t r : ranks)
        if (r != ranks.front()) return false;
    return true;
}

// Bond dimensions d[0..p] around the p positions.  TT pads both ends with 1,
// TR closes the chain (d[p] == d[0]).  CP callers never use this.
std::vector<std::size_t> bond_dims(const TnKernel& k) {
    std::vector<std::size_t> d(k.order + 1, 1);
    if (k.format == KernelFormat::TT) {
        for (std::size_t t = 1; t < k.order; ++t) d[t] = k.ranks[t - 1];
    } else if (k.format == KernelFormat::TR) {
        for (std::size_t t = 0; t < k.order; ++t) d[t] = k.ranks[t];
        d[k.order] = k.ranks[0];
    }
    return d;
}

// out[t0..t0+TILE) = sum_i x[i] * core[i, t0+..], accumulated in registers so
// the partial sums never round-trip through memory.  Same i-ascending order as
// the plain loop, so results are bit-identical to it.
template <std::size_t TILE>
void project_tile(const double* g, const double* x, std::size_t in_dim, std::size_t block,
                  std::size_t t0, double* out) {
    double acc[TILE] = {0.0};
    const double* row = g + t0;
    for (std::size_t i = 0; i < in_dim; ++i, row += block) {
        const double xi = x[i];
        for (std::size_t t = 0; t < TILE; ++t) acc[t] += xi * row[t];
    }
    for (std::size_t t = 0; t < TILE; ++t) out[t0 + t] = acc[t];
}

// out[t] = sum_i x[i] * core[i, t] over the flattened trailing block.
void project_core(const DenseTensor& core, const double* x, std::size_t in_dim, double* out,
                  std::uint64_t* mc) {
    const std::size_t block = core.size() / in_dim;
    const double* g = core.data.data();
    std::size_t t0 = 0;
    for (; t0 + 64 <= block; t0 += 64) project_tile<64>(g, x, in_dim, block, t0, out);
    for (; t0 + 16 <= block; t0 += 16) project_tile<16>(g, x, in_dim, block, t0, out);
    for (; t0 + 4 <= block; t0 += 4) project_tile<4>(g, x, in_dim, block, t0, out);
    for (; t0 < block; ++t0) project_tile<1>(g, x, in_dim, block, t0, out);
    if (mc) *mc += static_cast<std::uint64_t>(in_dim) * block;
}

// Sizes s.proj/s.offsets for the kernel's stored cores; offsets gains
// stored_count+1 entries delimiting each block.  Returns the total length.
std::size_t proj_layout(const TnKernel& k, ContractScratch& s) {
    s.offsets.assign(1, 0);
    std::size_t total = 0;
    for (const DenseTensor& c : k.cores) {
        total += c.size() / k.in_dim;
        s.offsets.push_back(total);
    }
    s.proj.resize(total);
    return total;
}

// Projections of every stored core, concatenated.
void project_all(const TnKernel& k, const double* x, ContractScratch& s, std::uint64_t* mc) {
    proj_layout(k, s);
    for (std::size_t slot = 0; slot < k.cores.size(); ++slot)
        project_core(k.cores[slot], x, k.in_dim, s.proj.data() + s.offsets[slot], mc);
}

void contract_cp(const TnKernel& k, ContractScratch& s, double* y, std::uint64_t* mc) {
    const std::size_t R = k.ranks[0];
    const std::size_t J = k.out_dim;
    const std::size_t RJ = R * J;
    s.chain.resize(RJ);
    double* prod = s.chain.data();
    const double* proj = s.proj.data();
    if (k.shared) {
        for (std::size_t t = 0; t < RJ; ++t) {
            const double v = proj[t];
            double acc = v;
            for (std::size_t q = 1; q < k.order; ++q) acc *= v;
            prod[t] = acc;
        }
    } else {
        std::copy(proj, proj + RJ, prod);
        for (std::size_t slot = 1; slot < k.order; ++slot) {
            const double* ps = proj + s.offsets[slot];
            for (std::size_t t = 0; t < RJ; ++t) prod[t] *= ps[t];
        }
    }
    if (mc) *mc += static_cast<std::uint64_t>(k.order - 1) * RJ;
    for (std::size_t j = 0; j < J; ++j) y[j] = 0.0;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < J; ++j) y[j] += prod[r * J + j];
}

void contract_chain(const TnKernel& k, ContractScratch& s, double* y, std::uint64_t* mc) {
    const std::size_t p = k.order;
    const std::size_t J = k.out_dim;
    const std::vector<std::size_t> d = bond_dims(k);
    const std::size_t d0 = d[0];
    const std::size_t maxd = *std::max_element(d.begin(), d.end());
    s.chain.resize(2 * d0 * maxd);
    double* cur = s.chain.data();
    double* nxt = cur + d0 * maxd;
    std::uint64_t muls = 0;
    for (std::size_t j = 0; j < J; ++j) {
        const double* p0 = s.proj.data() + s.offsets[k.core_index(0)];
        for (std::size_t t = 0; t < d0 * d[1]; ++t) cur[t] = p0[t * J + j];
        for (std::size_t pos = 1; pos < p; ++pos) {
            const double* pk = s.proj.data() + s.offsets[k.core_index(pos)];
            const std::size_t a = d[pos];
            const std::size_t b = d[pos + 1];
            for (std::size_t u = 0; u < d0; ++u)
                for (std::size_t w = 0; w < b; ++w) {
                    double acc = 0.0;
                    for (std::size_t v = 0; v < a; ++v)
                        acc += cur[u * a + v] * pk[(v * b + w) * J + j];
                    nxt[u * b + w] = acc;
                }
            muls += d0 * a * b;
            std::swap(cur, nxt);
        }
        double tr = 0.0;
        for (std::size_t u = 0; u < d0; ++u) tr += cur[u * d0 + u];
        y[j] = tr;
    }
    if (mc) *mc += muls;
}

void grad_cp(const TnKernel& k, const double* x, const double* up, ContractScratch& s) {
    const std::size_t R = k.ranks[0];
    const std::size_t J = k.out_dim;
    const std::size_t RJ = R * J;
    const double* proj = s.proj.data();
    s.dproj.assign(s.proj.size(), 0.0);
    if (k.shared) {
        const double p = static_cast<double>(k.order);
        for (std::size_t t = 0; t < RJ; ++t) {
            const double v = proj[t];
            double pw = 1.0;
            for (std::size_t q = 1; q < k.order; ++q) pw *= v;
            s.dproj[t] = p * pw * up[t % J];
        }
        return;
    }
    s.prefix.resize(k.order * RJ);
    s.suffix.resize(k.order * RJ);
    std::fill(s.prefix.begin(), s.prefix.begin() + RJ, 1.0);
    for (std::size_t slot = 1; slot < k.order; ++slot) {
        const double* prev = s.prefix.data() + (slot - 1) * RJ;
        const double* ps = proj + s.offsets[slot - 1];
        double* out = s.prefix.data() + slot * RJ;
        for (std::size_t t = 0; t < RJ; ++t) out[t] = prev[t] * ps[t];
    }
    std::fill(s.suffix.begin() + (k.order - 1) * RJ, s.suffix.end(), 1.0);
    for (std::size_t slot = k.order - 1; slot-- > 0;) {
        const double* nxt = s.suffix.data() + (slot + 1) * RJ;
        const double* ps = proj + s.offsets[slot + 1];
        double* out = s.suffix.data() + slot * RJ;
        for (std::size_t t = 0; t < RJ; ++t) out[t] = nxt[t] * ps[t];
    }
    for (std::size_t slot = 0; slot < k.order; ++slot) {
        const double* pre = s.prefix.data() + slot * RJ;
        const double* suf = s.suffix.data() + slot * RJ;
        double* dp = s.dproj.data() + s.offsets[slot];
        for (std::size_t t = 0; t < RJ; ++t) dp[t] = up[t % J] * pre[t] * suf[t];
    }
}

void grad_chain(const TnKernel& k, const double* up, ContractScratch& s) {
    const std::size_t p = k.order;
    const std::size_t J = k.out_dim;
    const std::vector<std::size_t> d = bond_dims(k);
    const std::size_t d0 = d[0];
    const std::size_t maxd = *std::max_element(d.begin(), d.end());
    const std::size_t stride = d0 * maxd;
    s.prefix.resize((p + 1) * stride);
    s.suffix.resize((p + 1) * stride);
    s.chain.resize(maxd * maxd);
    s.dproj.assign(s.proj.size(), 0.0);
    for (std::size_t j = 0; j < J; ++j) {
        const double uj = up[j];
        // prefix[k] = A_0 … A_{k-1}, a d0 × d[k] matrix (identity at k = 0)
        double* pre0 = s.prefix.data();
        std::fill(pre0, pre0 + d0 * d0, 0.0);
        for (std::size_t u = 0; u < d0; ++u) pre0[u * d0 + u] = 1.0;
        for (std::size_t pos = 1; pos <= p; ++pos) {
            const double* pk = s.proj.data() + s.offsets[k.core_index(pos - 1)];
            const std::size_t a = d[pos - 1];
            const std::size_t b = d[pos];
            const double* prev = s.prefix.data() + (pos - 1) * stride;
            double* out = s.prefix.data() + pos * stride;
            for (std::size_t u = 0; u < d0; ++u)
                for (std::size_t w = 0; w < b; ++w) {
                    double acc = 0.0;
                    for (std::size_t v = 0; v < a; ++v)
                        acc += prev[u * a + v] * pk[(v * b + w) * J + j];
                    out[u * b + w] = acc;
                }
        }
        // suffix[k] = A_k … A_{p-1}, a d[k] × d0 matrix (identity at k = p)
        double* sufp = s.suffix.data() + p * stride;
        std::fill(sufp, sufp + d0 * d0, 0.0);
        for (std::size_t u = 0; u < d0; ++u) sufp[u * d0 + u] = 1.0;
        for (std::size_t pos = p; pos-- > 0;) {
            const double* pk = s.proj.data() + s.offsets[k.core_index(pos)];
            const std::size_t a = d[pos];
            const std::size_t b = d[pos + 1];
            const double* nxt = s.suffix.data() + (pos + 1) * stride;
            double* out = s.suffix.data() + pos * stride;
            for (std::size_t u = 0; u < a; ++u)
                for (std::size_t w = 0; w < d0; ++w) {
                    double acc = 0.0;
                    for (std::size_t v = 0; v < b; ++v)
                        acc += pk[(u * b + v) * J + j] * nxt[v * d0 + w];
                    out[u * d0 + w] = acc;
                }
        }
        // d⟨u,y⟩/dA_pos = u_j · (suffix[pos+1] · prefix[pos])ᵀ
        for (std::size_t pos = 0; pos < p; ++pos) {
            const std::size_t a = d[pos];
            const std::size_t b = d[pos + 1];
            const double* pre = s.prefix.data() + pos * stride;
            const double* suf = s.suffix.data() + (pos + 1) * stride;
            double* t = s.chain.data();
            for (std::size_t u = 0; u < b; ++u)
                for (std::size_t w = 0; w < a; ++w) {
                    double acc = 0.0;
                    for (std::size_t v = 0; v < d0; ++v)
                        acc += suf[u * d0 + v] * pre[v * a + w];
                    t[u * a + w] = acc;
                }
            double* dp = s.dproj.data() + s.offsets[k.core_index(pos)];
            for (std::size_t u = 0; u < a; ++u)
                for (std::size_t w = 0; w < b; ++w)
                    dp[(u * b + w) * J + j] += uj * t[w * a + u];
        }
    }
}

}  // namespace

std::size_t TnKernel::core_index(std::size_t position) const {
    if (order == 1) return 0;
    switch (format) {
        case KernelFormat::CP: return shared ? 0 : position;
        case KernelFormat::TR: return shared ? 0 : position;
        case KernelFormat::TT:
            if (!shared) return position;
            if (order == 2) return position;
            if (position == 0) return 0;
            if (position == order - 1) return 2;
            return 1;
    }
    return 0;
}

std::size_t TnKernel::left_rank(std::size_t position) const {
    switch (format) {
        case KernelFormat::CP: return ranks[0];
        case KernelFormat::TT: return position == 0 ? 1 : ranks[position - 1];
        case KernelFormat::TR: return ranks[position];
    }
    return 0;
}

std::size_t TnKernel::right_rank(std::size_t position) const {
    switch (format) {
        case KernelFormat::CP: return ranks[0];
        case KernelFormat::TT: return position == order - 1 ? 1 : ranks[position];
        case KernelFormat::TR: return ranks[(position + 1) % order];
    }
    return 0;
}

std::vector<std::size_t> TnKernel::stored_core_shape(std::size_t slot) const {
    if (format == KernelFormat::CP) return {in_dim, ranks[0], out_dim};
    if (order == 1) {
        if (format == KernelFormat::TT) return {in_dim, out_dim};
        return {in_dim, ranks[0], ranks[0], out_dim};
    }
    if (format == KernelFormat::TR) {
        const std::size_t pos = shared ? 0 : slot;
        return {in_dim, ranks[pos], ranks[(pos + 1) % order], out_dim};
    }
    // TT, p >= 2
    std::size_t pos = slot;
    if (shared && order > 2) pos = (slot == 0) ? 0 : (slot == 2 ? order - 1 : 1);
    if (pos == 0) return {in_dim, ranks[0], out_dim};
    if (pos == order - 1) return {in_dim, ranks[order - 2], out_dim};
    return {in_dim, ranks[pos - 1], ranks[pos], out_dim};
}

void validate_kernel(const TnKernel& k) {
    if (k.order == 0) throw std::invalid_argument("kernel order must be positive");
    if (k.in_dim == 0 || k.out_dim == 0)
        throw std::invalid_argument("kernel channel dims must be positive");
    if (k.ranks.size() != expected_rank_count(k.format, k.order))
        throw std::invalid_argument("kernel rank count does not match format");
    for (std::size_t r : k.ranks)
        if (r == 0) throw std::invalid_argument("kernel ranks must be positive");
    if (k.shared && k.order > 2 && !uniform_ranks(k.ranks)) {
        if (k.format == KernelFormat::TR)
            throw std::invalid_argument("shared tr kernel requires uniform ranks");
        if (k.format == KernelFormat::TT)
            throw std::invalid_argument("shared tt kernel requires uniform ranks");
    }
    if (k.shared && k.format == KernelFormat::TR && !uniform_ranks(k.ranks))
        throw std::invalid_argument("shared tr kernel requires uniform ranks");
    if (k.cores.size() != expected_stored_count(k.format, k.order, k.shared))
        throw std::invalid_argument("kernel stored core count does not match format");
    for (std::size_t slot = 0; slot < k.cores.size(); ++slot)
        if (k.cores[slot].shape != k.stored_core_shape(slot))
            throw std::invalid_argument("kernel core shape does not match format");
}

TnKernel init_kernel(KernelFormat format, std::size_t order, std::size_t in_dim,
                     std::size_t out_dim, std::vector<std::size_t> ranks, bool shared,
                     Rng& rng) {
    TnKernel k;
    k.format = format;
    k.order = order;
    k.in_dim = in_dim;
    k.out_dim = out_dim;
    k.ranks = std::move(ranks);
    k.shared = shared;
    if (order == 0) throw std::invalid_argument("kernel order must be positive");
    if (in_dim == 0 || out_dim == 0)
        throw std::invalid_argument("kernel channel dims must be positive");
    if (k.ranks.size() != expected_rank_count(format, order))
        throw std::invalid_argument("kernel rank count does not match format");
    std::size_t max_rank = 1;
    for (std::size_t r : k.ranks) max_rank = std::max(max_rank, r);
    const double p = static_cast<double>(order);
    const double s = std::pow(1.0 / static_cast<double>(in_dim), 1.0 / p) *
                     std::pow(static_cast<double>(max_rank), -1.0 / (2.0 * p));
    const std::size_t stored = expected_stored_count(format, order, shared);
    for (std::size_t slot = 0; slot < stored; ++slot)
        k.cores.push_back(rng_uniform(rng, k.stored_core_shape(slot), -s, s));
    validate_kernel(k);
    return k;
}

DenseTensor reconstruct_dense(const TnKernel& k) {
    validate_kernel(k);
    constexpr std::size_t kGuard = 10'000'000;
    double entries = static_cast<double>(k.out_dim);
    for (std::size_t q = 0; q < k.order; ++q) entries *= static_cast<double>(k.in_dim);
    if (entries > static_cast<double>(kGuard))
        throw std::length_error("dense kernel exceeds reconstruction guard");

    std::vector<std::size_t> shape(k.order + 1, k.in_dim);
    shape.back() = k.out_dim;
    DenseTensor w = DenseTensor::zeros(shape);

    const std::size_t p = k.order;
    const std::size_t J = k.out_dim;
    std::vector<std::size_t> idx(p, 0);
    const std::vector<std::size_t> d = bond_dims(k);
    const std::size_t d0 = d[0];
    std::vector<double> cur, nxt;
    std::size_t flat = 0;
    while (true) {
        for (std::size_t j = 0; j < J; ++j) {
            double val = 0.0;
            if (k.format == KernelFormat::CP) {
                const std::size_t R = k.ranks[0];
                for (std::size_t r = 0; r < R; ++r) {
                    double prod = 1.0;
                    for (std::size_t pos = 0; pos < p; ++pos)
                        prod *= k.core(pos).data[(idx[pos] * R + r) * J + j];
                    val += prod;
                }
            } else {
                cur.assign(d0 * d[1], 0.0);
                const DenseTensor& g0 = k.core(0);
                for (std::size_t t = 0; t < d0 * d[1]; ++t)
                    cur[t] = g0.data[(idx[0] * d0 * d[1] + t) * J + j];
                for (std::size_t pos = 1; pos < p; ++pos) {
                    const DenseTensor& g = k.core(pos);
                    const std::size_t a = d[pos];
                    const std::size_t b = d[pos + 1];
                    nxt.assign(d0 * b, 0.0);
                    for (std::size_t u = 0; u < d0; ++u)
                        for (std::size_t w2 = 0; w2 < b; ++w2) {
                            double acc = 0.0;
                            for (std::size_t v = 0; v < a; ++v)
                                acc += cur[u * a + v] * g.data[((idx[pos] * a + v) * b + w2) * J + j];
                            nxt[u * b + w2] = acc;
                        }
                    cur.swap(nxt);
                }
                for (std::size_t u = 0; u < d0; ++u) val += cur[u * d0 + u];
            }
            w.data[flat * J + j] = val;
        }
        ++flat;
        std::size_t q = p;
        while (q > 0) {
            --q;
            if (++idx[q] < k.in_dim) break;
            idx[q] = 0;
            if (q == 0) return w;
        }
    }
}

void contract_into(const TnKernel& k, const double* x, double* y, ContractScratch& scratch,
                   std::uint64_t* mul_count) {
    project_all(k, x, scratch, mul_count);
    if (k.format == KernelFormat::CP)
        contract_cp(k, scratch, y, mul_count);
    else
        contract_chain(k, scratch, y, mul_count);
}

DenseTensor contract(const TnKernel& k, const DenseTensor& x, ContractScratch* scratch,
                     std::uint64_t* mul_count) {
    validate_kernel(k);
    if (x.rank() != 1 || x.shape[0] != k.in_dim)
        throw std::invalid_argument("contract input must be rank-1 of length in_dim");
    ContractScratch local;
    ContractScratch& s = scratch ? *scratch : local;
    DenseTensor y = DenseTensor::zeros({k.out_dim});
    contract_into(k, x.data.data(), y.data.data(), s, mul_count);
    return y;
}

DenseTensor contract_per_mode(const TnKernel& k, const std::vector<DenseTensor>& xs) {
    validate_kernel(k);
    if (xs.size() != k.order)
        throw std::invalid_argument("contract_per_mode needs one input per mode");
    for (const DenseTensor& x : xs)
        if (x.rank() != 1 || x.shape[0] != k.in_dim)
            throw std::invalid_argument("contract_per_mode input must be rank-1 of length in_dim");

    const std::size_t p = k.order;
    const std::size_t J = k.out_dim;
    // per-position projections (sharing cannot collapse them: inputs differ)
    std::vector<std::vector<double>> proj(p);
    for (std::size_t pos = 0; pos < p; ++pos) {
        const DenseTensor& core = k.core(pos);
        const std::size_t block = core.size() / k.in_dim;
        proj[pos].assign(block, 0.0);
        for (std::size_t i = 0; i < k.in_dim; ++i) {
            const double xi = xs[pos].data[i];
            const double* row = core.data.data() + i * block;
            for (std::size_t t = 0; t < block; ++t) proj[pos][t] += xi * row[t];
        }
    }

    DenseTensor y = DenseTensor::zeros({J});
    if (k.format == KernelFormat::CP) {
        const std::size_t R = k.ranks[0];
        for (std::size_t j = 0; j < J; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                double prod = 1.0;
                for (std::size_t pos = 0; pos < p; ++pos) prod *= proj[pos][r * J + j];
                acc += prod;
            }
            y.data[j] = acc;
        }
        return y;
    }
    const std::vector<std::size_t> d = bond_dims(k);
    const std::size_t d0 = d[0];
    std::vector<double> cur, nxt;
    for (std::size_t j = 0; j < J; ++j) {
        cur.assign(d0 * d[1], 0.0);
        for (std::size_t t = 0; t < d0 * d[1]; ++t) cur[t] = proj[0][t * J + j];
        for (std::size_t pos = 1; pos < p; ++pos) {
            const std::size_t a = d[pos];
            const std::size_t b = d[pos + 1];
            nxt.assign(d0 * b, 0.0);
            for (std::size_t u = 0; u < d0; ++u)
                for (std::size_t w = 0; w < b; ++w) {
                    double acc = 0.0;
                    for (std::size_t v = 0; v < a; ++v)
                        acc += cur[u * a + v] * proj[pos][(v * b + w) * J + j];
                    nxt[u * b + w] = acc;
                }
            cur.swap(nxt);
        }
        double tr = 0.0;
        for (std::size_t u = 0; u < d0; ++u) tr += cur[u * d0 + u];
        y.data[j] = tr;
    }
    return y;
}

void contract_grad_accum(const TnKernel& k, const double* x, const double* upstream,
                         std::vector<DenseTensor>& core_grads, double* grad_x,
                         ContractScratch& scratch, const double* proj) {
    if (core_grads.size() != k.cores.size())
        throw std::invalid_argument("core gradient buffer count mismatch");
    for (std::size_t slot = 0; slot < k.cores.size(); ++slot)
        if (core_grads[slot].shape != k.cores[slot].shape)
            throw std::invalid_argument("core gradient buffer shape mismatch");

    if (proj) {
        const std::size_t total = proj_layout(k, scratch);
        std::copy(proj, proj + total, scratch.proj.data());
    } else {
        project_all(k, x, scratch, nullptr);
    }
    if (k.format == KernelFormat::CP)
        grad_cp(k, x, upstream, scratch);
    else
        grad_chain(k, upstream, scratch);

    // dcore[i, t] += x[i] · dproj[t];  dx[i] += Σ_t dproj[t] · core[i, t].
    // The simd pragma licenses a vectorized (reassociated) dot reduction; the
    // serial chain was the bottleneck of the whole backward pass.
    for (std::size_t slot = 0; slot < k.cores.size(); ++slot) {
        const std::size_t block = k.cores[slot].size() / k.in_dim;
        const double* __restrict dp = scratch.dproj.data() + scratch.offsets[slot];
        const double* __restrict g = k.cores[slot].data.data();
        double* __restrict dg = core_grads[slot].data.data();
        for (std::size_t i = 0; i < k.in_dim; ++i) {
            const double xi = x[i];
            const double* __restrict grow = g + i * block;
            double* __restrict drow = dg + i * block;
            double dot = 0.0;
#pragma omp simd reduction(+ : dot)
            for (std::size_t t = 0; t < block; ++t) {
                drow[t] += xi * dp[t];
                dot += dp[t] * grow[t];
            }
            grad_x[i] += dot;
        }
    }
}

KernelGrad contract_grad(const TnKernel& k, const DenseTensor& x, const DenseTensor& upstream) {
    validate_kernel(k);
    if (x.rank() != 1 || x.shape[0] != k.in_dim)
        throw std::invalid_argument("contract input must be rank-1 of length in_dim");
    if (upstream.rank() != 1 || upstream.shape[0] != k.out_dim)
        throw std::invalid_argument("upstream must be rank-1 of length out_dim");
    KernelGrad g;
    for (const DenseTensor& c : k.cores) g.cores.push_back(DenseTensor::zeros(c.shape));
    g.x = DenseTensor::zeros({k.in_dim});
    ContractScratch scratch;
    contract_grad_accum(k, x.data.data(), upstream.data.data(), g.cores, g.x.data.data(),
                        scratch);
    return g;
}

std::size_t param_count(const TnKernel& k) {
    std::size_t n = 0;
    for (const DenseTensor& c : k.cores) n += c.size();
    return n;
}

std::uint64_t flop_count(const TnKernel& k) {
    const std::uint64_t I = k.in_dim;
    const std::uint64_t J = k.out_dim;
    if (k.format == KernelFormat::CP) {
        const std::uint64_t R = k.ranks[0];
        const std::uint64_t proj = (k.shared ? 1 : k.order) * I * R * J;
        return proj + static_cast<std::uint64_t>(k.order - 1) * R * J;
    }
    std::uint64_t proj = 0;
    for (const DenseTensor& c : k.cores) proj += c.size();
    const std::vector<std::size_t> d = bond_dims(k);
    std::uint64_t chain = 0;
    for (std::size_t pos = 1; pos < k.order; ++pos)
        chain += static_cast<std::uint64_t>(d[0]) * d[pos] * d[pos + 1];
    return proj + J * chain;
}

std::uint64_t dense_flop_count(std::size_t order, std::size_t in_dim, std::size_t out_dim) {
    std::uint64_t n = out_dim;
    for (std::size_t q = 0; q < order; ++q) {
        if (in_dim != 0 && n > UINT64_MAX / in_dim)
            throw std::overflow_error("dense flop count overflows");
        n *= in_dim;
    }
    return n;
}

void save_kernel(std::ostream& out, const TnKernel& k) {
    validate_kernel(k);
    write_u8(out, static_cast<std::uint8_t>(k.format));
    write_u32(out, static_cast<std::uint32_t>(k.order));
    write_u32(out, static_cast<std::uint32_t>(k.in_dim));
    write_u32(out, static_cast<std::uint32_t>(k.out_dim));
    write_u32(out, static_cast<std::uint32_t>(k.ranks.size()));
    for (std::size_t r : k.ranks) write_u32(out, static_cast<std::uint32_t>(r));
    write_u8(out, k.shared ? 1 : 0);
    for (const DenseTensor& c : k.cores) save_tensor(out, c);
    if (!out) throw io_error("failed to write kernel");
}

TnKernel load_kernel(std::istream& in) {
    TnKernel k;
    const std::uint8_t tag = read_u8(in);
    if (tag > 2) throw io_error("unknown kernel format tag");
    k.format = static_cast<KernelFormat>(tag);
    k.order = read_u32(in);
    k.in_dim = read_u32(in);
    k.out_dim = read_u32(in);
    if (k.order == 0 || k.in_dim == 0 || k.out_dim == 0)
        throw io_error("corrupt kernel header");
    const std::uint32_t nranks = read_u32(in);
    if (nranks != expected_rank_count(k.format, k.order))
        throw io_error("kernel rank count does not match format");
    for (std::uint32_t t = 0; t < nranks; ++t) {
        const std::uint32_t r = read_u32(in);
        if (r == 0) throw io_error("corrupt kernel header");
        k.ranks.push_back(r);
    }
    const std::uint8_t sh = read_u8(in);
    if (sh > 1) throw io_error("corrupt kernel header");
    k.shared = sh == 1;
    const std::size_t stored = expected_stored_count(k.format, k.order, k.shared);
    for (std::size_t slot = 0; slot < stored; ++slot) {
        DenseTensor c = load_tensor(in);
        if (c.shape != k.stored_core_shape(slot)) throw io_error("kernel core shape mismatch");
        k.cores.push_back(std::move(c));
    }
    return k;
}

}  // namespace t1cl
