#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "t1cl/tensor.hpp"

namespace t1cl {

enum class KernelFormat : std::uint8_t { CP = 0, TT = 1, TR = 2 };

const char* format_name(KernelFormat f);

/// Factorized order-p channel-fusion kernel with in_dim inputs per mode and
/// out_dim outputs.  Core shapes per format (position k is 0-based):
///   CP: [I, R, J]
///   TT: boundary cores [I, r, J], interior cores [I, r_left, r_right, J];
///       a single [I, J] core when p == 1
///   TR: [I, r_left, r_right, J] with the rank chain closing on itself
/// With shared=true only one tensor per shape class is stored (CP: one core;
/// TR: one core, uniform ranks required; TT: left boundary, interior, right
/// boundary) and every position resolves to its class's tensor.
struct TnKernel {
    KernelFormat format = KernelFormat::CP;
    std::size_t order = 1;
    std::size_t in_dim = 1;
    std::size_t out_dim = 1;
    std::vector<std::size_t> ranks;  // CP: [R]; TT: [r1..r_{p-1}]; TR: [r0..r_{p-1}]
    bool shared = false;
    std::vector<DenseTensor> cores;  // stored cores only

    std::size_t stored_count() const { return cores.size(); }
    // Stored-core slot used by position k.
    std::size_t core_index(std::size_t position) const;
    const DenseTensor& core(std::size_t position) const { return cores[core_index(position)]; }

    // Rank to the left/right of position k (1 at TT boundaries; TR wraps).
    std::size_t left_rank(std::size_t position) const;
    std::size_t right_rank(std::size_t position) const;
    // Shape the stored core in the given slot must have.
    std::vector<std::size_t> stored_core_shape(std::size_t slot) const;
};

// Throws invalid_argument if shapes/ranks are inconsistent with the format.
void validate_kernel(const TnKernel& k);

// Cores filled i.i.d. uniform in [-s, s], s = (1/I)^(1/p) * R^(-1/(2p)) with
// R the largest rank; deterministic under the rng seed.
TnKernel init_kernel(KernelFormat format, std::size_t order, std::size_t in_dim,
                     std::size_t out_dim, std::vector<std::size_t> ranks, bool shared,
                     Rng& rng);

// Explicit [I,...,I,J] kernel; guarded by I^p * J <= 10^7 entries.
DenseTensor reconstruct_dense(const TnKernel& k);

// Reusable scratch for contract/contract_grad so per-pixel callers avoid
// reallocation.  Contents are meaningless between calls.
struct ContractScratch {
    std::vector<double> proj;          // per stored core projections, concatenated
    std::vector<double> chain;         // forward chain values
    std::vector<double> prefix;        // per-position prefix products
    std::vector<double> suffix;        // per-position suffix products
    std::vector<double> dproj;         // gradient wrt projections
    std::vector<std::size_t> offsets;  // projection offset per stored core
};

// y[j] = full contraction of the kernel against x repeated over every mode,
// computed without densifying.  mul_count, when given, accumulates the exact
// number of double multiplications performed (flop_count reports the same
// number in closed form).
DenseTensor contract(const TnKernel& k, const DenseTensor& x,
                     ContractScratch* scratch = nullptr,
                     std::uint64_t* mul_count = nullptr);

// Raw-pointer form used per pixel by the fusion layer: x has in_dim entries,
// y out_dim.  No argument validation.
void contract_into(const TnKernel& k, const double* x, double* y, ContractScratch& scratch,
                   std::uint64_t* mul_count = nullptr);

// Contraction with an independent rank-1 input per mode (xs.size() == order,
// each of length in_dim).  Equals contract() when every entry of xs is the
// same vector; the block decomposition uses it to isolate cross terms.
DenseTensor contract_per_mode(const TnKernel& k, const std::vector<DenseTensor>& xs);

struct KernelGrad {
    std::vector<DenseTensor> cores;  // one per stored core
    DenseTensor x;                   // rank-1, length in_dim
};

// Gradient of <upstream, contract(k, x)> wrt every stored core and wrt x.
// Shared cores accumulate the contributions of all positions using them.
KernelGrad contract_grad(const TnKernel& k, const DenseTensor& x, const DenseTensor& upstream);

// Accumulating form: adds into core_grads (sized like k.cores) and grad_x
// (length in_dim).  Used per pixel by the fusion layer.  proj, when given,
// supplies the forward projections (layout of ContractScratch::proj) so the
// backward pass skips recomputing them.
void contract_grad_accum(const TnKernel& k, const double* x, const double* upstream,
                         std::vector<DenseTensor>& core_grads, double* grad_x,
                         ContractScratch& scratch, const double* proj = nullptr);

// Exact number of stored scalars (sum of stored core sizes).
std::size_t param_count(const TnKernel& k);

// Exact multiplication count of contract() as implemented.
std::uint64_t flop_count(const TnKernel& k);

// Multiplicative lower bound of any dense order-p contraction: I^p * J.
std::uint64_t dense_flop_count(std::size_t order, std::size_t in_dim, std::size_t out_dim);

// Header record (format tag u8, p/I/J u32, rank count + ranks u32, shared u8)
// followed by the stored cores as tensor snapshots.
void save_kernel(std::ostream& out, const TnKernel& k);
TnKernel load_kernel(std::istream& in);

}  // namespace t1cl
