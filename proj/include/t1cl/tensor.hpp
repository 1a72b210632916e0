#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace t1cl {

// Error raised by the binary serialization and image readers; carries the
// offending path in what().
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense n-dimensional array of doubles in row-major order (last index
/// fastest). The value carrier for every module and the brute-force oracle
/// representation for the factorized kernels.
struct DenseTensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    DenseTensor() = default;

    static DenseTensor zeros(std::vector<std::size_t> dims);
    static DenseTensor filled(std::vector<std::size_t> dims, double value);
    static DenseTensor from_data(std::vector<std::size_t> dims, std::vector<double> values);

    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double operator[](std::size_t i) const { return data[i]; }
    double& operator[](std::size_t i) { return data[i]; }

    // Row-major flat offset of a full multi-index.
    template <class... Ix>
    std::size_t offset(Ix... ix) const {
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t d = 0; d < sizeof...(ix); ++d) off = off * shape[d] + idx[d];
        return off;
    }

    template <class... Ix>
    double at(Ix... ix) const { return data[offset(ix...)]; }
    template <class... Ix>
    double& at(Ix... ix) { return data[offset(ix...)]; }

    bool same_shape(const DenseTensor& other) const { return shape == other.shape; }
};

std::size_t shape_product(const std::vector<std::size_t>& dims);

double max_abs(const DenseTensor& t);
double max_abs_diff(const DenseTensor& a, const DenseTensor& b);
// max |a-b| scaled by the largest magnitude present in either tensor.
double max_rel_diff(const DenseTensor& a, const DenseTensor& b);
bool all_finite(const DenseTensor& t);

/// Counter-based pseudo-random generator (splitmix64 increment + mix).
/// The same seed yields the same sequence on every platform, and split()
/// derives an independent deterministic child stream.
struct Rng {
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double next_unit();                    // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();                       // standard normal, Box-Muller
    Rng split() { return Rng(next_u64()); }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// x must be rank-1; result[i1,...,ip] = x[i1]*...*x[ip].
DenseTensor outer_power(const DenseTensor& x, std::size_t p);

// w rank-(p+1) with the first p dims equal to len(x);
// y[j] = sum over all index tuples of w[i1,...,ip,j]*x[i1]*...*x[ip].
DenseTensor contract_last(const DenseTensor& w, const DenseTensor& x, std::size_t times);

DenseTensor rng_uniform(Rng& rng, std::vector<std::size_t> dims, double lo, double hi);

// Binary tensor snapshot: "T1CL" magic, version byte 0x01, u32 LE rank,
// rank x u32 LE dims, then values as f64 LE.
void save_tensor(std::ostream& out, const DenseTensor& t);
DenseTensor load_tensor(std::istream& in);
void save_tensor_file(const std::string& path, const DenseTensor& t);
DenseTensor load_tensor_file(const std::string& path);

// Little-endian scalar helpers shared by every on-disk format.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_f64(std::ostream& out, double v);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
double read_f64(std::istream& in);

}  // namespace t1cl
