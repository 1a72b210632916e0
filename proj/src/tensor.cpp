#include "t1cl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace t1cl {

std::size_t shape_product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("tensor dimension must be positive");
        if (n > std::numeric_limits<std::size_t>::max() / d)
            throw std::length_error("tensor shape overflows size_t");
        n *= d;
    }
    return n;
}

DenseTensor DenseTensor::zeros(std::vector<std::size_t> dims) {
    DenseTensor t;
    std::size_t n = shape_product(dims);
    t.shape = std::move(dims);
    t.data.assign(n, 0.0);
    return t;
}

DenseTensor DenseTensor::filled(std::vector<std::size_t> dims, double value) {
    DenseTensor t = zeros(std::move(dims));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

DenseTensor DenseTensor::from_data(std::vector<std::size_t> dims, std::vector<double> values) {
    std::size_t n = shape_product(dims);
    if (n != values.size()) throw std::invalid_argument("tensor data length does not match shape");
    DenseTensor t;
    t.shape = std::move(dims);
    t.data = std::move(values);
    return t;
}

double max_abs(const DenseTensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::fabs(v));
    return m;
}

double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape != b.shape) throw std::invalid_argument("shape mismatch in max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

double max_rel_diff(const DenseTensor& a, const DenseTensor& b) {
    double scale = std::max({max_abs(a), max_abs(b), 1e-300});
    return max_abs_diff(a, b) / scale;
}

bool all_finite(const DenseTensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("uniform requires lo < hi");
    return lo + next_unit() * (hi - lo);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

DenseTensor outer_power(const DenseTensor& x, std::size_t p) {
    if (p == 0) throw std::invalid_argument("outer_power requires p >= 1");
    if (x.rank() != 1 || x.size() == 0)
        throw std::invalid_argument("outer_power requires a nonempty rank-1 tensor");
    const std::size_t c = x.size();
    std::vector<std::size_t> dims(p, c);
    DenseTensor out = DenseTensor::zeros(std::move(dims));
    std::vector<std::size_t> idx(p, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        double prod = 1.0;
        for (std::size_t k = 0; k < p; ++k) prod *= x.data[idx[k]];
        out.data[flat] = prod;
        for (std::size_t k = p; k-- > 0;) {
            if (++idx[k] < c) break;
            idx[k] = 0;
        }
    }
    return out;
}

DenseTensor contract_last(const DenseTensor& w, const DenseTensor& x, std::size_t times) {
    if (x.rank() != 1 || x.size() == 0)
        throw std::invalid_argument("contract_last requires a nonempty rank-1 input");
    if (w.rank() != times + 1)
        throw std::invalid_argument("contract_last: kernel rank must be times + 1");
    const std::size_t c = x.size();
    for (std::size_t d = 0; d < times; ++d)
        if (w.shape[d] != c) throw std::invalid_argument("contract_last: kernel dim mismatch");
    const std::size_t out_dim = w.shape[times];

    DenseTensor y = DenseTensor::zeros({out_dim});
    std::vector<std::size_t> idx(times, 0);
    std::size_t blocks = w.size() / out_dim;
    for (std::size_t b = 0; b < blocks; ++b) {
        double prod = 1.0;
        for (std::size_t k = 0; k < times; ++k) prod *= x.data[idx[k]];
        const double* row = w.data.data() + b * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) y.data[j] += row[j] * prod;
        for (std::size_t k = times; k-- > 0;) {
            if (++idx[k] < c) break;
            idx[k] = 0;
        }
    }
    return y;
}

DenseTensor rng_uniform(Rng& rng, std::vector<std::size_t> dims, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("rng_uniform requires lo < hi");
    DenseTensor t = DenseTensor::zeros(std::move(dims));
    for (double& v : t.data) v = lo + rng.next_unit() * (hi - lo);
    return t;
}

void write_u8(std::ostream& out, std::uint8_t v) {
    out.put(static_cast<char>(v));
}

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

void write_f64(std::ostream& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

std::uint8_t read_u8(std::istream& in) {
    int c = in.get();
    if (c == std::char_traits<char>::eof()) throw io_error("unexpected end of stream");
    return static_cast<std::uint8_t>(c);
}

std::uint32_t read_u32(std::istream& in) {
    char b[4];
    if (!in.read(b, 4)) throw io_error("unexpected end of stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

double read_f64(std::istream& in) {
    char b[8];
    if (!in.read(b, 8)) throw io_error("unexpected end of stream");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

namespace {
constexpr char kTensorMagic[4] = {'T', '1', 'C', 'L'};
constexpr std::uint8_t kTensorVersion = 0x01;
}  // namespace

void save_tensor(std::ostream& out, const DenseTensor& t) {
    out.write(kTensorMagic, 4);
    write_u8(out, kTensorVersion);
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) {
        if (d > 0xFFFFFFFFULL) throw io_error("tensor dimension too large for snapshot format");
        write_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.data) write_f64(out, v);
}

DenseTensor load_tensor(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::char_traits<char>::compare(magic, kTensorMagic, 4) != 0)
        throw io_error("bad tensor snapshot magic");
    if (read_u8(in) != kTensorVersion) throw io_error("unsupported tensor snapshot version");
    std::uint32_t rank = read_u32(in);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = read_u32(in);
    std::size_t n = 0;
    try {
        n = shape_product(dims);
    } catch (const std::exception&) {
        throw io_error("corrupt tensor snapshot dims");
    }
    DenseTensor t;
    t.shape = std::move(dims);
    t.data.resize(n);
    for (double& v : t.data) v = read_f64(in);
    return t;
}

void save_tensor_file(const std::string& path, const DenseTensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    save_tensor(out, t);
    if (!out) throw io_error("write failed: " + path);
}

DenseTensor load_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path);
    return load_tensor(in);
}

}  // namespace t1cl
