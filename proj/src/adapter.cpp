#include "dift/adapter.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "binary_io.hpp"
#include "dift/error.hpp"

namespace dift {
namespace {

constexpr std::array<char, 8> kAdapterMagic = {'D', 'I', 'F', 'T', 'A', 'D', 'P', '\0'};
constexpr std::uint32_t kAdapterVersion = 1;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double ex = std::exp(x);
    return ex / (1.0 + ex);
}

double silu_derivative(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

/// y = W x + b, W is rows x cols.
std::vector<double> affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                           std::size_t rows, std::size_t cols) {
    std::vector<double> y(b.begin(), b.end());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = w.data() + i * cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] += acc;
    }
    return y;
}

}  // namespace

double silu(double x) { return x * sigmoid(x); }

AdapterParams::AdapterParams(std::size_t d0_, std::size_t d1_, std::size_t d2_, Activation act)
    : d0(d0_), d1(d1_), d2(d2_), activation(act) {
    w1.assign(hidden_rows() * d0, 0.0);
    b1.assign(hidden_rows(), 0.0);
    w2.assign(d2 * d1, 0.0);
    b2.assign(d2, 0.0);
}

void AdapterParams::check_shapes() const {
    if (w1.size() != hidden_rows() * d0 || b1.size() != hidden_rows() || w2.size() != d2 * d1 || b2.size() != d2) {
        throw std::invalid_argument("adapter parameter buffers do not match (d0, d1, d2)");
    }
}

AdapterParams init_adapter(std::size_t d0, std::size_t d1, std::size_t d2, Activation act, std::uint64_t seed) {
    AdapterParams p(d0, d1, d2, act);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(static_cast<double>(d0)),
                                              1.0 / std::sqrt(static_cast<double>(d0)));
    std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(static_cast<double>(d1)),
                                              1.0 / std::sqrt(static_cast<double>(d1)));
    for (double& w : p.w1) w = u1(rng);
    for (double& w : p.w2) w = u2(rng);
    return p;
}

std::vector<double> project(const AdapterParams& p, std::span<const double> e) {
    p.check_shapes();
    if (e.size() != p.d0) throw std::invalid_argument("project: input has wrong dimension");
    const auto z = affine(p.w1, p.b1, e, p.hidden_rows(), p.d0);
    std::vector<double> a(p.d1);
    for (std::size_t i = 0; i < p.d1; ++i) {
        a[i] = p.activation == Activation::SwiGLU ? silu(z[i]) * z[p.d1 + i] : silu(z[i]);
    }
    return affine(p.w2, p.b2, a, p.d2, p.d1);
}

AdapterGradients project_grad(const AdapterParams& p, std::span<const double> e, std::span<const double> upstream) {
    p.check_shapes();
    if (e.size() != p.d0 || upstream.size() != p.d2) {
        throw std::invalid_argument("project_grad: input or upstream has wrong dimension");
    }
    const bool gated = p.activation == Activation::SwiGLU;
    const auto rows = p.hidden_rows();

    // Forward pass, keeping intermediates.
    const auto z = affine(p.w1, p.b1, e, rows, p.d0);
    std::vector<double> a(p.d1);
    for (std::size_t i = 0; i < p.d1; ++i) a[i] = gated ? silu(z[i]) * z[p.d1 + i] : silu(z[i]);

    AdapterGradients g;
    g.b2.assign(upstream.begin(), upstream.end());
    g.w2.assign(p.d2 * p.d1, 0.0);
    std::vector<double> da(p.d1, 0.0);
    for (std::size_t r = 0; r < p.d2; ++r) {
        const double u = upstream[r];
        const double* wrow = p.w2.data() + r * p.d1;
        double* grow = g.w2.data() + r * p.d1;
        for (std::size_t c = 0; c < p.d1; ++c) {
            grow[c] = u * a[c];
            da[c] += wrow[c] * u;
        }
    }

    g.b1.assign(rows, 0.0);
    for (std::size_t i = 0; i < p.d1; ++i) {
        if (gated) {
            g.b1[i] = da[i] * z[p.d1 + i] * silu_derivative(z[i]);
            g.b1[p.d1 + i] = da[i] * silu(z[i]);
        } else {
            g.b1[i] = da[i] * silu_derivative(z[i]);
        }
    }
    // dz is b1's gradient; W1 and e follow from z = W1 e + b1.
    g.w1.assign(rows * p.d0, 0.0);
    g.e.assign(p.d0, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double dz = g.b1[r];
        const double* wrow = p.w1.data() + r * p.d0;
        double* grow = g.w1.data() + r * p.d0;
        for (std::size_t c = 0; c < p.d0; ++c) {
            grow[c] = dz * e[c];
            g.e[c] += wrow[c] * dz;
        }
    }
    return g;
}

std::vector<std::vector<double>> attach_knowledge(std::span<const std::uint64_t> offsets,
                                                  const KnowledgeSidecar& sidecar, const AdapterParams& params) {
    if (sidecar.dim != params.d0) {
        throw std::invalid_argument("sidecar dimension does not match adapter d0");
    }
    std::vector<std::vector<double>> out;
    out.reserve(offsets.size());
    for (auto off : offsets) {
        out.push_back(project(params, sidecar.row(off)));
    }
    return out;
}

void save_adapter(const AdapterParams& p, const std::filesystem::path& path) {
    p.check_shapes();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    io::write_magic(out, kAdapterMagic);
    io::write_uint<std::uint32_t>(out, kAdapterVersion);
    io::write_uint<std::uint64_t>(out, p.d0);
    io::write_uint<std::uint64_t>(out, p.d1);
    io::write_uint<std::uint64_t>(out, p.d2);
    io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(p.activation));
    io::write_doubles(out, p.w1);
    io::write_doubles(out, p.b1);
    io::write_doubles(out, p.w2);
    io::write_doubles(out, p.b2);
    if (!out) throw DataError("write failed: " + path.string());
}

AdapterParams load_adapter(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const auto what = path.string();
    io::expect_magic(in, kAdapterMagic, what);
    if (io::read_uint<std::uint32_t>(in, what) != kAdapterVersion) {
        throw DataError("unsupported adapter version in " + what);
    }
    const auto d0 = io::read_uint<std::uint64_t>(in, what);
    const auto d1 = io::read_uint<std::uint64_t>(in, what);
    const auto d2 = io::read_uint<std::uint64_t>(in, what);
    const auto act = io::read_uint<std::uint32_t>(in, what);
    if (act != 1 && act != 2) throw DataError("bad activation kind in " + what);
    AdapterParams p(d0, d1, d2, static_cast<Activation>(act));
    io::read_doubles(in, p.w1, what);
    io::read_doubles(in, p.b1, what);
    io::read_doubles(in, p.w2, what);
    io::read_doubles(in, p.b2, what);
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + what);
    return p;
}

}  // namespace dift
