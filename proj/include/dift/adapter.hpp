#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dift/instruct.hpp"

namespace dift {

enum class Activation : std::uint32_t {
    SwiGLU = 1,  // W1 has 2*d1 rows: gate half, then up half
    SiLU = 2,    // W1 has d1 rows, no gate
};

/// Projection from the embedding space (d0) into the target hidden space (d2):
///
///     z   = W1 e + b1
///     a   = silu(z_gate) * z_up        (SwiGLU)   or   silu(z)   (SiLU)
///     out = W2 a + b2
///
/// All matrices are row-major.
struct AdapterParams {
    std::size_t d0 = 0;
    std::size_t d1 = 0;
    std::size_t d2 = 0;
    Activation activation = Activation::SwiGLU;
    std::vector<double> w1;  // hidden_rows() x d0
    std::vector<double> b1;  // hidden_rows()
    std::vector<double> w2;  // d2 x d1
    std::vector<double> b2;  // d2

    AdapterParams() = default;
    AdapterParams(std::size_t d0_, std::size_t d1_, std::size_t d2_, Activation act = Activation::SwiGLU);

    std::size_t hidden_rows() const { return activation == Activation::SwiGLU ? 2 * d1 : d1; }

    /// Throws std::invalid_argument if the buffers do not match the dims.
    void check_shapes() const;

    friend bool operator==(const AdapterParams&, const AdapterParams&) = default;
};

/// Gradients of <upstream, project(params, e)>, laid out like AdapterParams.
struct AdapterGradients {
    std::vector<double> w1, b1, w2, b2, e;
};

double silu(double x);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
AdapterParams init_adapter(std::size_t d0, std::size_t d1, std::size_t d2, Activation act, std::uint64_t seed);

std::vector<double> project(const AdapterParams& params, std::span<const double> e);

AdapterGradients project_grad(const AdapterParams& params, std::span<const double> e,
                              std::span<const double> upstream);

/// Projects the sample's knowledge vectors, query first then candidates in
/// prompt order. Throws DataError on a missing sidecar row.
std::vector<std::vector<double>> attach_knowledge(std::span<const std::uint64_t> offsets,
                                                  const KnowledgeSidecar& sidecar, const AdapterParams& params);

inline std::vector<std::vector<double>> attach_knowledge(const InstructionSample& sample,
                                                         const KnowledgeSidecar& sidecar,
                                                         const AdapterParams& params) {
    return attach_knowledge(sample.knowledge_ref_offsets, sidecar, params);
}

/// Header (magic, version, d0, d1, d2, activation) then little-endian f64
/// W1, b1, W2, b2.
void save_adapter(const AdapterParams& params, const std::filesystem::path& path);
AdapterParams load_adapter(const std::filesystem::path& path);

}  // namespace dift
