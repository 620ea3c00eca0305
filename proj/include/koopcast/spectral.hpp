#pragma once

// Eigen-structured Koopman generator in real block form.
//
// A conjugate pair lambda = r +/- i*omega with eigenvectors u +/- i*z is
// carried as the real columns [u, z] of the basis W and the 2x2 block
//
//     exp(tau*r) * [[ cos(tau*omega), sin(tau*omega)],
//                   [-sin(tau*omega), cos(tau*omega)]]
//
// so that W * blockdiag(...) * W^{-1} equals V exp(tau*Lambda) V^{-1}.
// Odd dimensions end with a single real eigenvalue (a 1x1 block).
// In discrete time, r is the eigenvalue modulus and exp(tau*r) becomes r^tau.

#include "koopcast/tape.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace koopcast {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class TimeMode : std::uint8_t { continuous, discrete };

std::string to_string(TimeMode mode);
TimeMode time_mode_from_string(const std::string& name);

// How one decay rate or one frequency is obtained from its raw parameter.
struct Fixed {
    double value = 0.0;
};
struct Free {
    double init = 0.0;
};
/// value = -exp(raw)
struct ForcedNegative {
    double init_raw = 0.0;
};
/// value = exp(raw)
struct ForcedPositive {
    double init_raw = 0.0;
};
/// value = start + (end - start) * sigmoid(raw)
struct Range {
    double start = 0.0;
    double end = 0.0;
    double init_raw = 0.0;
};

using ParamSpec = std::variant<Fixed, Free, ForcedNegative, ForcedPositive, Range>;

[[nodiscard]] bool is_trainable(const ParamSpec& spec);
[[nodiscard]] double initial_raw(const ParamSpec& spec);

struct SpectralConstraint {
    std::vector<ParamSpec> decay;      ///< ceil(K/2) entries
    std::vector<ParamSpec> frequency;  ///< floor(K/2) entries

    /// Koopman dimension K implied by the entry counts.
    [[nodiscard]] int dimension() const;
    /// Throws ConfigError on inconsistent counts, Range with start >= end,
    /// or a fixed frequency outside [0, 2*pi).
    void validate() const;

    [[nodiscard]] std::size_t trainable_decay_count() const;
    [[nodiscard]] std::size_t trainable_frequency_count() const;
    [[nodiscard]] Vector initial_decay_raw() const;
    [[nodiscard]] Vector initial_frequency_raw() const;

    /// Every entry Free with zero initial value.
    static SpectralConstraint unconstrained(int K);
};

struct KoopmanSpectrum {
    Vector r;      ///< ceil(K/2) decay rates (moduli in discrete time)
    Vector omega;  ///< floor(K/2) angular frequencies
    int K = 0;
};

/// Real and imaginary eigenvector parts: U is K x ceil(K/2), Z is K x floor(K/2).
struct EigenBasis {
    Matrix U;
    Matrix Z;

    [[nodiscard]] int dimension() const { return static_cast<int>(U.rows()); }

    /// W = I + uniform noise in [-noise, noise], split into U and Z columns.
    static EigenBasis perturbed_identity(int K, std::mt19937_64& rng, double noise = 0.1);
    /// Splits an assembled W back into U and Z.
    static EigenBasis from_assembled(const Matrix& W);
};

namespace spectral {

/// Spectrum entries as 1x1 tape nodes.
struct SpectrumVars {
    std::vector<grad::Var> r;
    std::vector<grad::Var> omega;
    int K = 0;
};

/// decay_raw / frequency_raw are column nodes with one entry per trainable
/// spec, in declaration order; pass nullopt when there are none.
SpectrumVars realize_spectrum(grad::Tape& tape, const SpectralConstraint& constraint,
                              std::optional<grad::Var> decay_raw, std::optional<grad::Var> frequency_raw);

/// Interleaves columns as [u1, z1, u2, z2, ...], ending with u_last for odd K.
grad::Var assemble_basis(grad::Var U, std::optional<grad::Var> Z);

/// Applies the block propagator to every column of coords. tau is 1x1 or a
/// 1 x cols row of per-column horizons. In discrete mode tau enters as a
/// constant exponent (no gradient flows to it).
grad::Var advance(const SpectrumVars& spectrum, grad::Var coords, grad::Var tau, TimeMode mode);

/// K x K block-diagonal propagator for a 1x1 horizon.
grad::Var block_exponential(const SpectrumVars& spectrum, grad::Var tau, TimeMode mode);

/// W * advance(W^{-1} g): evaluated through a linear solve, cost independent of tau.
grad::Var propagate(grad::Var W, const SpectrumVars& spectrum, grad::Var tau, grad::Var g, TimeMode mode);

}  // namespace spectral

// Value-level wrappers. Each runs the tape path above on a private tape.

KoopmanSpectrum realize_spectrum(const SpectralConstraint& constraint, const Vector& decay_raw,
                                 const Vector& frequency_raw);
Matrix assemble_basis(const EigenBasis& basis);
Matrix block_exponential(const KoopmanSpectrum& spectrum, double tau, TimeMode mode = TimeMode::continuous);
Vector propagate(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau, const Vector& g);
/// Discrete-time propagation by tau steps; the modulus must be positive
/// unless tau is integral (DomainError otherwise).
Vector discrete_propagate(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau, const Vector& g);
/// The K x K matrix W B(tau) W^{-1}.
Matrix propagator_matrix(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau,
                         TimeMode mode = TimeMode::continuous);

struct DynamicMode {
    int index = 0;  ///< row of W^{-1}
    double r = 0.0;
    double omega = 0.0;
    Vector pattern;
};

/// Decodes each row of W^{-1}. Rows 2k and 2k+1 belong to pair k; the last
/// row of an odd-dimensional basis belongs to the trailing real eigenvalue.
std::vector<DynamicMode> dynamic_modes(const EigenBasis& basis, const KoopmanSpectrum& spectrum,
                                       const std::function<Vector(const Vector&)>& decoder);

}  // namespace koopcast
