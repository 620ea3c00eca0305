#include "koopcast/spectral.hpp"

#include "koopcast/errors.hpp"

#include <cmath>
#include <numbers>

namespace koopcast {

using grad::Tape;
using grad::Var;

std::string to_string(TimeMode mode) { return mode == TimeMode::continuous ? "continuous" : "discrete"; }

TimeMode time_mode_from_string(const std::string& name) {
    if (name == "continuous") return TimeMode::continuous;
    if (name == "discrete") return TimeMode::discrete;
    throw ConfigError("unknown time mode '" + name + "'");
}

bool is_trainable(const ParamSpec& spec) { return !std::holds_alternative<Fixed>(spec); }

double initial_raw(const ParamSpec& spec) {
    return std::visit(
        [](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Fixed>) {
                return s.value;
            } else if constexpr (std::is_same_v<T, Free>) {
                return s.init;
            } else {
                return s.init_raw;
            }
        },
        spec);
}

int SpectralConstraint::dimension() const { return static_cast<int>(decay.size() + frequency.size()); }

void SpectralConstraint::validate() const {
    if (decay.empty()) throw ConfigError("spectral constraint needs at least one decay entry");
    if (decay.size() != frequency.size() && decay.size() != frequency.size() + 1) {
        throw ConfigError("spectral constraint: expected ceil(K/2) decay and floor(K/2) frequency entries");
    }
    auto check_range = [](const ParamSpec& s, const char* what) {
        if (const auto* range = std::get_if<Range>(&s); range && !(range->start < range->end)) {
            throw ConfigError(std::string(what) + " range requires start < end");
        }
    };
    for (const auto& s : decay) check_range(s, "decay");
    for (const auto& s : frequency) {
        check_range(s, "frequency");
        if (const auto* fixed = std::get_if<Fixed>(&s)) {
            if (!(fixed->value >= 0.0 && fixed->value < 2.0 * std::numbers::pi)) {
                throw ConfigError("fixed frequency must lie in [0, 2*pi)");
            }
        }
    }
}

namespace {

std::size_t count_trainable(const std::vector<ParamSpec>& specs) {
    std::size_t n = 0;
    for (const auto& s : specs) n += is_trainable(s) ? 1 : 0;
    return n;
}

Vector raw_init(const std::vector<ParamSpec>& specs) {
    Vector raw(static_cast<Eigen::Index>(count_trainable(specs)));
    Eigen::Index at = 0;
    for (const auto& s : specs) {
        if (is_trainable(s)) raw(at++) = initial_raw(s);
    }
    return raw;
}

std::vector<Var> realize_entries(Tape& tape, const std::vector<ParamSpec>& specs, std::optional<Var> raw) {
    std::vector<Var> out;
    out.reserve(specs.size());
    Eigen::Index at = 0;
    for (const auto& spec : specs) {
        if (const auto* fixed = std::get_if<Fixed>(&spec)) {
            out.push_back(tape.constant(fixed->value));
            continue;
        }
        if (!raw || at >= raw->rows()) {
            throw ShapeError("realize_spectrum: missing raw parameter for trainable entry");
        }
        const Var x = grad::block(*raw, at++, 0, 1, 1);
        if (std::holds_alternative<Free>(spec)) {
            out.push_back(x);
        } else if (std::holds_alternative<ForcedNegative>(spec)) {
            out.push_back(grad::scale(grad::exp(x), -1.0));
        } else if (std::holds_alternative<ForcedPositive>(spec)) {
            out.push_back(grad::exp(x));
        } else {
            const auto& range = std::get<Range>(spec);
            const Var unit = grad::sigmoid(x);
            out.push_back(grad::add(tape.constant(range.start), grad::scale(unit, range.end - range.start)));
        }
    }
    if (raw && at != raw->rows()) throw ShapeError("realize_spectrum: too many raw parameters");
    return out;
}

}  // namespace

std::size_t SpectralConstraint::trainable_decay_count() const { return count_trainable(decay); }
std::size_t SpectralConstraint::trainable_frequency_count() const { return count_trainable(frequency); }
Vector SpectralConstraint::initial_decay_raw() const { return raw_init(decay); }
Vector SpectralConstraint::initial_frequency_raw() const { return raw_init(frequency); }

SpectralConstraint SpectralConstraint::unconstrained(int K) {
    SpectralConstraint c;
    c.decay.assign(static_cast<std::size_t>((K + 1) / 2), Free{});
    c.frequency.assign(static_cast<std::size_t>(K / 2), Free{});
    return c;
}

EigenBasis EigenBasis::perturbed_identity(int K, std::mt19937_64& rng, double noise) {
    std::uniform_real_distribution<double> dist(-noise, noise);
    Matrix W = Matrix::Identity(K, K);
    for (Eigen::Index j = 0; j < K; ++j) {
        for (Eigen::Index i = 0; i < K; ++i) W(i, j) += dist(rng);
    }
    return from_assembled(W);
}

EigenBasis EigenBasis::from_assembled(const Matrix& W) {
    const Eigen::Index K = W.rows();
    EigenBasis b;
    b.U.resize(K, (K + 1) / 2);
    b.Z.resize(K, K / 2);
    for (Eigen::Index j = 0; j < K; ++j) {
        if (j % 2 == 0) {
            b.U.col(j / 2) = W.col(j);
        } else {
            b.Z.col(j / 2) = W.col(j);
        }
    }
    return b;
}

namespace spectral {

SpectrumVars realize_spectrum(Tape& tape, const SpectralConstraint& constraint, std::optional<Var> decay_raw,
                              std::optional<Var> frequency_raw) {
    SpectrumVars s;
    s.r = realize_entries(tape, constraint.decay, decay_raw);
    s.omega = realize_entries(tape, constraint.frequency, frequency_raw);
    s.K = constraint.dimension();
    return s;
}

Var assemble_basis(Var U, std::optional<Var> Z) {
    const Eigen::Index K = U.rows();
    const Eigen::Index n_pairs = K / 2;
    if (U.cols() != (K + 1) / 2 || (n_pairs > 0 && (!Z || Z->rows() != K || Z->cols() != n_pairs))) {
        throw ShapeError("assemble_basis: U must be K x ceil(K/2) and Z K x floor(K/2)");
    }
    std::vector<Var> cols;
    cols.reserve(static_cast<std::size_t>(K));
    for (Eigen::Index k = 0; k < n_pairs; ++k) {
        cols.push_back(grad::block(U, 0, k, K, 1));
        cols.push_back(grad::block(*Z, 0, k, K, 1));
    }
    if (K % 2 == 1) cols.push_back(grad::block(U, 0, n_pairs, K, 1));
    return grad::concat_cols(cols);
}

namespace {

// Per-column growth factor: exp(r*tau) in continuous time, r^tau in discrete.
Var growth(Var r, Var tau, TimeMode mode) {
    if (mode == TimeMode::continuous) return grad::exp(grad::mul(r, tau));
    return grad::pow_const(r, tau.value());
}

}  // namespace

Var advance(const SpectrumVars& spectrum, Var coords, Var tau, TimeMode mode) {
    const Eigen::Index K = coords.rows();
    const Eigen::Index cols = coords.cols();
    if (K != spectrum.K) throw ShapeError("advance: coordinate dimension does not match the spectrum");
    if (tau.rows() != 1 || (tau.cols() != 1 && tau.cols() != cols)) {
        throw ShapeError("advance: tau must be 1x1 or 1 x columns");
    }
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(K));
    const std::size_t n_pairs = static_cast<std::size_t>(K / 2);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const auto row = static_cast<Eigen::Index>(2 * k);
        const Var a = grad::block(coords, row, 0, 1, cols);
        const Var b = grad::block(coords, row + 1, 0, 1, cols);
        const Var angle = grad::mul(spectrum.omega[k], tau);
        const Var c = grad::cos(angle);
        const Var s = grad::sin(angle);
        const Var e = growth(spectrum.r[k], tau, mode);
        rows.push_back(grad::mul(e, grad::add(grad::mul(c, a), grad::mul(s, b))));
        rows.push_back(grad::mul(e, grad::sub(grad::mul(c, b), grad::mul(s, a))));
    }
    if (K % 2 == 1) {
        const Var a = grad::block(coords, K - 1, 0, 1, cols);
        rows.push_back(grad::mul(growth(spectrum.r.back(), tau, mode), a));
    }
    return grad::concat_rows(rows);
}

Var block_exponential(const SpectrumVars& spectrum, Var tau, TimeMode mode) {
    if (tau.rows() != 1 || tau.cols() != 1) throw ShapeError("block_exponential: tau must be 1x1");
    Tape& tape = tau.tape();
    return advance(spectrum, tape.constant(Matrix::Identity(spectrum.K, spectrum.K)), tau, mode);
}

Var propagate(Var W, const SpectrumVars& spectrum, Var tau, Var g, TimeMode mode) {
    const Var coords = grad::solve_linear(W, g);
    return grad::matmul(W, advance(spectrum, coords, tau, mode));
}

}  // namespace spectral

namespace {

// Fixed-value spectrum on a tape: every entry becomes a constant node.
spectral::SpectrumVars constant_spectrum(Tape& tape, const KoopmanSpectrum& spectrum) {
    spectral::SpectrumVars s;
    s.K = spectrum.K;
    for (Eigen::Index i = 0; i < spectrum.r.size(); ++i) s.r.push_back(tape.constant(spectrum.r(i)));
    for (Eigen::Index i = 0; i < spectrum.omega.size(); ++i) s.omega.push_back(tape.constant(spectrum.omega(i)));
    if (s.r.size() != static_cast<std::size_t>((spectrum.K + 1) / 2) ||
        s.omega.size() != static_cast<std::size_t>(spectrum.K / 2)) {
        throw ShapeError("spectrum sizes do not match K");
    }
    return s;
}

Vector propagate_impl(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau, const Vector& g,
                      TimeMode mode) {
    Tape tape;
    const Var W = tape.constant(assemble_basis(basis));
    const Var out = spectral::propagate(W, constant_spectrum(tape, spectrum), tape.constant(tau),
                                        tape.constant(Matrix(g)), mode);
    return out.value().col(0);
}

}  // namespace

KoopmanSpectrum realize_spectrum(const SpectralConstraint& constraint, const Vector& decay_raw,
                                 const Vector& frequency_raw) {
    Tape tape;
    std::optional<Var> dr;
    std::optional<Var> fr;
    if (decay_raw.size() > 0) dr = tape.constant(Matrix(decay_raw));
    if (frequency_raw.size() > 0) fr = tape.constant(Matrix(frequency_raw));
    const auto vars = spectral::realize_spectrum(tape, constraint, dr, fr);
    KoopmanSpectrum s;
    s.K = vars.K;
    s.r.resize(static_cast<Eigen::Index>(vars.r.size()));
    s.omega.resize(static_cast<Eigen::Index>(vars.omega.size()));
    for (std::size_t i = 0; i < vars.r.size(); ++i) s.r(static_cast<Eigen::Index>(i)) = vars.r[i].scalar();
    for (std::size_t i = 0; i < vars.omega.size(); ++i) {
        s.omega(static_cast<Eigen::Index>(i)) = vars.omega[i].scalar();
    }
    return s;
}

Matrix assemble_basis(const EigenBasis& basis) {
    Tape tape;
    std::optional<Var> Z;
    if (basis.Z.cols() > 0) Z = tape.constant(basis.Z);
    return spectral::assemble_basis(tape.constant(basis.U), Z).value();
}

Matrix block_exponential(const KoopmanSpectrum& spectrum, double tau, TimeMode mode) {
    Tape tape;
    return spectral::block_exponential(constant_spectrum(tape, spectrum), tape.constant(tau), mode).value();
}

Vector propagate(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau, const Vector& g) {
    return propagate_impl(basis, spectrum, tau, g, TimeMode::continuous);
}

Vector discrete_propagate(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau, const Vector& g) {
    return propagate_impl(basis, spectrum, tau, g, TimeMode::discrete);
}

Matrix propagator_matrix(const EigenBasis& basis, const KoopmanSpectrum& spectrum, double tau, TimeMode mode) {
    Tape tape;
    const Matrix W = assemble_basis(basis);
    const Var Wv = tape.constant(W);
    const Var I = tape.constant(Matrix::Identity(W.rows(), W.cols()));
    return spectral::propagate(Wv, constant_spectrum(tape, spectrum), tape.constant(tau), I, mode).value();
}

std::vector<DynamicMode> dynamic_modes(const EigenBasis& basis, const KoopmanSpectrum& spectrum,
                                       const std::function<Vector(const Vector&)>& decoder) {
    Tape tape;
    const Matrix W = assemble_basis(basis);
    const Matrix W_inv =
        grad::solve_linear(tape.constant(W), tape.constant(Matrix::Identity(W.rows(), W.cols()))).value();
    const Eigen::Index K = W.rows();
    std::vector<DynamicMode> modes;
    modes.reserve(static_cast<std::size_t>(K));
    for (Eigen::Index j = 0; j < K; ++j) {
        DynamicMode m;
        m.index = static_cast<int>(j);
        const Eigen::Index pair = j / 2;
        m.r = spectrum.r(pair);
        m.omega = pair < spectrum.omega.size() ? spectrum.omega(pair) : 0.0;
        m.pattern = decoder(W_inv.row(j).transpose());
        modes.push_back(std::move(m));
    }
    return modes;
}

}  // namespace koopcast
