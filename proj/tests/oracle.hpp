#pragma once

// Reference computations in explicit complex arithmetic, independent of the
// real block realization used by the library.

#include "koopcast/spectral.hpp"

#include <Eigen/Dense>

#include <complex>
#include <random>

namespace koopcast::testing {

using cd = std::complex<double>;

/// Columns u_k + i z_k, u_k - i z_k for each pair, then the trailing real u.
inline Eigen::MatrixXcd complex_eigenvectors(const EigenBasis& b) {
    const Eigen::Index K = b.U.rows();
    Eigen::MatrixXcd V(K, K);
    const cd i(0.0, 1.0);
    for (Eigen::Index k = 0; k < K / 2; ++k) {
        V.col(2 * k) = b.U.col(k).cast<cd>() + i * b.Z.col(k).cast<cd>();
        V.col(2 * k + 1) = b.U.col(k).cast<cd>() - i * b.Z.col(k).cast<cd>();
    }
    if (K % 2 == 1) V.col(K - 1) = b.U.col(K / 2).cast<cd>();
    return V;
}

/// Eigenvalue powers: exp(tau * (r +/- i w)) in continuous time,
/// (r e^{+/- i w})^tau in discrete time.
inline Eigen::VectorXcd eigenvalue_powers(const KoopmanSpectrum& s, double tau, bool discrete) {
    const Eigen::Index K = s.K;
    Eigen::VectorXcd d(K);
    auto power = [&](double r, double w) {
        return discrete ? std::pow(r, tau) * std::exp(cd(0.0, w * tau)) : std::exp(cd(r, w) * tau);
    };
    for (Eigen::Index k = 0; k < K / 2; ++k) {
        d(2 * k) = power(s.r(k), s.omega(k));
        d(2 * k + 1) = power(s.r(k), -s.omega(k));
    }
    if (K % 2 == 1) d(K - 1) = power(s.r(K / 2), 0.0);
    return d;
}

inline Eigen::VectorXd complex_propagate(const EigenBasis& b, const KoopmanSpectrum& s, double tau,
                                         const Eigen::VectorXd& g, bool discrete = false) {
    const Eigen::MatrixXcd V = complex_eigenvectors(b);
    const Eigen::VectorXcd c = V.partialPivLu().solve(g.cast<cd>());
    const Eigen::VectorXcd out = V * (eigenvalue_powers(s, tau, discrete).asDiagonal() * c);
    return out.real();
}

/// A random instance whose basis stays comfortably invertible.
struct RandomInstance {
    EigenBasis basis;
    KoopmanSpectrum spectrum;
    double tau = 0.0;
    Eigen::VectorXd g;
};

inline RandomInstance random_instance(int K, std::mt19937_64& rng, double r_lo = -1.0, double r_hi = 1.0) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> rdist(r_lo, r_hi);
    std::uniform_real_distribution<double> wdist(0.0, 2.0 * 3.141592653589793);
    std::uniform_real_distribution<double> tdist(-2.0, 2.0);
    std::uniform_real_distribution<double> gdist(-10.0, 10.0);
    RandomInstance inst;
    for (;;) {
        Eigen::MatrixXd W = Eigen::MatrixXd::Identity(K, K);
        for (Eigen::Index j = 0; j < K; ++j) {
            for (Eigen::Index i = 0; i < K; ++i) W(i, j) += 0.5 * unit(rng);
        }
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
        const auto& sv = svd.singularValues();
        if (sv(0) / sv(sv.size() - 1) < 50.0) {
            inst.basis = EigenBasis::from_assembled(W);
            break;
        }
    }
    inst.spectrum.K = K;
    inst.spectrum.r.resize((K + 1) / 2);
    inst.spectrum.omega.resize(K / 2);
    for (Eigen::Index k = 0; k < inst.spectrum.r.size(); ++k) inst.spectrum.r(k) = rdist(rng);
    for (Eigen::Index k = 0; k < inst.spectrum.omega.size(); ++k) inst.spectrum.omega(k) = wdist(rng);
    inst.tau = tdist(rng);
    inst.g.resize(K);
    for (Eigen::Index i = 0; i < K; ++i) inst.g(i) = gdist(rng);
    return inst;
}

}  // namespace koopcast::testing
