#include "koopcast/baselines.hpp"

#include "koopcast/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace koopcast {

namespace {

void decompose(DmdModel& model) {
    Eigen::EigenSolver<Matrix> solver(model.A, true);
    if (solver.info() != Eigen::Success) throw FitError("dmd: eigendecomposition did not converge");
    const Eigen::VectorXcd values = solver.eigenvalues();
    const Eigen::MatrixXcd vectors = solver.eigenvectors();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (values(a).imag() != values(b).imag()) return values(a).imag() > values(b).imag();
        return values(a).real() > values(b).real();
    });
    model.eigenvalues.resize(values.size());
    model.eigenvectors.resize(vectors.rows(), vectors.cols());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto col = static_cast<Eigen::Index>(k);
        model.eigenvalues(col) = values(order[k]);
        model.eigenvectors.col(col) = vectors.col(order[k]);
    }
}

double regular_spacing(const TimeSeries& series) {
    const Eigen::Index N = series.size();
    const double dt = (series.times(N - 1) - series.times(0)) / static_cast<double>(N - 1);
    for (Eigen::Index n = 0; n + 1 < N; ++n) {
        const double gap = series.times(n + 1) - series.times(n);
        if (std::abs(gap - dt) > kRegularSpacingTolerance * dt) {
            throw FitError("dmd requires regularly sampled data; gap at index " + std::to_string(n) + " is " +
                           format_double(gap) + " against mean spacing " + format_double(dt));
        }
    }
    return dt;
}

}  // namespace

DmdModel dmd_fit(const TimeSeries& series) {
    series.validate();
    const Eigen::Index N = series.size();
    const Eigen::Index M = series.dim();
    if (N < M + 1 || N < 2) throw DegenerateDataError("dmd: need at least M + 1 snapshots");
    DmdModel model;
    model.dt = regular_spacing(series);

    const Matrix X = series.values.topRows(N - 1).transpose();
    const Matrix Y = series.values.bottomRows(N - 1).transpose();
    Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    const double cutoff = 1e-10 * (sigma.size() > 0 ? sigma(0) : 0.0);
    Vector sigma_inv = Vector::Zero(sigma.size());
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (sigma(i) > cutoff && sigma(i) > 0.0) {
            sigma_inv(i) = 1.0 / sigma(i);
            ++rank;
        }
    }
    if (rank == 0) throw FitError("dmd: snapshot matrix has no singular value above the cutoff");
    const Matrix X_pinv = svd.matrixV() * sigma_inv.asDiagonal() * svd.matrixU().transpose();
    model.A = Y * X_pinv;
    decompose(model);
    return model;
}

std::vector<ContinuousEigenvalue> continuous_spectrum(const DmdModel& model) {
    std::vector<ContinuousEigenvalue> out;
    for (Eigen::Index k = 0; k < model.eigenvalues.size(); ++k) {
        const std::complex<double> mu = model.eigenvalues(k);
        if (std::abs(mu) == 0.0) throw DomainError("continuous_spectrum: zero eigenvalue has no logarithm");
        out.push_back({std::log(std::abs(mu)) / model.dt, std::arg(mu) / model.dt});
    }
    return out;
}

Eigen::MatrixXcd dmd_left_eigenvectors(const DmdModel& model) {
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(model.eigenvectors);
    const Eigen::VectorXd pivots = lu.matrixLU().diagonal().cwiseAbs();
    const double ratio = pivots.minCoeff() > 0.0 ? pivots.maxCoeff() / pivots.minCoeff()
                                                 : std::numeric_limits<double>::infinity();
    if (!(ratio <= grad::kMaxPivotRatio)) {
        throw ConditioningError("dmd_modes: eigenvector matrix is ill-conditioned", ratio);
    }
    return lu.inverse();
}

std::vector<DynamicMode> dmd_modes(const DmdModel& model) {
    const Eigen::MatrixXcd left = dmd_left_eigenvectors(model);
    const auto spectrum = continuous_spectrum(model);
    std::vector<DynamicMode> modes;
    int index = 0;
    for (Eigen::Index k = 0; k < model.eigenvalues.size(); ++k) {
        const double imag = model.eigenvalues(k).imag();
        const auto [r, omega] = spectrum[static_cast<std::size_t>(k)];
        if (imag < 0.0) continue;
        modes.push_back({index++, r, omega, left.row(k).real().transpose()});
        if (imag > 0.0) modes.push_back({index++, r, omega, left.row(k).imag().transpose()});
    }
    return modes;
}

Vector dmd_forecast(const DmdModel& model, const Vector& y, long steps) {
    if (steps < 0) throw DomainError("dmd_forecast: negative step count");
    Vector x = y;
    for (long s = 0; s < steps; ++s) x = model.A * x;
    return x;
}

TrainResult dmdf_fit(const TimeSeries& train_split, const TimeSeries& validation_split,
                     const SpectralConstraint& constraint, const TrainConfig& config, std::uint64_t seed) {
    const auto M = static_cast<int>(train_split.dim());
    if (constraint.dimension() != M) throw ConfigError("dmdf: constraint dimension must equal the measurement dimension");
    return train(init_linear_model(M, constraint, seed), train_split, validation_split, config);
}

nlohmann::json dmd_to_json(const DmdModel& model) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < model.A.rows(); ++i) {
        rows.emplace_back();
        for (Eigen::Index j = 0; j < model.A.cols(); ++j) rows.back().push_back(model.A(i, j));
    }
    return {{"format", "koopcast-dmd"}, {"version", 1}, {"dt", model.dt}, {"A", rows}};
}

DmdModel dmd_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "koopcast-dmd") throw ConfigError("not a DMD checkpoint");
        const auto rows = j.at("A").get<std::vector<std::vector<double>>>();
        DmdModel model;
        model.dt = j.at("dt").get<double>();
        model.A.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) throw ConfigError("DMD operator must be square");
            for (std::size_t k = 0; k < rows.size(); ++k) {
                model.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
            }
        }
        decompose(model);
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed DMD checkpoint: ") + e.what());
    }
}

void write_modes_csv(const std::vector<DynamicMode>& modes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const Eigen::Index m = modes.empty() ? 0 : modes.front().pattern.size();
    out << "mode_index,r,omega";
    for (Eigen::Index i = 0; i < m; ++i) out << ",component_" << (i + 1);
    out << '\n';
    for (const auto& mode : modes) {
        out << mode.index << ',' << format_double(mode.r) << ',' << format_double(mode.omega);
        for (Eigen::Index i = 0; i < mode.pattern.size(); ++i) out << ',' << format_double(mode.pattern(i));
        out << '\n';
    }
    if (!out) throw Error("failed writing " + path.string());
}

}  // namespace koopcast
