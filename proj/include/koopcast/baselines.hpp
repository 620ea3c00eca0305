#pragma once

// Linear baselines: exact DMD in measurement space, and the constrained
// variant that reuses the Koopman pipeline with frozen identity networks.

#include "koopcast/data.hpp"
#include "koopcast/model.hpp"
#include "koopcast/spectral.hpp"
#include "koopcast/training.hpp"

#include <complex>
#include <filesystem>
#include <vector>

namespace koopcast {

struct DmdModel {
    Matrix A;                      ///< one-step operator at spacing dt
    Eigen::VectorXcd eigenvalues;  ///< sorted by descending imaginary part, then real part
    Eigen::MatrixXcd eigenvectors; ///< column k pairs with eigenvalues(k)
    double dt = 0.0;
};

/// Least-squares one-step operator A = Y X^+ on a regularly sampled series.
/// Singular values below 1e-10 * sigma_max are truncated; a snapshot matrix
/// with no singular value above the cutoff raises FitError.
DmdModel dmd_fit(const TimeSeries& series);

/// Spacing tolerance (relative) accepted as regular sampling.
inline constexpr double kRegularSpacingTolerance = 1e-6;

struct ContinuousEigenvalue {
    double r = 0.0;
    double omega = 0.0;
};

/// r = ln|mu| / dt, omega = arg(mu) / dt on the principal branch. Frequencies
/// beyond pi / dt alias and are reported as such.
std::vector<ContinuousEigenvalue> continuous_spectrum(const DmdModel& model);

/// Rows of the inverse eigenvector matrix.
Eigen::MatrixXcd dmd_left_eigenvectors(const DmdModel& model);

/// Left eigenvectors in real form: an eigenvalue with positive imaginary part
/// contributes its real and imaginary rows, its conjugate is skipped, and a
/// real eigenvalue contributes its real row.
std::vector<DynamicMode> dmd_modes(const DmdModel& model);

/// Prediction after an integral number of steps.
Vector dmd_forecast(const DmdModel& model, const Vector& y, long steps);

/// Constrained DMD: Koopman model with frozen identity encoder/decoder
/// (K = M), trained by the usual objective. Standardization is disabled so
/// the learned operator acts on raw measurements.
TrainResult dmdf_fit(const TimeSeries& train_split, const TimeSeries& validation_split,
                     const SpectralConstraint& constraint, const TrainConfig& config, std::uint64_t seed);

nlohmann::json dmd_to_json(const DmdModel& model);
DmdModel dmd_from_json(const nlohmann::json& j);

/// Columns: mode_index, r, omega, component_1..M.
void write_modes_csv(const std::vector<DynamicMode>& modes, const std::filesystem::path& path);

}  // namespace koopcast
