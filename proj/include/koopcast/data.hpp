#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace koopcast {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Measurements y_n (rows of values) observed at strictly increasing times t_n.
struct TimeSeries {
    Vector times;   ///< N
    Matrix values;  ///< N x M
    std::string name;

    [[nodiscard]] Eigen::Index size() const { return times.size(); }
    [[nodiscard]] Eigen::Index dim() const { return values.cols(); }
    /// Rows [start, start + count).
    [[nodiscard]] TimeSeries slice(Eigen::Index start, Eigen::Index count) const;
    /// Throws DegenerateDataError unless times are strictly increasing and all values finite.
    void validate() const;
};

using VectorField = std::function<Vector(double t, const Vector& x)>;

/// One classical fourth-order Runge-Kutta step. Throws IntegrationError on a
/// non-finite stage.
Vector rk4_step(const VectorField& f, const Vector& x, double t, double h);

/// Integrates from (t0, x0) through the given increasing times, taking at
/// least min_substeps equal steps per interval and none longer than max_step.
Matrix integrate(const VectorField& f, const Vector& x0, double t0, const Vector& times, double max_step,
                 int min_substeps = 20);

enum class System { pendulum, vanderpol, two_frequency, linear_test };
enum class Sampling { regular, irregular };

std::string to_string(System system);
System system_from_string(const std::string& name);

struct GeneratorConfig {
    System system = System::vanderpol;
    /// pendulum: g_over_l; vanderpol: mu; two_frequency: mu, amplitude, sine_frequency;
    /// linear_test: decay, omega.
    std::map<std::string, double> params;
    double t_end = 50.0;
    int n_samples = 500;
    Sampling sampling = Sampling::regular;
    double jitter = 0.0;  ///< fraction of the nominal spacing, in [0, 0.9]
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    Vector initial_state;

    /// Default benchmark settings for each system.
    static GeneratorConfig defaults(System system);
    void validate() const;
    [[nodiscard]] double param(const std::string& key) const;
};

/// Generator matrix of the linear_test system: P [[r, w], [-w, r]] P^{-1}.
Matrix linear_test_generator(double decay, double omega);
/// Fixed mixing basis used by linear_test_generator.
Matrix linear_test_basis();

VectorField vector_field(const GeneratorConfig& config);
/// Maps an integrated state to a measurement vector at time t.
Vector measure(const GeneratorConfig& config, double t, const Vector& state);

/// Nominal observation times before jitter is applied.
Vector sample_times(const GeneratorConfig& config);
TimeSeries generate(const GeneratorConfig& config);

/// Angular frequencies of the generated dynamics: analytic where available,
/// otherwise measured from upward zero crossings of a long integration.
std::vector<double> reference_frequencies(const GeneratorConfig& config);

/// Header `t,y1,...,yM`; rows may be unsorted. Duplicate times and malformed
/// rows raise ParseError with the 1-based line number.
TimeSeries load_csv(const std::filesystem::path& path);
void save_csv(const TimeSeries& series, const std::filesystem::path& path);

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);

}  // namespace koopcast
