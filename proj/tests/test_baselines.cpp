#include "koopcast/baselines.hpp"
#include "koopcast/data.hpp"
#include "koopcast/errors.hpp"
#include "koopcast/harness.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace koopcast;
using Catch::Matchers::WithinAbs;
using cd = std::complex<double>;

namespace {

TimeSeries iterate_map(const Matrix& A, const Vector& x0, int N, double dt = 1.0) {
    TimeSeries s;
    s.times = Vector::LinSpaced(N, 0.0, dt * (N - 1));
    s.values.resize(N, x0.size());
    Vector x = x0;
    for (int n = 0; n < N; ++n) {
        s.values.row(n) = x.transpose();
        x = A * x;
    }
    return s;
}

Matrix rotation(double a) { return Matrix{{std::cos(a), -std::sin(a)}, {std::sin(a), std::cos(a)}}; }

// |<a, b>| / (|a| |b|) with the complex inner product; 1 means parallel.
double alignment(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
    return std::abs(a.dot(b)) / (a.norm() * b.norm());
}

}  // namespace

TEST_CASE("dmd recovers a rotation") {
    const Matrix R = rotation(0.3);
    const DmdModel m = dmd_fit(iterate_map(R, Vector{{1.0, 0.5}}, 40));
    CHECK((m.A - R).norm() < 1e-8);
    CHECK(m.dt == 1.0);
    const auto eig = continuous_spectrum(m);
    REQUIRE(eig.size() == 2);
    CHECK_THAT(eig[0].omega, WithinAbs(0.3, 1e-10));
    CHECK_THAT(eig[1].omega, WithinAbs(-0.3, 1e-10));
    CHECK_THAT(eig[0].r, WithinAbs(0.0, 1e-10));

    const auto modes = dmd_modes(m);
    REQUIRE(modes.size() == 2);
    CHECK(modes[0].r == modes[1].r);
    CHECK(std::abs(modes[0].r) < 1e-10);
}

TEST_CASE("constant series is a fixed point") {
    TimeSeries s;
    s.times = Vector::LinSpaced(10, 0.0, 0.9);
    s.values = Matrix::Zero(10, 2);
    s.values.col(0).setConstant(2.0);
    s.values.col(1).setConstant(-1.0);
    const DmdModel m = dmd_fit(s);
    const Vector y = s.values.row(0).transpose();
    CHECK((m.A * y - y).norm() < 1e-12);
    bool has_unit = false;
    for (Eigen::Index k = 0; k < m.eigenvalues.size(); ++k) has_unit |= std::abs(m.eigenvalues(k) - cd(1.0)) < 1e-10;
    CHECK(has_unit);
}

TEST_CASE("sine pair eigenvalue angles") {
    const double w = 1.7;
    const double dt = 0.05;
    TimeSeries s;
    s.times = Vector::LinSpaced(200, 0.0, dt * 199);
    s.values.resize(200, 2);
    for (Eigen::Index n = 0; n < 200; ++n) s.values.row(n) << std::sin(w * s.times(n)), std::cos(w * s.times(n));
    const DmdModel m = dmd_fit(s);
    CHECK_THAT(std::arg(m.eigenvalues(0)), WithinAbs(w * dt, 1e-6));
    CHECK_THAT(std::arg(m.eigenvalues(1)), WithinAbs(-w * dt, 1e-6));
}

TEST_CASE("continuous spectrum conversion") {
    DmdModel m;
    m.dt = 0.2;
    m.eigenvalues = Eigen::VectorXcd::Ones(1);
    auto s = continuous_spectrum(m);
    CHECK(s[0].r == 0.0);
    CHECK(s[0].omega == 0.0);

    m.eigenvalues(0) = std::exp(cd(-0.1, 0.5) * m.dt);
    s = continuous_spectrum(m);
    CHECK_THAT(s[0].r, WithinAbs(-0.1, 1e-10));
    CHECK_THAT(s[0].omega, WithinAbs(0.5, 1e-10));

    // Beyond pi / dt the principal branch aliases.
    m.eigenvalues(0) = std::exp(cd(0.0, 20.0) * m.dt);
    CHECK_THAT(continuous_spectrum(m)[0].omega, WithinAbs(20.0 - 2.0 * std::numbers::pi / m.dt, 1e-10));

    m.eigenvalues(0) = 0.0;
    CHECK_THROWS_AS(continuous_spectrum(m), DomainError);
}

TEST_CASE("continuous spectrum inverts the matrix exponential") {
    const Matrix L = linear_test_generator(-0.15, 0.9);
    const double dt = 0.1;
    const Eigen::EigenSolver<Matrix> es(L);
    const Eigen::MatrixXcd V = es.eigenvectors();
    const Eigen::MatrixXcd E = V * (es.eigenvalues() * dt).array().exp().matrix().asDiagonal() * V.inverse();
    const DmdModel m = dmd_fit(iterate_map(E.real(), Vector{{1.0, 0.0}}, 30, dt));
    const auto s = continuous_spectrum(m);
    CHECK_THAT(s[0].r, WithinAbs(-0.15, 1e-8));
    CHECK_THAT(s[0].omega, WithinAbs(0.9, 1e-8));
}

TEST_CASE("dmd input errors") {
    TimeSeries s = iterate_map(rotation(0.3), Vector{{1.0, 0.0}}, 20);
    s.times(7) += 0.3;
    CHECK_THROWS_AS(dmd_fit(s), FitError);

    CHECK_THROWS_AS(dmd_fit(iterate_map(rotation(0.3), Vector{{1.0, 0.0}}, 2)), DegenerateDataError);

    TimeSeries zeros;
    zeros.times = Vector::LinSpaced(10, 0.0, 9.0);
    zeros.values = Matrix::Zero(10, 2);
    CHECK_THROWS_AS(dmd_fit(zeros), FitError);
}

TEST_CASE("dmd modes are left eigenvectors") {
    const Matrix S{{2.0, 0.5}, {0.5, 1.0}};
    const DmdModel sym = dmd_fit(iterate_map(S * 0.5, Vector{{1.0, 0.3}}, 12));
    const auto modes = dmd_modes(sym);
    REQUIRE(modes.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        const Eigen::VectorXcd right = sym.eigenvectors.col(static_cast<Eigen::Index>(k));
        CHECK(alignment(modes[k].pattern.cast<cd>(), right) > 1 - 1e-9);
    }

    const double r = -0.05;
    const double w = 0.8;
    GeneratorConfig g = GeneratorConfig::defaults(System::linear_test);
    g.params = {{"decay", r}, {"omega", w}};
    g.t_end = 20.0;
    g.n_samples = 201;
    const DmdModel lin = dmd_fit(generate(g));
    const Eigen::MatrixXcd left = dmd_left_eigenvectors(lin);
    // Row (1, -i) P^{-1} is the analytic left eigenvector for r + i w.
    const Eigen::RowVectorXcd analytic = Eigen::RowVectorXcd{{cd(1, 0), cd(0, -1)}} * linear_test_basis().inverse().cast<cd>();
    CHECK(alignment(left.row(0).transpose(), analytic.transpose()) > 1 - 1e-6);
    const auto lin_modes = dmd_modes(lin);
    REQUIRE(lin_modes.size() == 2);
    CHECK_THAT(lin_modes[0].omega, WithinAbs(w, 1e-6));
    CHECK_THAT(lin_modes[0].r, WithinAbs(r, 1e-6));
    const Eigen::VectorXcd rebuilt = lin_modes[0].pattern.cast<cd>() + cd(0, 1) * lin_modes[1].pattern.cast<cd>();
    CHECK(alignment(rebuilt, analytic.transpose()) > 1 - 1e-6);
}

TEST_CASE("dmd forecast and serialization") {
    const Matrix R = rotation(0.3);
    const DmdModel m = dmd_fit(iterate_map(R, Vector{{1.0, 0.5}}, 40));
    const Vector y{{0.2, -0.7}};
    CHECK((dmd_forecast(m, y, 3) - R * R * R * y).norm() < 1e-8);
    CHECK_THROWS_AS(dmd_forecast(m, y, -1), DomainError);

    const DmdModel back = dmd_from_json(nlohmann::json::parse(dmd_to_json(m).dump()));
    CHECK(back.A == m.A);
    CHECK(back.dt == m.dt);
    CHECK_THROWS_AS(dmd_from_json(nlohmann::json{{"format", "koopcast-checkpoint"}}), ConfigError);

    const auto path = std::filesystem::temp_directory_path() / "koopcast_modes.csv";
    write_modes_csv(dmd_modes(m), path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "mode_index,r,omega,component_1,component_2");
    std::filesystem::remove(path);
}

TEST_CASE("constrained dmd with the true spectrum fits an exact oscillator") {
    const double w = 1.1;
    GeneratorConfig g = GeneratorConfig::defaults(System::linear_test);
    g.params = {{"decay", 0.0}, {"omega", w}};
    g.t_end = 30.0;
    g.n_samples = 300;
    const auto split = split_series(generate(g));
    SpectralConstraint c;
    c.decay = {Fixed{0.0}};
    c.frequency = {Fixed{w}};
    TrainConfig tc;
    tc.max_epochs = 2000;
    tc.nu_start = -5;
    tc.nu_end = 5;
    const auto result = dmdf_fit(split.train, split.validation, c, tc, 1);
    REQUIRE_FALSE(result.failure);
    const double initial = result.history.epochs.front().train_loss;
    const double final_loss = multistep_loss(result.model, split.train, tc.nu_start, tc.nu_end);
    CHECK(final_loss < 1e-4 * initial);
    CHECK(final_loss < 1e-3);
    for (const auto& e : result.history.epochs) {
        CHECK(e.spectrum.r(0) == 0.0);
        CHECK(e.spectrum.omega(0) == w);
    }
    const Matrix P = propagator_matrix(result.model.basis(), result.model.spectrum(), 1.0);
    const Eigen::VectorXcd ev = Eigen::EigenSolver<Matrix>(P).eigenvalues();
    for (Eigen::Index k = 0; k < ev.size(); ++k) CHECK(std::abs(std::abs(ev(k)) - 1.0) < 1e-12);
}

TEST_CASE("constrained dmd beats plain dmd on van der Pol") {
    const auto split = split_series(generate(GeneratorConfig::defaults(System::vanderpol)));
    const double truth = reference_frequencies(GeneratorConfig::defaults(System::vanderpol))[0];
    SpectralConstraint c;
    c.decay = {Fixed{0.0}};
    c.frequency = {Fixed{truth}};
    const auto constrained = dmdf_fit(split.train, split.validation, c, TrainConfig{}, 0);
    REQUIRE_FALSE(constrained.failure);
    const double dmdf_mse = test_mse(constrained.model, split);
    const double dmd_mse = test_mse(dmd_fit(split.train), split);
    INFO("dmdf " << dmdf_mse << " dmd " << dmd_mse);
    CHECK(dmdf_mse < dmd_mse);
}

TEST_CASE("dmdf requires matching dimensions") {
    const auto split = split_series(generate(GeneratorConfig::defaults(System::vanderpol)));
    CHECK_THROWS_AS(dmdf_fit(split.train, split.validation, SpectralConstraint::unconstrained(3), TrainConfig{}, 0),
                    ConfigError);
}
