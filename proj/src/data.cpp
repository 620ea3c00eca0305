#include "koopcast/data.hpp"

#include "koopcast/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace koopcast {

TimeSeries TimeSeries::slice(Eigen::Index start, Eigen::Index count) const {
    if (start < 0 || count < 0 || start + count > size()) throw DegenerateDataError("slice out of range");
    return {times.segment(start, count), values.middleRows(start, count), name};
}

void TimeSeries::validate() const {
    if (values.rows() != times.size()) throw DegenerateDataError("time series: times and values disagree in length");
    for (Eigen::Index n = 0; n + 1 < times.size(); ++n) {
        if (!(times(n + 1) > times(n))) {
            throw DegenerateDataError("time series: times must be strictly increasing (index " +
                                      std::to_string(n + 1) + ")");
        }
    }
    if (!times.allFinite() || !values.allFinite()) throw DegenerateDataError("time series: non-finite entry");
}

Vector rk4_step(const VectorField& f, const Vector& x, double t, double h) {
    const Vector k1 = f(t, x);
    const Vector k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
    const Vector k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
    const Vector k4 = f(t + h, x + h * k3);
    if (!k1.allFinite() || !k2.allFinite() || !k3.allFinite() || !k4.allFinite()) {
        throw IntegrationError("rk4: non-finite stage at t=" + format_double(t));
    }
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Matrix integrate(const VectorField& f, const Vector& x0, double t0, const Vector& times, double max_step,
                 int min_substeps) {
    if (!(max_step > 0.0)) throw IntegrationError("integrate: max_step must be positive");
    Matrix states(times.size(), x0.size());
    Vector x = x0;
    double t = t0;
    for (Eigen::Index i = 0; i < times.size(); ++i) {
        const double gap = times(i) - t;
        if (gap < 0.0) throw IntegrationError("integrate: times must not precede the start or decrease");
        if (gap > 0.0) {
            const auto steps = std::max<long>(min_substeps, static_cast<long>(std::ceil(gap / max_step)));
            const double h = gap / static_cast<double>(steps);
            for (long s = 0; s < steps; ++s) {
                x = rk4_step(f, x, t + static_cast<double>(s) * h, h);
            }
            t = times(i);
        }
        states.row(i) = x.transpose();
    }
    return states;
}

std::string to_string(System system) {
    switch (system) {
        case System::pendulum: return "pendulum";
        case System::vanderpol: return "vanderpol";
        case System::two_frequency: return "two_frequency";
        case System::linear_test: return "linear_test";
    }
    return "unknown";
}

System system_from_string(const std::string& name) {
    if (name == "pendulum") return System::pendulum;
    if (name == "vanderpol") return System::vanderpol;
    if (name == "two_frequency") return System::two_frequency;
    if (name == "linear_test") return System::linear_test;
    throw ConfigError("unknown system '" + name + "'");
}

GeneratorConfig GeneratorConfig::defaults(System system) {
    GeneratorConfig c;
    c.system = system;
    c.t_end = 50.0;
    c.n_samples = 500;
    switch (system) {
        case System::pendulum:
            c.params = {{"g_over_l", 1.0}};
            c.initial_state = Vector{{0.8 * std::numbers::pi, 0.0}};
            break;
        case System::vanderpol:
            c.params = {{"mu", 1.0}};
            c.initial_state = Vector{{2.0, 0.0}};
            break;
        case System::two_frequency:
            c.params = {{"mu", 1.0}, {"amplitude", 1.0}, {"sine_frequency", 2.0}};
            c.initial_state = Vector{{2.0, 0.0}};
            break;
        case System::linear_test:
            c.params = {{"decay", 0.0}, {"omega", 1.0}};
            c.initial_state = Vector{{1.0, 0.0}};
            break;
    }
    return c;
}

double GeneratorConfig::param(const std::string& key) const {
    if (auto it = params.find(key); it != params.end()) return it->second;
    const auto d = defaults(system).params;
    if (auto it = d.find(key); it != d.end()) return it->second;
    throw ConfigError("generator parameter '" + key + "' not defined for " + to_string(system));
}

void GeneratorConfig::validate() const {
    if (n_samples < 2) throw ConfigError("generator: n_samples must be at least 2");
    if (!(t_end > 0.0)) throw ConfigError("generator: t_end must be positive");
    if (!(noise_std >= 0.0)) throw ConfigError("generator: noise_std must be non-negative");
    if (!(jitter >= 0.0 && jitter <= 0.9)) throw ConfigError("generator: jitter must lie in [0, 0.9]");
    if (initial_state.size() != 2) throw ConfigError("generator: initial_state must have two entries");
}

Matrix linear_test_basis() { return Matrix{{1.0, 0.5}, {0.2, 1.0}}; }

Matrix linear_test_generator(double decay, double omega) {
    const Matrix P = linear_test_basis();
    const Matrix B{{decay, omega}, {-omega, decay}};
    return P * B * P.inverse();
}

VectorField vector_field(const GeneratorConfig& config) {
    switch (config.system) {
        case System::pendulum: {
            const double g_over_l = config.param("g_over_l");
            return [g_over_l](double, const Vector& x) { return Vector{{x(1), -g_over_l * std::sin(x(0))}}; };
        }
        case System::vanderpol:
        case System::two_frequency: {
            const double mu = config.param("mu");
            return [mu](double, const Vector& x) {
                return Vector{{x(1), mu * (1.0 - x(0) * x(0)) * x(1) - x(0)}};
            };
        }
        case System::linear_test: {
            const Matrix A = linear_test_generator(config.param("decay"), config.param("omega"));
            return [A](double, const Vector& x) { return Vector(A * x); };
        }
    }
    throw ConfigError("unknown system");
}

Vector measure(const GeneratorConfig& config, double t, const Vector& state) {
    if (config.system == System::two_frequency) {
        const double a = config.param("amplitude");
        const double w = config.param("sine_frequency");
        return state.array() + a * std::sin(w * t);
    }
    return state;
}

Vector sample_times(const GeneratorConfig& config) {
    return Vector::LinSpaced(config.n_samples, 0.0, config.t_end);
}

TimeSeries generate(const GeneratorConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    Vector times = sample_times(config);
    const double dt = config.t_end / static_cast<double>(config.n_samples - 1);
    if (config.sampling == Sampling::irregular && config.jitter > 0.0) {
        std::uniform_real_distribution<double> jitter(-config.jitter * dt, config.jitter * dt);
        for (Eigen::Index i = 1; i < times.size(); ++i) times(i) += jitter(rng);
        std::sort(times.begin(), times.end());
    }
    const Matrix states = integrate(vector_field(config), config.initial_state, 0.0, times, dt / 20.0);

    TimeSeries series;
    series.name = to_string(config.system) + (config.sampling == Sampling::irregular ? "_irregular" : "");
    series.times = times;
    series.values.resize(times.size(), 2);
    for (Eigen::Index i = 0; i < times.size(); ++i) {
        series.values.row(i) = measure(config, times(i), states.row(i).transpose()).transpose();
    }
    if (config.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, config.noise_std);
        for (Eigen::Index i = 0; i < series.values.rows(); ++i) {
            for (Eigen::Index j = 0; j < series.values.cols(); ++j) series.values(i, j) += noise(rng);
        }
    }
    series.validate();
    return series;
}

namespace {

// Mean angular frequency from upward zero crossings of the first state
// coordinate, ignoring the first quarter of the horizon as transient.
double measured_frequency(const VectorField& f, const Vector& x0) {
    constexpr double kHorizon = 400.0;
    constexpr double kStep = 0.005;
    std::vector<double> crossings;
    Vector x = x0;
    double t = 0.0;
    while (t < kHorizon) {
        const Vector next = rk4_step(f, x, t, kStep);
        if (t > 0.25 * kHorizon && x(0) < 0.0 && next(0) >= 0.0) {
            crossings.push_back(t + kStep * (-x(0)) / (next(0) - x(0)));
        }
        x = next;
        t += kStep;
    }
    if (crossings.size() < 2) throw IntegrationError("reference frequency: no oscillation detected");
    const double period = (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
    return 2.0 * std::numbers::pi / period;
}

}  // namespace

std::vector<double> reference_frequencies(const GeneratorConfig& config) {
    switch (config.system) {
        case System::linear_test:
            return {std::abs(config.param("omega"))};
        case System::pendulum:
        case System::vanderpol:
            return {measured_frequency(vector_field(config), config.initial_state)};
        case System::two_frequency:
            return {measured_frequency(vector_field(config), config.initial_state), config.param("sine_frequency")};
    }
    return {};
}

std::string format_double(double value) {
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, result.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

double parse_number(std::string_view field, std::size_t line) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
        throw ParseError("invalid number '" + std::string(field) + "'", line);
    }
    return value;
}

}  // namespace

TimeSeries load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    ++line_no;
    const auto header = split_fields(line);
    if (header.size() < 2 || header[0] != "t") throw ParseError("header must be t,y1,...,yM", line_no);
    for (std::size_t j = 1; j < header.size(); ++j) {
        if (header[j] != "y" + std::to_string(j)) throw ParseError("header must be t,y1,...,yM", line_no);
    }
    const std::size_t m = header.size() - 1;

    struct Row {
        double t;
        std::vector<double> y;
        std::size_t line;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != m + 1) {
            throw ParseError("expected " + std::to_string(m + 1) + " fields, got " + std::to_string(fields.size()),
                             line_no);
        }
        Row row{parse_number(fields[0], line_no), {}, line_no};
        for (std::size_t j = 1; j <= m; ++j) row.y.push_back(parse_number(fields[j], line_no));
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].t == rows[i - 1].t) {
            throw ParseError("duplicate timestamp " + format_double(rows[i].t),
                             std::max(rows[i].line, rows[i - 1].line));
        }
    }

    TimeSeries series;
    series.name = path.stem().string();
    series.times.resize(static_cast<Eigen::Index>(rows.size()));
    series.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto n = static_cast<Eigen::Index>(i);
        series.times(n) = rows[i].t;
        for (std::size_t j = 0; j < m; ++j) series.values(n, static_cast<Eigen::Index>(j)) = rows[i].y[j];
    }
    return series;
}

void save_csv(const TimeSeries& series, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << 't';
    for (Eigen::Index j = 0; j < series.dim(); ++j) out << ",y" << (j + 1);
    out << '\n';
    for (Eigen::Index n = 0; n < series.size(); ++n) {
        out << format_double(series.times(n));
        for (Eigen::Index j = 0; j < series.dim(); ++j) out << ',' << format_double(series.values(n, j));
        out << '\n';
    }
    if (!out) throw Error("failed writing " + path.string());
}

}  // namespace koopcast
