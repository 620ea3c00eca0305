#include "koopcast/harness.hpp"

#include "koopcast/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

namespace koopcast {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Method method) {
    switch (method) {
        case Method::koopman: return "koopman";
        case Method::dmd: return "dmd";
        case Method::dmdf: return "dmdf";
    }
    return "unknown";
}

Method method_from_string(const std::string& name) {
    if (name == "koopman") return Method::koopman;
    if (name == "dmd") return Method::dmd;
    if (name == "dmdf") return Method::dmdf;
    throw ConfigError("unknown method '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (schema_version != kConfigSchemaVersion) {
        throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
    }
    if (n_seeds < 1) throw ConfigError("n_seeds must be at least 1");
    if (!generator && csv.empty()) throw ConfigError("data: need a generator or a csv path");
    if (generator) generator->validate();
    if (model.K < 1) throw ConfigError("model.K must be positive");
    for (int h : model.hidden) {
        if (h < 1) throw ConfigError("model.hidden sizes must be positive");
    }
    if (constraint.dimension() != model.K) throw ConfigError("constraint dimension does not match model.K");
    constraint.validate();
    train.validate();
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!ok.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

GeneratorConfig parse_generator(const json& j) {
    check_keys(j, {"system", "params", "t_end", "n_samples", "sampling", "jitter", "noise_std", "seed", "initial_state"},
               "data.generator");
    GeneratorConfig g = GeneratorConfig::defaults(system_from_string(j.at("system").get<std::string>()));
    if (j.contains("params")) {
        for (const auto& [key, value] : j.at("params").items()) g.params[key] = value.get<double>();
    }
    g.t_end = j.value("t_end", g.t_end);
    g.n_samples = j.value("n_samples", g.n_samples);
    const auto sampling = j.value("sampling", std::string("regular"));
    if (sampling == "regular") {
        g.sampling = Sampling::regular;
    } else if (sampling == "irregular") {
        g.sampling = Sampling::irregular;
    } else {
        throw ConfigError("data.generator.sampling must be 'regular' or 'irregular'");
    }
    g.jitter = j.value("jitter", g.jitter);
    g.noise_std = j.value("noise_std", g.noise_std);
    g.seed = j.value("seed", g.seed);
    if (j.contains("initial_state")) {
        const auto x0 = j.at("initial_state").get<std::vector<double>>();
        g.initial_state = Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size()));
    }
    g.validate();
    return g;
}

json generator_to_json(const GeneratorConfig& g) {
    json params = json::object();
    for (const auto& [key, value] : g.params) params[key] = value;
    return {{"system", to_string(g.system)},
            {"params", params},
            {"t_end", g.t_end},
            {"n_samples", g.n_samples},
            {"sampling", g.sampling == Sampling::regular ? "regular" : "irregular"},
            {"jitter", g.jitter},
            {"noise_std", g.noise_std},
            {"seed", g.seed},
            {"initial_state", std::vector<double>(g.initial_state.data(), g.initial_state.data() + g.initial_state.size())}};
}

double truth_at(const std::vector<double>& truth, std::size_t index) {
    if (index >= truth.size()) {
        throw ConfigError("constraint refers to true frequency #" + std::to_string(index) +
                          " but only " + std::to_string(truth.size()) + " are known");
    }
    return truth[index];
}

// Rewrites "truth" placeholders and centre/width ranges into plain numbers.
json resolve_entry(const json& entry, std::size_t position, const std::vector<double>& truth) {
    json out = entry;
    const std::size_t index = entry.value("truth_index", position);
    out.erase("truth_index");
    auto number_or_truth = [&](const json& v) {
        if (v.is_string()) {
            if (v.get<std::string>() != "truth") throw ConfigError("expected a number or \"truth\"");
            return truth_at(truth, index);
        }
        return v.get<double>();
    };
    const auto kind = entry.at("kind").get<std::string>();
    if (kind == "fixed") out["value"] = number_or_truth(entry.at("value"));
    if (kind == "range" && entry.contains("width")) {
        const double centre = number_or_truth(entry.at("center"));
        const double width = entry.at("width").get<double>();
        out.erase("center");
        out.erase("width");
        out["start"] = centre - 0.5 * width;
        out["end"] = centre + 0.5 * width;
    }
    return out;
}

SpectralConstraint parse_constraint(const json& j, const std::vector<double>& truth) {
    check_keys(j, {"decay", "frequency"}, "constraint");
    json resolved{{"decay", json::array()}, {"frequency", json::array()}};
    std::size_t i = 0;
    for (const auto& s : j.at("decay")) resolved["decay"].push_back(resolve_entry(s, i++, {}));
    i = 0;
    for (const auto& s : j.at("frequency")) resolved["frequency"].push_back(resolve_entry(s, i++, truth));
    return constraint_from_json(resolved);
}

}  // namespace

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
    try {
        check_keys(j, {"schema_version", "name", "method", "data", "model", "constraint", "train", "n_seeds", "seed_offset"},
                   "config");
        ExperimentConfig c;
        c.schema_version = j.at("schema_version").get<int>();
        if (c.schema_version != kConfigSchemaVersion) {
            throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
        }
        c.name = j.value("name", c.name);
        c.method = method_from_string(j.value("method", std::string("koopman")));

        const json& data = j.at("data");
        check_keys(data, {"generator", "csv", "true_frequencies"}, "data");
        if (data.contains("generator")) {
            c.generator = parse_generator(data.at("generator"));
        } else if (data.contains("csv")) {
            const fs::path p = data.at("csv").get<std::string>();
            c.csv = p.is_absolute() ? p : base_dir / p;
        }
        if (data.contains("true_frequencies")) {
            c.true_frequencies = data.at("true_frequencies").get<std::vector<double>>();
        } else if (c.generator) {
            c.true_frequencies = reference_frequencies(*c.generator);
        }

        if (j.contains("model")) {
            const json& m = j.at("model");
            check_keys(m, {"K", "hidden", "time_mode", "standardize"}, "model");
            c.model.K = m.value("K", c.model.K);
            c.model.hidden = m.value("hidden", c.model.hidden);
            c.model.time_mode = time_mode_from_string(m.value("time_mode", std::string("continuous")));
            c.model.standardize = m.value("standardize", c.model.standardize);
        }
        if (c.method == Method::dmdf) {
            c.model.hidden.clear();
            c.model.standardize = false;
        }
        c.constraint = j.contains("constraint") ? parse_constraint(j.at("constraint"), c.true_frequencies)
                                                : SpectralConstraint::unconstrained(c.model.K);

        if (j.contains("train")) {
            const json& t = j.at("train");
            check_keys(t, {"nu_start", "nu_end", "learning_rate", "max_epochs", "patience", "beta1", "beta2", "epsilon", "seed"},
                       "train");
            c.train.nu_start = t.value("nu_start", c.train.nu_start);
            c.train.nu_end = t.value("nu_end", c.train.nu_end);
            c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
            c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
            c.train.patience = t.value("patience", c.train.patience);
            c.train.beta1 = t.value("beta1", c.train.beta1);
            c.train.beta2 = t.value("beta2", c.train.beta2);
            c.train.epsilon = t.value("epsilon", c.train.epsilon);
            c.train.seed = t.value("seed", c.train.seed);
        }
        c.n_seeds = j.value("n_seeds", c.n_seeds);
        c.seed_offset = j.value("seed_offset", c.seed_offset);
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path());
}

json config_to_json(const ExperimentConfig& c) {
    json data = json::object();
    if (c.generator) {
        data["generator"] = generator_to_json(*c.generator);
    } else {
        data["csv"] = c.csv.string();
    }
    data["true_frequencies"] = c.true_frequencies;
    return {{"schema_version", c.schema_version},
            {"name", c.name},
            {"method", to_string(c.method)},
            {"data", data},
            {"model",
             {{"K", c.model.K},
              {"hidden", c.model.hidden},
              {"time_mode", to_string(c.model.time_mode)},
              {"standardize", c.model.standardize}}},
            {"constraint", constraint_to_json(c.constraint)},
            {"train",
             {{"nu_start", c.train.nu_start},
              {"nu_end", c.train.nu_end},
              {"learning_rate", c.train.learning_rate},
              {"max_epochs", c.train.max_epochs},
              {"patience", c.train.patience},
              {"beta1", c.train.beta1},
              {"beta2", c.train.beta2},
              {"epsilon", c.train.epsilon},
              {"seed", c.train.seed}}},
            {"n_seeds", c.n_seeds},
            {"seed_offset", c.seed_offset}};
}

TimeSeries load_dataset(const ExperimentConfig& config, std::uint64_t run_seed) {
    if (config.generator) {
        GeneratorConfig g = *config.generator;
        g.seed += run_seed;
        return generate(g);
    }
    TimeSeries series = load_csv(config.csv);
    series.validate();
    return series;
}

double test_mse(const KoopmanModel& model, const SeriesSplit& split) {
    const Eigen::Index last = split.train.size() - 1;
    const Vector anchor = split.train.values.row(last).transpose();
    Vector horizons = split.test.times.array() - split.train.times(last);
    if (model.time_mode == TimeMode::discrete) {
        // Step counts: test row n sits (validation + n + 1) observations after the anchor.
        const Eigen::Index offset = split.validation.size() + 1;
        horizons = Vector::LinSpaced(split.test.size(), static_cast<double>(offset),
                                     static_cast<double>(offset + split.test.size() - 1));
    }
    const Matrix predicted = forecast_many(model, anchor, horizons);
    return (predicted - split.test.values.transpose()).colwise().squaredNorm().mean();
}

double test_mse(const DmdModel& model, const SeriesSplit& split) {
    const Eigen::Index last = split.train.size() - 1;
    Vector x = split.train.values.row(last).transpose();
    long at = 0;
    double total = 0.0;
    for (Eigen::Index n = 0; n < split.test.size(); ++n) {
        const double steps = (split.test.times(n) - split.train.times(last)) / model.dt;
        const double rounded = std::round(steps);
        if (std::abs(steps - rounded) > 1e-6 * std::max(1.0, rounded)) {
            throw FitError("dmd evaluation requires test times on the training grid");
        }
        for (; at < static_cast<long>(rounded); ++at) x = model.A * x;
        total += (x - split.test.values.row(n).transpose()).squaredNorm();
    }
    return total / static_cast<double>(split.test.size());
}

double frequency_mae(const std::vector<double>& estimated, const std::vector<double>& truth) {
    std::vector<double> pool;
    for (double w : estimated) pool.push_back(std::abs(w));
    double total = 0.0;
    std::size_t matched = 0;
    for (double target : truth) {
        if (pool.empty()) break;
        auto best = std::min_element(pool.begin(), pool.end(), [target](double a, double b) {
            return std::abs(a - target) < std::abs(b - target);
        });
        total += std::abs(*best - target);
        pool.erase(best);
        ++matched;
    }
    if (matched == 0) return std::numeric_limits<double>::quiet_NaN();
    return total / static_cast<double>(matched);
}

Summary summarize(std::vector<double> values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) {
        s.mean = s.median = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        s.std_error = sd / std::sqrt(static_cast<double>(values.size()));
    }
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    s.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    return s;
}

std::size_t MetricsReport::failures() const {
    return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const auto& s) { return !s.ok; }));
}

std::vector<double> MetricsReport::test_mse_values() const {
    std::vector<double> out;
    for (const auto& s : seeds) {
        if (s.ok) out.push_back(s.test_mse);
    }
    return out;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json summary_to_json(const Summary& s) {
    return {{"mean", number_or_null(s.mean)},
            {"std_error", number_or_null(s.std_error)},
            {"median", number_or_null(s.median)},
            {"count", s.count}};
}

}  // namespace

json MetricsReport::to_json() const {
    json seeds_json = json::array();
    for (const auto& s : seeds) {
        json item{{"seed", s.seed}, {"status", s.ok ? "ok" : "failed"}};
        if (!s.ok) item["failure"] = s.failure;
        item["test_mse"] = number_or_null(s.test_mse);
        if (s.frequency_mae) item["frequency_mae"] = number_or_null(*s.frequency_mae);
        item["r"] = s.r;
        item["omega"] = s.omega;
        if (s.epochs > 0) {
            item["epochs"] = s.epochs;
            item["best_epoch"] = s.best_epoch;
        }
        seeds_json.push_back(std::move(item));
    }
    json j{{"name", name}, {"method", koopcast::to_string(method)}, {"failures", failures()},
           {"test_mse", summary_to_json(test_mse)}};
    if (frequency_mae) j["frequency_mae"] = summary_to_json(*frequency_mae);
    j["seeds"] = seeds_json;
    return j;
}

MetricsReport make_report(const ExperimentConfig& config, std::vector<SeedOutcome> outcomes) {
    MetricsReport report;
    report.name = config.name;
    report.method = config.method;
    report.seeds = std::move(outcomes);
    report.test_mse = summarize(report.test_mse_values());
    std::vector<double> maes;
    for (const auto& s : report.seeds) {
        if (s.ok && s.frequency_mae) maes.push_back(*s.frequency_mae);
        report.wall_seconds += s.wall_seconds;
    }
    if (!maes.empty()) report.frequency_mae = summarize(maes);
    return report;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

fs::path seed_dir(const fs::path& out_dir, std::uint64_t seed) { return out_dir / ("seed_" + std::to_string(seed)); }

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<double> estimated_frequencies(const FittedModel& model) {
    if (const auto* km = std::get_if<KoopmanModel>(&model)) {
        const auto s = km->spectrum();
        return {s.omega.data(), s.omega.data() + s.omega.size()};
    }
    std::vector<double> out;
    for (const auto& e : continuous_spectrum(std::get<DmdModel>(model))) {
        if (e.omega > 0.0) out.push_back(e.omega);
    }
    return out;
}

void fill_evaluation(SeedOutcome& outcome, const ExperimentConfig& config, const SeriesSplit& split,
                     const FittedModel& model) {
    if (const auto* km = std::get_if<KoopmanModel>(&model)) {
        outcome.test_mse = test_mse(*km, split);
        const auto s = km->spectrum();
        outcome.r.assign(s.r.data(), s.r.data() + s.r.size());
        outcome.omega.assign(s.omega.data(), s.omega.data() + s.omega.size());
    } else {
        const auto& dmd = std::get<DmdModel>(model);
        outcome.test_mse = test_mse(dmd, split);
        outcome.r.clear();
        outcome.omega.clear();
        for (const auto& e : continuous_spectrum(dmd)) {
            outcome.r.push_back(e.r);
            outcome.omega.push_back(e.omega);
        }
    }
    if (!config.true_frequencies.empty()) {
        const auto est = estimated_frequencies(model);
        if (!est.empty()) outcome.frequency_mae = frequency_mae(est, config.true_frequencies);
    }
}

}  // namespace

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t run_seed) {
    const auto started = std::chrono::steady_clock::now();
    SeedRun run;
    run.outcome.seed = run_seed;
    try {
        const SeriesSplit split = split_series(load_dataset(config, run_seed));
        const auto M = static_cast<int>(split.train.dim());
        std::optional<std::string> failure;
        switch (config.method) {
            case Method::koopman: {
                KoopmanModel init = init_model(M, config.model.K, config.model.hidden, config.constraint,
                                               config.train.seed + run_seed, config.model.time_mode);
                if (config.model.standardize) init.normalizer = Normalizer::fit(split.train.values);
                TrainResult result = train(init, split.train, split.validation, config.train);
                failure = result.failure;
                run.history = std::move(result.history);
                run.model = std::move(result.model);
                break;
            }
            case Method::dmdf: {
                TrainResult result =
                    dmdf_fit(split.train, split.validation, config.constraint, config.train, config.train.seed + run_seed);
                failure = result.failure;
                run.history = std::move(result.history);
                run.model = std::move(result.model);
                break;
            }
            case Method::dmd:
                run.model = dmd_fit(split.train);
                break;
        }
        run.outcome.epochs = static_cast<int>(run.history.epochs.size());
        run.outcome.best_epoch = run.history.best_epoch;
        fill_evaluation(run.outcome, config, split, *run.model);
        run.outcome.ok = !failure.has_value();
        if (failure) run.outcome.failure = *failure;
    } catch (const Error& e) {
        run.outcome.ok = false;
        run.outcome.failure = e.what();
    }
    run.outcome.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return run;
}

SeedOutcome evaluate_seed(const ExperimentConfig& config, std::uint64_t run_seed, const FittedModel& model) {
    const auto started = std::chrono::steady_clock::now();
    SeedOutcome outcome;
    outcome.seed = run_seed;
    try {
        const SeriesSplit split = split_series(load_dataset(config, run_seed));
        fill_evaluation(outcome, config, split, model);
        outcome.ok = true;
    } catch (const Error& e) {
        outcome.ok = false;
        outcome.failure = e.what();
    }
    outcome.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return outcome;
}

std::vector<SeedRun> run_seeds(const ExperimentConfig& config) {
    config.validate();
    std::vector<SeedRun> runs(static_cast<std::size_t>(config.n_seeds));
    parallel_for(runs.size(), [&](std::size_t i) { runs[i] = run_seed(config, config.seed_offset + i); });
    return runs;
}

MetricsReport run_experiment(const ExperimentConfig& config) {
    auto runs = run_seeds(config);
    std::vector<SeedOutcome> outcomes;
    for (auto& r : runs) outcomes.push_back(std::move(r.outcome));
    return make_report(config, std::move(outcomes));
}

void write_metrics(const MetricsReport& report, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    write_text(out_dir / "metrics.json", report.to_json().dump(2) + "\n");
    std::string csv = "seed,status,test_mse,frequency_mae\n";
    for (const auto& s : report.seeds) {
        csv += std::to_string(s.seed) + "," + (s.ok ? "ok" : "failed") + "," + format_double(s.test_mse) + "," +
               (s.frequency_mae ? format_double(*s.frequency_mae) : "") + "\n";
    }
    write_text(out_dir / "metrics.csv", csv);
}

fs::path cmd_generate(const ExperimentConfig& config, const fs::path& out_dir) {
    config.validate();
    fs::create_directories(out_dir);
    const fs::path path = out_dir / (config.name + ".csv");
    save_csv(load_dataset(config, config.seed_offset), path);
    return path;
}

bool TrainSummary::all_ok() const {
    return std::all_of(seeds.begin(), seeds.end(), [](const auto& s) { return s.ok; });
}

FittedModel load_fitted(const fs::path& checkpoint) {
    std::ifstream in(checkpoint, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + checkpoint.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("checkpoint " + checkpoint.string() + ": " + e.what());
    }
    if (j.value("format", std::string()) == "koopcast-dmd") return dmd_from_json(j);
    return model_from_json(j);
}

void save_fitted(const FittedModel& model, const fs::path& checkpoint) {
    if (const auto* km = std::get_if<KoopmanModel>(&model)) {
        save_checkpoint(*km, checkpoint);
        return;
    }
    write_text(checkpoint, dmd_to_json(std::get<DmdModel>(model)).dump(2) + "\n");
}

TrainSummary cmd_train(const ExperimentConfig& config, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", config_to_json(config).dump(2) + "\n");
    auto runs = run_seeds(config);
    TrainSummary summary;
    json seeds = json::array();
    for (auto& run : runs) {
        const fs::path dir = seed_dir(out_dir, run.outcome.seed);
        fs::create_directories(dir);
        if (run.model) save_fitted(*run.model, dir / "checkpoint.json");
        if (config.method != Method::dmd) write_history_csv(run.history, dir / "history.csv");
        json item{{"seed", run.outcome.seed},
                  {"status", run.outcome.ok ? "ok" : "failed"},
                  {"epochs", run.outcome.epochs},
                  {"best_epoch", run.outcome.best_epoch}};
        if (run.history.best_epoch >= 0) {
            item["best_validation_loss"] =
                number_or_null(run.history.epochs[static_cast<std::size_t>(run.history.best_epoch)].validation_loss);
        }
        if (!run.outcome.ok) item["failure"] = run.outcome.failure;
        seeds.push_back(std::move(item));
        summary.seeds.push_back(std::move(run.outcome));
    }
    write_text(out_dir / "train_summary.json",
               json{{"name", config.name}, {"method", to_string(config.method)}, {"seeds", seeds}}.dump(2) + "\n");
    return summary;
}

MetricsReport cmd_evaluate(const ExperimentConfig& config, const fs::path& out_dir) {
    config.validate();
    std::vector<SeedOutcome> outcomes(static_cast<std::size_t>(config.n_seeds));
    parallel_for(outcomes.size(), [&](std::size_t i) {
        const std::uint64_t seed = config.seed_offset + i;
        const fs::path checkpoint = seed_dir(out_dir, seed) / "checkpoint.json";
        if (!fs::exists(checkpoint)) {
            outcomes[i].seed = seed;
            outcomes[i].failure = "missing checkpoint " + checkpoint.string();
            return;
        }
        try {
            outcomes[i] = evaluate_seed(config, seed, load_fitted(checkpoint));
        } catch (const Error& e) {
            outcomes[i].seed = seed;
            outcomes[i].failure = e.what();
        }
    });
    MetricsReport report = make_report(config, std::move(outcomes));
    write_metrics(report, out_dir);
    return report;
}

fs::path cmd_modes(const fs::path& checkpoint, const fs::path& out_dir) {
    const FittedModel model = load_fitted(checkpoint);
    const auto modes = std::holds_alternative<KoopmanModel>(model) ? dynamic_modes(std::get<KoopmanModel>(model))
                                                                   : dmd_modes(std::get<DmdModel>(model));
    fs::create_directories(out_dir);
    const fs::path path = out_dir / "modes.csv";
    write_modes_csv(modes, path);
    return path;
}

ExperimentConfig with_frequency_width(const ExperimentConfig& config, double width) {
    if (config.true_frequencies.empty()) throw ConfigError("sweep-range needs known true frequencies");
    if (!(width >= 0.0)) throw ConfigError("range width must be non-negative");
    ExperimentConfig c = config;
    const std::size_t n = std::min(c.constraint.frequency.size(), c.true_frequencies.size());
    for (std::size_t k = 0; k < n; ++k) {
        const double truth = c.true_frequencies[k];
        ParamSpec& entry = c.constraint.frequency[k];
        if (width == 0.0) {
            entry = Fixed{truth};
        } else if (std::isinf(width)) {
            const auto* free = std::get_if<Free>(&entry);
            entry = Free{free ? free->init : 0.0};
        } else {
            entry = Range{truth - 0.5 * width, truth + 0.5 * width, 0.0};
        }
    }
    c.name = config.name + "_width_" + format_double(width);
    c.validate();
    return c;
}

std::vector<SweepRow> cmd_sweep_range(const ExperimentConfig& config, const std::vector<double>& widths,
                                      const fs::path& out_dir) {
    std::vector<SweepRow> rows;
    for (double w : widths) rows.push_back({w, run_experiment(with_frequency_width(config, w))});
    fs::create_directories(out_dir);
    std::string table = "width,n_ok,test_mse_mean,test_mse_std_error,test_mse_median\n";
    std::string per_seed = "width,seed,status,test_mse\n";
    for (const auto& row : rows) {
        const auto& s = row.report.test_mse;
        table += format_double(row.width) + "," + std::to_string(s.count) + "," + format_double(s.mean) + "," +
                 format_double(s.std_error) + "," + format_double(s.median) + "\n";
        for (const auto& seed : row.report.seeds) {
            per_seed += format_double(row.width) + "," + std::to_string(seed.seed) + "," + (seed.ok ? "ok" : "failed") +
                        "," + format_double(seed.test_mse) + "\n";
        }
    }
    write_text(out_dir / "sweep_range.csv", table);
    write_text(out_dir / "sweep_range_seeds.csv", per_seed);
    return rows;
}

}  // namespace koopcast
