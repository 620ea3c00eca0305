#include "koopcast/errors.hpp"
#include "koopcast/harness.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace koopcast;
using nlohmann::json;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

json base_config() {
    return json::parse(R"({
      "schema_version": 1,
      "name": "tiny",
      "data": {"generator": {"system": "vanderpol", "t_end": 20, "n_samples": 100}},
      "model": {"K": 2, "hidden": [4]},
      "constraint": {
        "decay": [{"kind": "fixed", "value": 0}],
        "frequency": [{"kind": "fixed", "value": "truth"}]
      },
      "train": {"nu_start": -3, "nu_end": 3, "max_epochs": 30, "patience": 10},
      "n_seeds": 2
    })");
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("koopcast_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config parsing resolves truth placeholders") {
    const ExperimentConfig c = parse_config(base_config());
    REQUIRE(c.true_frequencies.size() == 1);
    CHECK_THAT(c.true_frequencies[0], WithinAbs(0.943, 0.001));
    CHECK(std::get<Fixed>(c.constraint.frequency[0]).value == c.true_frequencies[0]);
    CHECK(c.train.nu_start == -3);
    CHECK(c.train.learning_rate == 1e-2);
    CHECK(c.n_seeds == 2);

    json j = base_config();
    j["constraint"]["frequency"][0] = {{"kind", "range"}, {"center", "truth"}, {"width", 0.1}};
    const auto range = std::get<Range>(parse_config(j).constraint.frequency[0]);
    CHECK_THAT(range.end - range.start, WithinAbs(0.1, 1e-12));
    CHECK_THAT(0.5 * (range.start + range.end), WithinAbs(c.true_frequencies[0], 1e-12));

    j["data"]["true_frequencies"] = {1.25};
    CHECK(std::get<Range>(parse_config(j).constraint.frequency[0]).start == 1.2);
}

TEST_CASE("config parsing defaults and method adjustments") {
    json j = base_config();
    j.erase("constraint");
    const ExperimentConfig free = parse_config(j);
    CHECK(std::holds_alternative<Free>(free.constraint.decay[0]));
    CHECK(std::holds_alternative<Free>(free.constraint.frequency[0]));

    j = base_config();
    j["method"] = "dmdf";
    const ExperimentConfig dmdf = parse_config(j);
    CHECK(dmdf.model.hidden.empty());
    CHECK_FALSE(dmdf.model.standardize);
}

TEST_CASE("config errors") {
    json j = base_config();
    j["surprise"] = 1;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = base_config();
    j["schema_version"] = 2;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = base_config();
    j["data"]["generator"]["system"] = "lorenz";
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = base_config();
    j["model"]["K"] = 3;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = base_config();
    j["n_seeds"] = 0;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = base_config();
    j["train"]["max_epochs"] = "many";
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = base_config();
    j["constraint"]["frequency"][0]["truth_index"] = 4;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config survives a JSON round trip") {
    const ExperimentConfig c = parse_config(base_config());
    const ExperimentConfig back = parse_config(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("frequency MAE") {
    CHECK(frequency_mae({0.943}, {0.943}) == 0.0);
    CHECK_THAT(frequency_mae({-0.95}, {0.94}), WithinAbs(0.01, 1e-12));
    CHECK_THAT(frequency_mae({2.1, 0.9}, {1.0, 2.0}), WithinAbs(0.1, 1e-12));
    CHECK(std::isnan(frequency_mae({}, {1.0})));
}

TEST_CASE("summary statistics") {
    const Summary s = summarize({1.0, 2.0, 3.0, 10.0});
    CHECK(s.mean == 4.0);
    CHECK(s.median == 2.5);
    CHECK(s.count == 4);
    const double sd = std::sqrt((9.0 + 4.0 + 1.0 + 36.0) / 3.0);
    CHECK_THAT(s.std_error, WithinAbs(sd / 2.0, 1e-15));
    CHECK(summarize({5.0}).std_error == 0.0);
}

TEST_CASE("test MSE of exact models is zero") {
    GeneratorConfig g = GeneratorConfig::defaults(System::linear_test);
    g.params = {{"decay", -0.02}, {"omega", 0.9}};
    const SeriesSplit split = split_series(generate(g));

    SpectralConstraint c;
    c.decay = {Fixed{-0.02}};
    c.frequency = {Fixed{0.9}};
    KoopmanModel exact = init_linear_model(2, c, 0);
    const EigenBasis P = EigenBasis::from_assembled(linear_test_basis());
    exact.basis_u.value = P.U;
    exact.basis_z.value = P.Z;
    CHECK(test_mse(exact, split) < 1e-12);
    CHECK(test_mse(dmd_fit(split.train), split) < 1e-12);
}

TEST_CASE("generate writes a deterministic CSV") {
    json j = base_config();
    j["data"]["generator"] = {{"system", "vanderpol"}};
    const ExperimentConfig c = parse_config(j);
    const fs::path out = scratch("generate");
    const fs::path first = cmd_generate(c, out / "a");
    const fs::path second = cmd_generate(c, out / "b");
    const TimeSeries s = load_csv(first);
    CHECK(s.size() == 500);
    CHECK(s.dim() == 2);
    CHECK(slurp(first) == slurp(second));
    fs::remove_all(out);
}

TEST_CASE("zero-epoch training checkpoints the initial model") {
    json j = base_config();
    j["train"]["max_epochs"] = 0;
    j["n_seeds"] = 1;
    const ExperimentConfig c = parse_config(j);
    const fs::path out = scratch("zero");
    const TrainSummary summary = cmd_train(c, out);
    CHECK(summary.all_ok());
    const KoopmanModel saved = load_checkpoint(out / "seed_0" / "checkpoint.json");
    KoopmanModel init = init_model(2, 2, {4}, c.constraint, c.train.seed, c.model.time_mode);
    init.normalizer = Normalizer::fit(split_series(load_dataset(c, 0)).train.values);
    CHECK(model_to_json(saved) == model_to_json(init));
    fs::remove_all(out);
}

TEST_CASE("train and evaluate are reproducible and agree with the in-memory run") {
    const ExperimentConfig c = parse_config(base_config());
    const fs::path out = scratch("train");
    const TrainSummary a = cmd_train(c, out / "a");
    const TrainSummary b = cmd_train(c, out / "b");
    CHECK(a.all_ok());
    for (const char* f : {"seed_0/checkpoint.json", "seed_1/history.csv", "train_summary.json", "config.json"}) {
        INFO(f);
        CHECK(slurp(out / "a" / f) == slurp(out / "b" / f));
    }
    const MetricsReport evaluated = cmd_evaluate(c, out / "a");
    const MetricsReport direct = run_experiment(c);
    REQUIRE(evaluated.seeds.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(evaluated.seeds[i].ok);
        CHECK(evaluated.seeds[i].test_mse == direct.seeds[i].test_mse);
        CHECK(evaluated.seeds[i].frequency_mae == direct.seeds[i].frequency_mae);
    }
    CHECK(evaluated.frequency_mae->mean == 0.0);

    const std::string metrics = slurp(out / "a" / "metrics.json");
    CHECK(metrics.find("wall") == std::string::npos);
    cmd_evaluate(c, out / "a");
    CHECK(slurp(out / "a" / "metrics.json") == metrics);

    const fs::path modes = cmd_modes(out / "a" / "seed_0" / "checkpoint.json", out / "modes");
    CHECK(fs::exists(modes));
    fs::remove_all(out);
}

TEST_CASE("evaluation without checkpoints reports failures") {
    const ExperimentConfig c = parse_config(base_config());
    const fs::path out = scratch("missing");
    const MetricsReport r = cmd_evaluate(c, out);
    CHECK(r.failures() == 2);
    CHECK(r.seeds[0].failure.find("missing checkpoint") != std::string::npos);
    fs::remove_all(out);
}

TEST_CASE("dmd refuses irregular data through the harness") {
    json j = base_config();
    j["method"] = "dmd";
    j["data"]["generator"]["sampling"] = "irregular";
    j["data"]["generator"]["jitter"] = 0.3;
    j["n_seeds"] = 1;
    const SeedRun run = run_seed(parse_config(j), 0);
    CHECK_FALSE(run.outcome.ok);
    CHECK(run.outcome.failure.find("regularly sampled") != std::string::npos);
}

TEST_CASE("dmd and dmdf run through the harness") {
    json j = base_config();
    j["method"] = "dmd";
    j["n_seeds"] = 1;
    const MetricsReport dmd = run_experiment(parse_config(j));
    CHECK(dmd.failures() == 0);
    CHECK(dmd.seeds[0].r.size() == 2);

    j["method"] = "dmdf";
    const MetricsReport dmdf = run_experiment(parse_config(j));
    CHECK(dmdf.failures() == 0);
    CHECK(dmdf.seeds[0].frequency_mae == 0.0);
}

TEST_CASE("range width 0 and infinity reduce to fixed and free") {
    json j = base_config();
    j["constraint"]["frequency"][0] = {{"kind", "free"}, {"init", 0.5}};
    const ExperimentConfig free_config = parse_config(j);
    const ExperimentConfig fixed_config = parse_config(base_config());

    const ExperimentConfig w0 = with_frequency_width(free_config, 0.0);
    const ExperimentConfig winf = with_frequency_width(fixed_config, std::numeric_limits<double>::infinity());
    CHECK(std::get<Fixed>(w0.constraint.frequency[0]).value == free_config.true_frequencies[0]);
    CHECK(std::holds_alternative<Free>(winf.constraint.frequency[0]));
    const auto mid = with_frequency_width(fixed_config, 0.2);
    CHECK_THAT(std::get<Range>(mid.constraint.frequency[0]).start, WithinAbs(fixed_config.true_frequencies[0] - 0.1, 1e-15));

    const MetricsReport a = run_experiment(w0);
    const MetricsReport b = run_experiment(fixed_config);
    for (std::size_t i = 0; i < a.seeds.size(); ++i) CHECK(a.seeds[i].test_mse == b.seeds[i].test_mse);

    const MetricsReport c = run_experiment(with_frequency_width(free_config, std::numeric_limits<double>::infinity()));
    const MetricsReport d = run_experiment(free_config);
    for (std::size_t i = 0; i < c.seeds.size(); ++i) CHECK(c.seeds[i].test_mse == d.seeds[i].test_mse);

    CHECK_THROWS_AS(with_frequency_width(fixed_config, -1.0), ConfigError);
}

TEST_CASE("sweep writes a width table") {
    json j = base_config();
    j["n_seeds"] = 1;
    const fs::path out = scratch("sweep");
    const auto rows = cmd_sweep_range(parse_config(j), {0.0, 0.1, std::numeric_limits<double>::infinity()}, out);
    CHECK(rows.size() == 3);
    std::ifstream in(out / "sweep_range.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "width,n_ok,test_mse_mean,test_mse_std_error,test_mse_median");
    std::getline(in, line);
    CHECK(line.rfind("0,1,", 0) == 0);
    fs::remove_all(out);
}
