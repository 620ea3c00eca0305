#pragma once

// Experiment configuration, metrics and the command implementations behind
// the CLI. Every command is deterministic given its config and seeds; wall
// clock time is reported on stderr only so output files stay byte-stable.

#include "koopcast/baselines.hpp"
#include "koopcast/data.hpp"
#include "koopcast/model.hpp"
#include "koopcast/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace koopcast {

inline constexpr int kConfigSchemaVersion = 1;

enum class Method : std::uint8_t {
    koopman,  ///< neural encoder/decoder with structured spectrum
    dmd,      ///< unconstrained linear fit in measurement space
    dmdf,     ///< linear model with the spectral constraint
};

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct ModelSpec {
    int K = 2;
    std::vector<int> hidden{4};
    TimeMode time_mode = TimeMode::continuous;
    bool standardize = true;
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    std::string name = "experiment";
    Method method = Method::koopman;
    std::optional<GeneratorConfig> generator;
    std::filesystem::path csv;  ///< used when generator is empty
    /// Known true angular frequencies; filled from the generator unless given.
    std::vector<double> true_frequencies;
    ModelSpec model;
    SpectralConstraint constraint;
    TrainConfig train;
    int n_seeds = 10;
    std::uint64_t seed_offset = 0;

    void validate() const;
};

/// Parses a config document. Relative CSV paths resolve against base_dir.
/// Frequency entries may use "truth" in place of a number:
///   {"kind": "fixed", "value": "truth"}
///   {"kind": "range", "center": "truth", "width": 0.1}
/// and resolve against true_frequencies (by position, or "truth_index").
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Dataset for one run seed. Generated data uses generator seed + run seed.
TimeSeries load_dataset(const ExperimentConfig& config, std::uint64_t run_seed);

// Metrics.

/// Mean over test rows of ||forecast(y_anchor, t_n - t_anchor) - y_n||^2,
/// anchored at the last training observation.
double test_mse(const KoopmanModel& model, const SeriesSplit& split);
/// Same protocol with integral step counts; irregular test times raise FitError.
double test_mse(const DmdModel& model, const SeriesSplit& split);

/// Greedy nearest assignment of |estimated| to each true frequency in turn;
/// mean absolute difference over matched pairs.
double frequency_mae(const std::vector<double>& estimated, const std::vector<double>& truth);

struct Summary {
    double mean = 0.0;
    double std_error = 0.0;  ///< sample standard deviation / sqrt(n)
    double median = 0.0;
    std::size_t count = 0;
};
Summary summarize(std::vector<double> values);

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string failure;
    double test_mse = 0.0;
    std::optional<double> frequency_mae;
    std::vector<double> r;
    std::vector<double> omega;
    int epochs = 0;
    int best_epoch = -1;
    double wall_seconds = 0.0;
};

struct MetricsReport {
    std::string name;
    Method method = Method::koopman;
    std::vector<SeedOutcome> seeds;
    Summary test_mse;
    std::optional<Summary> frequency_mae;
    double wall_seconds = 0.0;

    [[nodiscard]] std::size_t failures() const;
    [[nodiscard]] std::vector<double> test_mse_values() const;
    /// Deterministic content only (no timing).
    [[nodiscard]] nlohmann::json to_json() const;
};

MetricsReport make_report(const ExperimentConfig& config, std::vector<SeedOutcome> outcomes);
void write_metrics(const MetricsReport& report, const std::filesystem::path& out_dir);

using FittedModel = std::variant<KoopmanModel, DmdModel>;

struct SeedRun {
    SeedOutcome outcome;
    std::optional<FittedModel> model;
    TrainHistory history;
};

/// Trains (or fits) one seed and evaluates it on the test split.
SeedRun run_seed(const ExperimentConfig& config, std::uint64_t run_seed);
/// Evaluates an already fitted model for one seed.
SeedOutcome evaluate_seed(const ExperimentConfig& config, std::uint64_t run_seed, const FittedModel& model);

/// Runs seeds [seed_offset, seed_offset + n_seeds) on worker threads.
std::vector<SeedRun> run_seeds(const ExperimentConfig& config);
/// In-memory train + evaluate over all seeds.
MetricsReport run_experiment(const ExperimentConfig& config);

// Commands. Each returns the paths it wrote or a report.

std::filesystem::path cmd_generate(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct TrainSummary {
    std::vector<SeedOutcome> seeds;
    [[nodiscard]] bool all_ok() const;
};
/// Writes seed_<s>/checkpoint.json, seed_<s>/history.csv and train_summary.json.
TrainSummary cmd_train(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Reads the checkpoints written by cmd_train and writes metrics.json / metrics.csv.
MetricsReport cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& out_dir);

FittedModel load_fitted(const std::filesystem::path& checkpoint);
void save_fitted(const FittedModel& model, const std::filesystem::path& checkpoint);

/// Writes modes.csv for a checkpoint of either kind.
std::filesystem::path cmd_modes(const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir);

struct SweepRow {
    double width = 0.0;
    MetricsReport report;
};

/// Replaces every frequency entry that has a known truth with a constraint of
/// the given total width centred on it: 0 gives Fixed, infinity gives Free.
ExperimentConfig with_frequency_width(const ExperimentConfig& config, double width);

/// Trains and evaluates each width; writes sweep_range.csv and sweep_range_seeds.csv.
std::vector<SweepRow> cmd_sweep_range(const ExperimentConfig& config, const std::vector<double>& widths,
                                      const std::filesystem::path& out_dir);

}  // namespace koopcast
