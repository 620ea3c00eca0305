// koopcast: generate data, train, evaluate, extract modes and sweep
// frequency-range widths. Exit status: 0 when every seed succeeded, 1 on any
// failed seed or runtime error, 2 on invalid configuration or usage.

#include "koopcast/errors.hpp"
#include "koopcast/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace koopcast;

namespace {

struct Options {
    std::string config;
    std::string out = "out";
    std::optional<int> seeds;
    std::optional<std::uint64_t> seed_offset;
    std::string checkpoint;
    std::string data;
    std::string widths = "0,0.01,0.1,inf";
};

ExperimentConfig configure(const Options& opt) {
    ExperimentConfig c = load_config(opt.config);
    if (opt.seeds) c.n_seeds = *opt.seeds;
    if (opt.seed_offset) c.seed_offset = *opt.seed_offset;
    if (!opt.data.empty()) {
        c.generator.reset();
        c.csv = opt.data;
    }
    c.validate();
    return c;
}

std::vector<double> parse_widths(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "inf" || item == "infinity") {
            out.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        std::size_t used = 0;
        double w = 0.0;
        try {
            w = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw ConfigError("--widths: cannot parse '" + item + "'");
        out.push_back(w);
    }
    if (out.empty()) throw ConfigError("--widths: empty list");
    return out;
}

void report_failures(const std::vector<SeedOutcome>& seeds) {
    for (const auto& s : seeds) {
        if (!s.ok) std::cerr << "seed " << s.seed << " failed: " << s.failure << '\n';
    }
}

void report_time(const char* verb, std::chrono::steady_clock::time_point started) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::cerr << verb << ": " << seconds << " s wall clock\n";
}

void print_summary(const MetricsReport& r) {
    std::cout << r.name << ": test MSE mean " << format_double(r.test_mse.mean) << " +/- "
              << format_double(r.test_mse.std_error) << ", median " << format_double(r.test_mse.median) << " over "
              << r.test_mse.count << " seeds";
    if (r.frequency_mae) std::cout << "; frequency MAE " << format_double(r.frequency_mae->mean);
    std::cout << '\n';
}

int run(const std::string& verb, const Options& opt) {
    const auto started = std::chrono::steady_clock::now();
    int status = 0;
    if (verb == "generate") {
        std::cout << cmd_generate(configure(opt), opt.out).string() << '\n';
    } else if (verb == "train") {
        const auto summary = cmd_train(configure(opt), opt.out);
        report_failures(summary.seeds);
        status = summary.all_ok() ? 0 : 1;
    } else if (verb == "evaluate") {
        const ExperimentConfig config = configure(opt);
        MetricsReport report;
        if (opt.checkpoint.empty()) {
            report = cmd_evaluate(config, opt.out);
        } else {
            report = make_report(config, {evaluate_seed(config, config.seed_offset, load_fitted(opt.checkpoint))});
            write_metrics(report, opt.out);
        }
        print_summary(report);
        report_failures(report.seeds);
        status = report.failures() == 0 ? 0 : 1;
    } else if (verb == "modes") {
        if (opt.checkpoint.empty()) throw ConfigError("modes: --checkpoint is required");
        std::cout << cmd_modes(opt.checkpoint, opt.out).string() << '\n';
    } else if (verb == "sweep-range") {
        const auto rows = cmd_sweep_range(configure(opt), parse_widths(opt.widths), opt.out);
        for (const auto& row : rows) {
            std::cout << "width " << format_double(row.width) << ": ";
            print_summary(row.report);
            report_failures(row.report.seeds);
            if (row.report.failures() > 0) status = 1;
        }
    }
    report_time(verb.c_str(), started);
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman forecasting with spectral constraints"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", opt.config, "experiment config (JSON)");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        sub->add_option("--seeds", opt.seeds, "number of seeds")->check(CLI::PositiveNumber);
        sub->add_option("--seed-offset", opt.seed_offset, "first seed");
        sub->add_option("--data", opt.data, "CSV dataset overriding the config's data section")
            ->check(CLI::ExistingFile);
    };

    add_common(app.add_subcommand("generate", "write the configured dataset as CSV"), true);
    add_common(app.add_subcommand("train", "train every seed, write checkpoints and histories"), true);
    auto* evaluate = app.add_subcommand("evaluate", "score checkpoints on the test split");
    add_common(evaluate, true);
    evaluate->add_option("--checkpoint", opt.checkpoint, "evaluate one checkpoint instead of --out/seed_*")
        ->check(CLI::ExistingFile);
    auto* modes = app.add_subcommand("modes", "export dynamic modes of a checkpoint");
    modes->add_option("--checkpoint", opt.checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
    modes->add_option("--out", opt.out, "output directory")->capture_default_str();
    auto* sweep = app.add_subcommand("sweep-range", "train with frequency ranges of several widths");
    add_common(sweep, true);
    sweep->add_option("--widths", opt.widths, "comma-separated widths, 'inf' for unconstrained")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        return run(verb, opt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
