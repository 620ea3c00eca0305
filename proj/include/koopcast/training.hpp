#pragma once

#include "koopcast/data.hpp"
#include "koopcast/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace koopcast {

struct TrainConfig {
    int nu_start = -10;
    int nu_end = 10;
    double learning_rate = 1e-2;
    int max_epochs = 5000;
    int patience = 250;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One squared-error term of the multi-step objective: predict y[to] from y[from].
struct LossTerm {
    Eigen::Index from = 0;
    Eigen::Index to = 0;
};

/// All (n, n + nu) pairs with nu in [nu_start, nu_end] and both indices in
/// [0, N). Ordered by nu, then n.
std::vector<LossTerm> loss_terms(Eigen::Index N, int nu_start, int nu_end);

/// Sum over loss_terms of ||forecast(y_from, t_to - t_from) - y_to||^2.
/// In discrete time the horizon is the step count to - from.
/// Throws DegenerateDataError when no term exists.
grad::Var multistep_loss(const ModelGraph& graph, const TimeSeries& series, int nu_start, int nu_end);
double multistep_loss(const KoopmanModel& model, const TimeSeries& series, int nu_start, int nu_end);

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

/// One bias-corrected Adam update of every trainable parameter. params[i]
/// receives grads[ParamId{i}]; parameters missing from grads see a zero gradient.
void adam_step(const std::vector<Param*>& params, const grad::Gradients& grads, AdamState& state,
               const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;       ///< loss before this epoch's update
    double validation_loss = 0.0;  ///< loss after this epoch's update
    KoopmanSpectrum spectrum;      ///< after this epoch's update
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;  ///< index into epochs, -1 when empty
};

struct TrainResult {
    KoopmanModel model;  ///< parameters with the lowest validation loss
    TrainHistory history;
    std::optional<std::string> failure;
};

struct SeriesSplit {
    TimeSeries train;
    TimeSeries validation;
    TimeSeries test;
};

/// Contiguous prefix split: floor(N * f0) training rows, floor(N * f1)
/// validation rows, the rest for testing.
SeriesSplit split_series(const TimeSeries& series, std::array<double, 3> fractions = {0.2, 0.1, 0.7});

/// Full-batch Adam on the multi-step loss with early stopping on the
/// validation split. Conditioning failures and non-finite losses end the run
/// and are reported in TrainResult::failure.
TrainResult train(const KoopmanModel& initial, const TimeSeries& train_split, const TimeSeries& validation_split,
                  const TrainConfig& config);

/// Columns: epoch, train_loss, val_loss, r_1.., omega_1..
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace koopcast
