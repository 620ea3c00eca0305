#include "koopcast/training.hpp"

#include "koopcast/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace koopcast {

using grad::Tape;
using grad::Var;

void TrainConfig::validate() const {
    if (nu_start > nu_end) throw ConfigError("train: nu_start must not exceed nu_end");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (max_epochs < 0) throw ConfigError("train: max_epochs must be non-negative");
    if (patience < 1) throw ConfigError("train: patience must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
}

std::vector<LossTerm> loss_terms(Eigen::Index N, int nu_start, int nu_end) {
    std::vector<LossTerm> terms;
    for (int nu = nu_start; nu <= nu_end; ++nu) {
        const Eigen::Index first = std::max<Eigen::Index>(0, -nu);
        const Eigen::Index last = std::min<Eigen::Index>(N - 1, N - 1 - nu);
        for (Eigen::Index n = first; n <= last; ++n) terms.push_back({n, n + nu});
    }
    return terms;
}

Var multistep_loss(const ModelGraph& graph, const TimeSeries& series, int nu_start, int nu_end) {
    const auto terms = loss_terms(series.size(), nu_start, nu_end);
    if (terms.empty()) throw DegenerateDataError("multistep loss: no (n, n + nu) pair fits in the series");
    Tape& tape = graph.tape();

    std::vector<Eigen::Index> from;
    from.reserve(terms.size());
    Matrix tau(1, static_cast<Eigen::Index>(terms.size()));
    Matrix target(series.dim(), static_cast<Eigen::Index>(terms.size()));
    const bool discrete = graph.model().time_mode == TimeMode::discrete;
    for (std::size_t j = 0; j < terms.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        from.push_back(terms[j].from);
        tau(0, col) = discrete ? static_cast<double>(terms[j].to - terms[j].from)
                               : series.times(terms[j].to) - series.times(terms[j].from);
        target.col(col) = series.values.row(terms[j].to).transpose();
    }

    // Encode and change basis once per observation, then fan out per term.
    const Var G = graph.encode(tape.constant(series.values.transpose()));
    const Var coords = grad::solve_linear(graph.basis(), G);
    const Var advanced =
        spectral::advance(graph.spectrum(), grad::gather_cols(coords, from), tape.constant(tau), graph.model().time_mode);
    const Var predicted = graph.decode(grad::matmul(graph.basis(), advanced));
    return grad::squared_norm(grad::sub(predicted, tape.constant(target)));
}

double multistep_loss(const KoopmanModel& model, const TimeSeries& series, int nu_start, int nu_end) {
    Tape tape;
    const ModelGraph graph(tape, model);
    return multistep_loss(graph, series, nu_start, nu_end).scalar();
}

void adam_step(const std::vector<Param*>& params, const grad::Gradients& grads, AdamState& state,
               const TrainConfig& config) {
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const Param* p : params) {
            state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
        state.step = 0;
    }
    ++state.step;
    const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (!p.trainable || p.value.size() == 0) continue;
        const auto it = grads.find(grad::ParamId{i});
        if (it == grads.end()) {
            state.m[i] *= config.beta1;
            state.v[i] *= config.beta2;
        } else {
            const Matrix& g = it->second;
            if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
                throw ShapeError("adam_step: gradient shape mismatch for " + p.name);
            }
            state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
            state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.cwiseAbs2();
        }
        const Matrix m_hat = state.m[i] / correction1;
        const Matrix v_hat = state.v[i] / correction2;
        p.value.array() -= config.learning_rate * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
    }
}

SeriesSplit split_series(const TimeSeries& series, std::array<double, 3> fractions) {
    const auto N = static_cast<double>(series.size());
    const auto n_train = static_cast<Eigen::Index>(std::floor(N * fractions[0]));
    const auto n_val = static_cast<Eigen::Index>(std::floor(N * fractions[1]));
    const Eigen::Index n_test = series.size() - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw DegenerateDataError("split_series: series of length " + std::to_string(series.size()) +
                                  " leaves an empty split");
    }
    return {series.slice(0, n_train), series.slice(n_train, n_val), series.slice(n_train + n_val, n_test)};
}

TrainResult train(const KoopmanModel& initial, const TimeSeries& train_split, const TimeSeries& validation_split,
                  const TrainConfig& config) {
    config.validate();
    initial.validate();
    if (train_split.dim() != initial.M || validation_split.dim() != initial.M) {
        throw ShapeError("train: series dimension does not match the model");
    }

    TrainResult result{initial, {}, std::nullopt};
    KoopmanModel current = initial;
    AdamState adam;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        EpochRecord record;
        record.epoch = epoch;
        try {
            Tape tape;
            const ModelGraph graph(tape, current);
            const Var loss = multistep_loss(graph, train_split, config.nu_start, config.nu_end);
            record.train_loss = loss.scalar();
            if (!std::isfinite(record.train_loss)) {
                result.failure = "non-finite training loss at epoch " + std::to_string(epoch);
                break;
            }
            const grad::Gradients grads = tape.backward(loss);
            adam_step(current.parameters(), grads, adam, config);
            record.validation_loss = multistep_loss(current, validation_split, config.nu_start, config.nu_end);
            record.spectrum = current.spectrum();
        } catch (const ConditioningError& e) {
            result.failure = "epoch " + std::to_string(epoch) + ": " + e.what();
            break;
        }
        result.history.epochs.push_back(record);

        if (record.validation_loss < best_val) {
            best_val = record.validation_loss;
            result.history.best_epoch = static_cast<int>(result.history.epochs.size()) - 1;
            result.model = current;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const Eigen::Index n_r = history.epochs.empty() ? 0 : history.epochs.front().spectrum.r.size();
    const Eigen::Index n_w = history.epochs.empty() ? 0 : history.epochs.front().spectrum.omega.size();
    out << "epoch,train_loss,val_loss";
    for (Eigen::Index i = 0; i < n_r; ++i) out << ",r_" << (i + 1);
    for (Eigen::Index i = 0; i < n_w; ++i) out << ",omega_" << (i + 1);
    out << '\n';
    for (const auto& e : history.epochs) {
        out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.validation_loss);
        for (Eigen::Index i = 0; i < n_r; ++i) out << ',' << format_double(e.spectrum.r(i));
        for (Eigen::Index i = 0; i < n_w; ++i) out << ',' << format_double(e.spectrum.omega(i));
        out << '\n';
    }
    if (!out) throw Error("failed writing " + path.string());
}

}  // namespace koopcast
