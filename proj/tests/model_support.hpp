#pragma once

#include "koopcast/model.hpp"
#include "support.hpp"

#include <functional>

namespace koopcast::testing {

using GraphLoss = std::function<grad::Var(const ModelGraph&)>;

/// Largest relative error between tape gradients and central differences
/// over every entry of every trainable parameter of the model.
inline double model_gradient_check(const KoopmanModel& model, const GraphLoss& loss, double step = 1e-5) {
    auto value_of = [&](const KoopmanModel& m) {
        grad::Tape tape;
        const ModelGraph graph(tape, m);
        return loss(graph).scalar();
    };
    grad::Tape tape;
    const ModelGraph graph(tape, model);
    const grad::Gradients grads = tape.backward(loss(graph));

    KoopmanModel probe = model;
    const auto params = probe.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (!p.trainable) continue;
        for (Eigen::Index k = 0; k < p.value.size(); ++k) {
            const double x = p.value.data()[k];
            p.value.data()[k] = x + step;
            const double up = value_of(probe);
            p.value.data()[k] = x - step;
            const double down = value_of(probe);
            p.value.data()[k] = x;
            const double analytic = grads.at(grad::ParamId{i}).data()[k];
            worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * step)));
        }
    }
    return worst;
}

}  // namespace koopcast::testing
