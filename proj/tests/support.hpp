#pragma once

#include "koopcast/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace koopcast::testing {

using grad::Matrix;

inline Matrix uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = d(rng);
    }
    return m;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// turning finite-difference rounding into huge relative errors.
inline double relative_error(double a, double b, double floor = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using Builder = std::function<grad::Var(grad::Tape&, const std::vector<grad::Var>&)>;

/// Largest relative error between tape gradients and central differences
/// over every entry of every parameter.
inline double gradient_check(const Builder& build, std::vector<Matrix> params, double step = 1e-5) {
    auto evaluate = [&](const std::vector<Matrix>& values) {
        grad::Tape tape;
        std::vector<grad::Var> vars;
        for (std::size_t i = 0; i < values.size(); ++i) vars.push_back(tape.param(grad::ParamId{i}, values[i]));
        return build(tape, vars).scalar();
    };
    grad::Tape tape;
    std::vector<grad::Var> vars;
    for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.param(grad::ParamId{i}, params[i]));
    const grad::Gradients grads = tape.backward(build(tape, vars));

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Matrix& g = grads.at(grad::ParamId{p});
        for (Eigen::Index k = 0; k < params[p].size(); ++k) {
            const double x = params[p].data()[k];
            params[p].data()[k] = x + step;
            const double up = evaluate(params);
            params[p].data()[k] = x - step;
            const double down = evaluate(params);
            params[p].data()[k] = x;
            worst = std::max(worst, relative_error(g.data()[k], (up - down) / (2.0 * step)));
        }
    }
    return worst;
}

}  // namespace koopcast::testing
