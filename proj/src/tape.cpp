#include "koopcast/tape.hpp"

#include "koopcast/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace koopcast::grad {

namespace {

std::string shape_of(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " + shape_of(b));
}

bool broadcastable(Eigen::Index from_rows, Eigen::Index from_cols, Eigen::Index rows, Eigen::Index cols) {
    if (from_rows == rows && from_cols == cols) return true;
    if (from_rows == 1 && from_cols == 1) return true;
    if (from_cols == 1 && from_rows == rows) return true;
    if (from_rows == 1 && from_cols == cols) return true;
    return false;
}

std::array<Eigen::Index, 2> broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
    const Eigen::Index rows = std::max(a.rows(), b.rows());
    const Eigen::Index cols = std::max(a.cols(), b.cols());
    if (!broadcastable(a.rows(), a.cols(), rows, cols) || !broadcastable(b.rows(), b.cols(), rows, cols)) {
        shape_error(op, a, b);
    }
    return {rows, cols};
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.size() == 1) return Matrix::Constant(rows, cols, m(0, 0));
    if (m.cols() == 1) return m.replicate(1, cols);
    return m.replicate(rows, 1);
}

// Inverse of expand for adjoints: sums over broadcast dimensions.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (cols == 1) return g.rowwise().sum();
    return g.colwise().sum();
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw ShapeError("scalar(): node is " + shape_of(v));
    return v(0, 0);
}

double pivot_ratio(const Eigen::PartialPivLU<Matrix>& lu) {
    const Eigen::VectorXd pivots = lu.matrixLU().diagonal().cwiseAbs();
    if (pivots.size() == 0) return 1.0;
    const double smallest = pivots.minCoeff();
    const double largest = pivots.maxCoeff();
    if (!(smallest > 0.0) || !std::isfinite(largest)) return std::numeric_limits<double>::infinity();
    return largest / smallest;
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
    if (&v.tape() != this || v.index() >= nodes_.size()) {
        throw std::invalid_argument("variable does not belong to this tape");
    }
}

Var Tape::constant(Matrix value) {
    Node n;
    n.kind = OpKind::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::param(ParamId id, const Matrix& value) {
    if (auto it = param_nodes_.find(id); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    Node n;
    n.kind = OpKind::param;
    n.value = value;
    n.param = id;
    Var v = push(std::move(n));
    param_nodes_.emplace(id, v.index());
    return v;
}

Var Tape::record(OpKind kind, std::span<const Var> parents) {
    for (const Var& p : parents) check_owned(p);
    Node n;
    n.kind = kind;
    for (const Var& p : parents) n.parents.push_back(p.index());

    auto arg = [&](std::size_t i) -> const Matrix& { return nodes_[n.parents.at(i)].value; };
    auto unary = [&]() -> const Matrix& {
        if (parents.size() != 1) throw std::invalid_argument("unary operation expects one parent");
        return arg(0);
    };
    auto binary_shape = [&](const char* name) {
        if (parents.size() != 2) throw std::invalid_argument("binary operation expects two parents");
        return broadcast_shape(name, arg(0), arg(1));
    };

    switch (kind) {
        case OpKind::add: {
            const auto [r, c] = binary_shape("add");
            n.value = expand(arg(0), r, c) + expand(arg(1), r, c);
            break;
        }
        case OpKind::sub: {
            const auto [r, c] = binary_shape("sub");
            n.value = expand(arg(0), r, c) - expand(arg(1), r, c);
            break;
        }
        case OpKind::mul: {
            const auto [r, c] = binary_shape("mul");
            n.value = expand(arg(0), r, c).cwiseProduct(expand(arg(1), r, c));
            break;
        }
        case OpKind::matmul:
        case OpKind::matvec: {
            if (parents.size() != 2) throw std::invalid_argument("matmul expects two parents");
            if (arg(0).cols() != arg(1).rows()) shape_error("matmul", arg(0), arg(1));
            if (kind == OpKind::matvec && arg(1).cols() != 1) shape_error("matvec", arg(0), arg(1));
            n.value = arg(0) * arg(1);
            break;
        }
        case OpKind::tanh: n.value = unary().array().tanh().matrix(); break;
        case OpKind::exp: n.value = unary().array().exp().matrix(); break;
        case OpKind::sin: n.value = unary().array().sin().matrix(); break;
        case OpKind::cos: n.value = unary().array().cos().matrix(); break;
        case OpKind::sigmoid: n.value = unary().unaryExpr(&stable_sigmoid); break;
        case OpKind::reciprocal: n.value = unary().cwiseInverse(); break;
        case OpKind::sum: n.value = Matrix::Constant(1, 1, unary().sum()); break;
        case OpKind::squared_norm: n.value = Matrix::Constant(1, 1, unary().squaredNorm()); break;
        case OpKind::concat_rows: {
            if (parents.empty()) throw std::invalid_argument("concat_rows of nothing");
            Eigen::Index rows = 0;
            const Eigen::Index cols = arg(0).cols();
            for (std::size_t i = 0; i < parents.size(); ++i) {
                if (arg(i).cols() != cols) shape_error("concat_rows", arg(0), arg(i));
                rows += arg(i).rows();
            }
            n.value.resize(rows, cols);
            Eigen::Index at = 0;
            for (std::size_t i = 0; i < parents.size(); ++i) {
                n.value.middleRows(at, arg(i).rows()) = arg(i);
                at += arg(i).rows();
            }
            break;
        }
        case OpKind::concat_cols: {
            if (parents.empty()) throw std::invalid_argument("concat_cols of nothing");
            Eigen::Index cols = 0;
            const Eigen::Index rows = arg(0).rows();
            for (std::size_t i = 0; i < parents.size(); ++i) {
                if (arg(i).rows() != rows) shape_error("concat_cols", arg(0), arg(i));
                cols += arg(i).cols();
            }
            n.value.resize(rows, cols);
            Eigen::Index at = 0;
            for (std::size_t i = 0; i < parents.size(); ++i) {
                n.value.middleCols(at, arg(i).cols()) = arg(i);
                at += arg(i).cols();
            }
            break;
        }
        default:
            throw std::invalid_argument("operation requires a dedicated constructor");
    }
    return push(std::move(n));
}

Gradients Tape::backward(Var root) const {
    check_owned(root);
    if (value(root).size() != 1) {
        throw std::invalid_argument("backward(): root must be a 1x1 node, got " + shape_of(value(root)));
    }

    std::vector<Matrix> adj(root.index() + 1);
    adj[root.index()] = Matrix::Ones(1, 1);

    auto accumulate = [&adj](std::size_t i, const Matrix& g) {
        if (adj[i].size() == 0) {
            adj[i] = g;
        } else {
            adj[i] += g;
        }
    };

    for (std::size_t idx = root.index() + 1; idx-- > 0;) {
        if (adj[idx].size() == 0) continue;
        const Node& n = nodes_[idx];
        const Matrix& g = adj[idx];
        auto pv = [&](std::size_t i) -> const Matrix& { return nodes_[n.parents[i]].value; };
        auto p = [&](std::size_t i) { return n.parents[i]; };

        switch (n.kind) {
            case OpKind::constant:
            case OpKind::param:
                break;
            case OpKind::add:
                accumulate(p(0), reduce_to(g, pv(0).rows(), pv(0).cols()));
                accumulate(p(1), reduce_to(g, pv(1).rows(), pv(1).cols()));
                break;
            case OpKind::sub:
                accumulate(p(0), reduce_to(g, pv(0).rows(), pv(0).cols()));
                accumulate(p(1), -reduce_to(g, pv(1).rows(), pv(1).cols()));
                break;
            case OpKind::mul: {
                const Eigen::Index r = g.rows();
                const Eigen::Index c = g.cols();
                accumulate(p(0), reduce_to(g.cwiseProduct(expand(pv(1), r, c)), pv(0).rows(), pv(0).cols()));
                accumulate(p(1), reduce_to(g.cwiseProduct(expand(pv(0), r, c)), pv(1).rows(), pv(1).cols()));
                break;
            }
            case OpKind::scale:
                accumulate(p(0), n.factor * g);
                break;
            case OpKind::matmul:
            case OpKind::matvec:
                accumulate(p(0), g * pv(1).transpose());
                accumulate(p(1), pv(0).transpose() * g);
                break;
            case OpKind::tanh:
                accumulate(p(0), g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
                break;
            case OpKind::exp:
                accumulate(p(0), g.cwiseProduct(n.value));
                break;
            case OpKind::sin:
                accumulate(p(0), g.cwiseProduct(pv(0).array().cos().matrix()));
                break;
            case OpKind::cos:
                accumulate(p(0), -g.cwiseProduct(pv(0).array().sin().matrix()));
                break;
            case OpKind::sigmoid:
                accumulate(p(0), g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
                break;
            case OpKind::reciprocal:
                accumulate(p(0), -g.cwiseProduct(n.value.cwiseAbs2()));
                break;
            case OpKind::pow_const: {
                const Matrix base = expand(pv(0), n.aux.rows(), n.aux.cols());
                Matrix local(n.aux.rows(), n.aux.cols());
                for (Eigen::Index j = 0; j < local.cols(); ++j) {
                    for (Eigen::Index i = 0; i < local.rows(); ++i) {
                        const double e = n.aux(i, j);
                        local(i, j) = e == 0.0 ? 0.0 : e * std::pow(base(i, j), e - 1.0);
                    }
                }
                accumulate(p(0), reduce_to(g.cwiseProduct(local), pv(0).rows(), pv(0).cols()));
                break;
            }
            case OpKind::sum:
                accumulate(p(0), Matrix::Constant(pv(0).rows(), pv(0).cols(), g(0, 0)));
                break;
            case OpKind::squared_norm:
                accumulate(p(0), 2.0 * g(0, 0) * pv(0));
                break;
            case OpKind::solve_linear: {
                // X = A^{-1} B  =>  dB = A^{-T} G,  dA = -dB X^T
                const Matrix lambda = n.lu->transpose().solve(g);
                accumulate(p(0), -lambda * n.value.transpose());
                accumulate(p(1), lambda);
                break;
            }
            case OpKind::block: {
                Matrix full = Matrix::Zero(pv(0).rows(), pv(0).cols());
                full.block(n.indices[0], n.indices[1], g.rows(), g.cols()) = g;
                accumulate(p(0), full);
                break;
            }
            case OpKind::concat_rows: {
                Eigen::Index at = 0;
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    accumulate(p(i), g.middleRows(at, pv(i).rows()));
                    at += pv(i).rows();
                }
                break;
            }
            case OpKind::concat_cols: {
                Eigen::Index at = 0;
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    accumulate(p(i), g.middleCols(at, pv(i).cols()));
                    at += pv(i).cols();
                }
                break;
            }
            case OpKind::gather_cols: {
                Matrix full = Matrix::Zero(pv(0).rows(), pv(0).cols());
                for (std::size_t j = 0; j < n.indices.size(); ++j) {
                    full.col(n.indices[j]) += g.col(static_cast<Eigen::Index>(j));
                }
                accumulate(p(0), full);
                break;
            }
        }
    }

    Gradients grads;
    for (const auto& [id, node] : param_nodes_) {
        if (node < adj.size() && adj[node].size() != 0) {
            grads.emplace(id, adj[node]);
        } else {
            grads.emplace(id, Matrix::Zero(nodes_[node].value.rows(), nodes_[node].value.cols()));
        }
    }
    return grads;
}

namespace {

Var record2(OpKind kind, Var a, Var b) {
    const std::array<Var, 2> parents{a, b};
    return a.tape().record(kind, parents);
}

Var record1(OpKind kind, Var a) {
    const std::array<Var, 1> parents{a};
    return a.tape().record(kind, parents);
}

}  // namespace

Var add(Var a, Var b) { return record2(OpKind::add, a, b); }
Var sub(Var a, Var b) { return record2(OpKind::sub, a, b); }
Var mul(Var a, Var b) { return record2(OpKind::mul, a, b); }
Var matmul(Var a, Var b) { return record2(OpKind::matmul, a, b); }
Var matvec(Var a, Var x) { return record2(OpKind::matvec, a, x); }
Var tanh(Var a) { return record1(OpKind::tanh, a); }
Var exp(Var a) { return record1(OpKind::exp, a); }
Var sin(Var a) { return record1(OpKind::sin, a); }
Var cos(Var a) { return record1(OpKind::cos, a); }
Var sigmoid(Var a) { return record1(OpKind::sigmoid, a); }
Var reciprocal(Var a) { return record1(OpKind::reciprocal, a); }
Var sum(Var a) { return record1(OpKind::sum, a); }
Var squared_norm(Var a) { return record1(OpKind::squared_norm, a); }
Var concat_rows(std::span<const Var> parts) { return parts.front().tape().record(OpKind::concat_rows, parts); }
Var concat_cols(std::span<const Var> parts) { return parts.front().tape().record(OpKind::concat_cols, parts); }

Var scale(Var a, double factor) {
    Tape& t = a.tape();
    t.check_owned(a);
    Tape::Node n;
    n.kind = OpKind::scale;
    n.parents = {a.index()};
    n.factor = factor;
    n.value = factor * a.value();
    return t.push(std::move(n));
}

Var pow_const(Var base, const Matrix& exponent) {
    Tape& t = base.tape();
    t.check_owned(base);
    const Matrix& b = base.value();
    if (!broadcastable(b.rows(), b.cols(), exponent.rows(), exponent.cols())) {
        shape_error("pow_const", b, exponent);
    }
    const Matrix expanded = expand(b, exponent.rows(), exponent.cols());
    Tape::Node n;
    n.kind = OpKind::pow_const;
    n.parents = {base.index()};
    n.aux = exponent;
    n.value.resize(exponent.rows(), exponent.cols());
    for (Eigen::Index j = 0; j < exponent.cols(); ++j) {
        for (Eigen::Index i = 0; i < exponent.rows(); ++i) {
            const double x = expanded(i, j);
            const double e = exponent(i, j);
            if (x < 0.0 && e != std::floor(e)) {
                throw DomainError("pow_const: negative base with non-integer exponent");
            }
            n.value(i, j) = std::pow(x, e);
        }
    }
    return t.push(std::move(n));
}

Var solve_linear(Var a, Var b) {
    Tape& t = a.tape();
    t.check_owned(a);
    t.check_owned(b);
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    if (A.rows() != A.cols() || A.rows() != B.rows()) shape_error("solve_linear", A, B);
    auto lu = std::make_shared<Eigen::PartialPivLU<Matrix>>(A);
    const double ratio = pivot_ratio(*lu);
    if (!(ratio <= kMaxPivotRatio)) {
        std::ostringstream os;
        os << "solve_linear: matrix is singular or ill-conditioned (pivot ratio " << ratio << ")";
        throw ConditioningError(os.str(), ratio);
    }
    Tape::Node n;
    n.kind = OpKind::solve_linear;
    n.parents = {a.index(), b.index()};
    n.value = lu->solve(B);
    n.lu = std::move(lu);
    return t.push(std::move(n));
}

Var block(Var a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols) {
    Tape& t = a.tape();
    t.check_owned(a);
    const Matrix& v = a.value();
    if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > v.rows() || col + cols > v.cols()) {
        throw ShapeError("block: window out of range for " + shape_of(v));
    }
    Tape::Node n;
    n.kind = OpKind::block;
    n.parents = {a.index()};
    n.indices = {row, col};
    n.value = v.block(row, col, rows, cols);
    return t.push(std::move(n));
}

Var gather_cols(Var a, std::span<const Eigen::Index> indices) {
    Tape& t = a.tape();
    t.check_owned(a);
    const Matrix& v = a.value();
    Tape::Node n;
    n.kind = OpKind::gather_cols;
    n.parents = {a.index()};
    n.indices.assign(indices.begin(), indices.end());
    n.value.resize(v.rows(), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] < 0 || indices[j] >= v.cols()) throw ShapeError("gather_cols: index out of range");
        n.value.col(static_cast<Eigen::Index>(j)) = v.col(indices[j]);
    }
    return t.push(std::move(n));
}

}  // namespace koopcast::grad
