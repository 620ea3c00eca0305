#pragma once

// Reverse-mode differentiation over dense real matrices.
//
// Every operation evaluates eagerly and appends one node to the tape, so
// node order is a valid topological order. backward() sweeps the tape once
// from a scalar root and returns the adjoint of every parameter leaf.
//
// Binary elementwise operations broadcast when one operand is 1x1, a column
// vector matching the row count, or a row vector matching the column count.

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

namespace koopcast::grad {

using Matrix = Eigen::MatrixXd;

/// Identifies a trainable parameter across tapes.
struct ParamId {
    std::size_t value = 0;
    auto operator<=>(const ParamId&) const = default;
};

enum class OpKind : std::uint8_t {
    constant,
    param,
    add,
    sub,
    mul,
    scale,
    matmul,
    matvec,
    tanh,
    exp,
    sin,
    cos,
    sigmoid,
    reciprocal,
    pow_const,
    sum,
    squared_norm,
    solve_linear,
    block,
    concat_rows,
    concat_cols,
    gather_cols,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t index() const noexcept { return index_; }
    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
    /// Value of a 1x1 node.
    [[nodiscard]] double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

using Gradients = std::map<ParamId, Matrix>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var constant(double value);

    /// Registers a parameter leaf. A parameter appears at most once per tape;
    /// registering the same id again returns the existing node.
    Var param(ParamId id, const Matrix& value);

    /// Appends an operation node. Checks shapes, evaluates the value and
    /// returns the new node. Used by the free functions below.
    Var record(OpKind kind, std::span<const Var> parents);

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_.at(v.index()).value; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] OpKind kind(Var v) const { return nodes_.at(v.index()).kind; }

    /// Adjoints of every parameter leaf with respect to a 1x1 root.
    /// Parameters on the tape that the root does not depend on map to zero.
    [[nodiscard]] Gradients backward(Var root) const;

private:
    friend Var scale(Var, double);
    friend Var pow_const(Var, const Matrix&);
    friend Var block(Var, Eigen::Index, Eigen::Index, Eigen::Index, Eigen::Index);
    friend Var gather_cols(Var, std::span<const Eigen::Index>);
    friend Var solve_linear(Var, Var);

    struct Node {
        OpKind kind = OpKind::constant;
        std::vector<std::size_t> parents;
        Matrix value;
        // Operation-specific payloads.
        double factor = 0.0;
        Matrix aux;
        std::vector<Eigen::Index> indices;
        std::shared_ptr<const Eigen::PartialPivLU<Matrix>> lu;
        ParamId param{};
    };

    Var push(Node node);
    void check_owned(Var v) const;

    std::vector<Node> nodes_;
    std::map<ParamId, std::size_t> param_nodes_;
};

// Elementwise arithmetic with broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

Var matmul(Var a, Var b);
/// Matrix times column vector.
Var matvec(Var a, Var x);

Var tanh(Var a);
Var exp(Var a);
Var sin(Var a);
Var cos(Var a);
Var sigmoid(Var a);
Var reciprocal(Var a);
/// Elementwise base^exponent with the base broadcast over a constant exponent
/// matrix. A negative base requires integral exponents.
Var pow_const(Var base, const Matrix& exponent);

/// Sum of all entries (1x1).
Var sum(Var a);
/// Sum of squared entries (1x1).
Var squared_norm(Var a);

/// Solves A X = B for square A by LU with partial pivoting. Throws
/// ConditioningError when the largest/smallest pivot magnitude ratio exceeds
/// kMaxPivotRatio.
Var solve_linear(Var a, Var b);
inline constexpr double kMaxPivotRatio = 1e12;

Var block(Var a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Column j of the result is column indices[j] of a.
Var gather_cols(Var a, std::span<const Eigen::Index> indices);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

/// Returns the pivot magnitude ratio of a partially pivoted LU factorization.
double pivot_ratio(const Eigen::PartialPivLU<Matrix>& lu);

}  // namespace koopcast::grad
