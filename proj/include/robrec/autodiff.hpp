#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// The tape is eager: every operation evaluates immediately and appends a
// node, so node order is a topological order by construction. A backward
// pass from a 1x1 root returns exact adjoints for the requested leaves.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace robrec::ad {

using Matrix = Eigen::MatrixXd;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Neg,
    Scale,
    AddScalar,
    MatMul,
    Mul,
    AddColBroadcast,
    MulRowBroadcast,
    Tanh,
    Relu,
    Sigmoid,
    Log,
    Abs,
    Square,
    Sin,
    Softplus,
    Sum,
    SumRows,
    Dot,
    Norm1,
    Norm2,
    ColNorm2,
    Row,
    StackRows,
    TileCols,
    FoldBlocks,
};

const char* op_name(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape.
class Var {
public:
    Var() = default;

    [[nodiscard]] const Matrix& value() const;
    /// Value of a 1x1 node.
    [[nodiscard]] double scalar() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] int id() const { return id_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    Tape() { nodes_.reserve(64); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Matrix value, std::string label = {});
    Var constant(Matrix value);
    Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Adjoints of `root` (must be 1x1) with respect to each of `wrt`.
    /// Node values are left untouched.
    [[nodiscard]] std::vector<Matrix> gradient(Var root, std::span<const Var> wrt) const;
    [[nodiscard]] Matrix gradient(Var root, Var wrt) const;

    // Node construction; prefer the free functions below.
    Var push(Op op, std::vector<int> inputs, Matrix value, double param = 0.0, int index = 0);
    [[nodiscard]] std::string describe(int id) const;

private:
    struct Node {
        Op op;
        std::vector<int> inputs;
        Matrix value;
        double param;
        int index;
        std::string label;
    };

    std::vector<Node> nodes_;
};

// Arithmetic. Binary elementwise operations require identical shapes.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, Var b);  // elementwise
Var operator*(Var a, double s);
Var operator*(double s, Var a);
Var operator+(Var a, double s);
Var operator+(double s, Var a);
Var operator-(Var a, double s);
Var operator-(double s, Var a);

Var matmul(Var a, Var b);
/// a (r x c) + b (r x 1) added to every column.
Var add_col_broadcast(Var a, Var b);
/// a (r x c) with column j scaled by b(0, j); b is 1 x c.
Var mul_row_broadcast(Var a, Var b);

Var tanh(Var a);
Var relu(Var a);  // subgradient 0 at 0
Var sigmoid(Var a);
Var log(Var a);
Var abs(Var a);  // subgradient 0 at 0
Var square(Var a);
Var sin(Var a);
Var softplus(Var a);  // log(1 + exp(a)), stable

Var sum(Var a);
/// Column sums: r x c -> 1 x c.
Var sum_rows(Var a);
Var dot(Var a, Var b);
Var norm1(Var a);
Var norm2(Var a);
/// Euclidean norm of each column: r x c -> 1 x c (subgradient 0 for zero columns).
Var col_norm2(Var a);

Var row(Var a, int i);
Var stack_rows(std::span<const Var> rows);
/// [a a ... a] with `copies` horizontal copies.
Var tile_cols(Var a, int copies);
/// 1 x (blocks * m) -> blocks x m, out(i, j) = in(0, i * m + j).
Var fold_blocks(Var a, int blocks);

/// A differentiable score function mapping an n x m input batch (one column
/// per individual) to a 1 x m row of scores.
using ScoreFn = std::function<Var(Var)>;

struct StencilOptions {
    double step = 1e-4;
    int max_dim = 64;
};

/// Central-difference input gradient of `score` at the columns of `x`, built
/// from 2n forward evaluations so that it stays differentiable with respect to
/// whatever `score` closes over (e.g. classifier weights). Returns n x m.
Var input_gradient_stencil(const ScoreFn& score, Var x, StencilOptions options = {});

/// Exact reverse-mode input gradient of `score` at the columns of `x` (n x m),
/// evaluated on a private tape.
Matrix input_gradient(const ScoreFn& score, const Matrix& x);

}  // namespace robrec::ad
