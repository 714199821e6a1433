#include "robrec/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace robrec::ad {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

Tape& same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) {
        throw std::invalid_argument("autodiff: operands live on different tapes");
    }
    return a.tape();
}

[[noreturn]] void shape_error(Op op, Tape& tape, std::initializer_list<Var> operands, const std::string& what) {
    std::ostringstream os;
    os << "autodiff: shape mismatch in node #" << tape.size() << " (" << op_name(op) << "): " << what;
    for (const Var& v : operands) {
        os << "; operand " << tape.describe(v.id()) << " is " << shape_str(v.value());
    }
    throw ShapeError(os.str());
}

Var elementwise_binary(Op op, Var a, Var b, Matrix value) {
    return a.tape().push(op, {a.id(), b.id()}, std::move(value));
}

void require_same_shape(Op op, Var a, Var b) {
    Tape& tape = same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        shape_error(op, tape, {a, b}, "operands must have identical shapes");
    }
}

double stable_softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double sign_or_zero(double v) {
    return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Neg: return "neg";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::MatMul: return "matmul";
        case Op::Mul: return "mul";
        case Op::AddColBroadcast: return "add_col_broadcast";
        case Op::MulRowBroadcast: return "mul_row_broadcast";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Log: return "log";
        case Op::Abs: return "abs";
        case Op::Square: return "square";
        case Op::Sin: return "sin";
        case Op::Softplus: return "softplus";
        case Op::Sum: return "sum";
        case Op::SumRows: return "sum_rows";
        case Op::Dot: return "dot";
        case Op::Norm1: return "norm1";
        case Op::Norm2: return "norm2";
        case Op::ColNorm2: return "col_norm2";
        case Op::Row: return "row";
        case Op::StackRows: return "stack_rows";
        case Op::TileCols: return "tile_cols";
        case Op::FoldBlocks: return "fold_blocks";
    }
    return "unknown";
}

const Matrix& Var::value() const {
    return tape_->value(*this);
}

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("autodiff: node " + tape_->describe(id_) + " is not a scalar (" + shape_str(v) + ")");
    }
    return v(0, 0);
}

Var Tape::leaf(Matrix value, std::string label) {
    Var v = push(Op::Leaf, {}, std::move(value));
    nodes_.back().label = std::move(label);
    return v;
}

Var Tape::constant(Matrix value) {
    return push(Op::Constant, {}, std::move(value));
}

Var Tape::push(Op op, std::vector<int> inputs, Matrix value, double param, int index) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), param, index, {}});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

std::string Tape::describe(int id) const {
    std::ostringstream os;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    os << "#" << id << " (" << op_name(n.op);
    if (!n.label.empty()) {
        os << " '" << n.label << "'";
    }
    os << ")";
    return os.str();
}

Matrix Tape::gradient(Var root, Var wrt) const {
    const Var leaves[] = {wrt};
    return std::move(gradient(root, leaves).front());
}

std::vector<Matrix> Tape::gradient(Var root, std::span<const Var> wrt) const {
    if (&root.tape() != this) {
        throw std::invalid_argument("autodiff: root belongs to a different tape");
    }
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ShapeError("autodiff: gradient root " + describe(root.id()) + " is not scalar (" + shape_str(rv) + ")");
    }

    const auto last = static_cast<std::size_t>(root.id());
    std::vector<Matrix> adj(last + 1);
    adj[last] = Matrix::Ones(1, 1);

    // Only nodes that depend on a requested node need adjoints.
    std::vector<char> active(last + 1, 0);
    for (const Var& v : wrt) {
        if (&v.tape() == this && static_cast<std::size_t>(v.id()) <= last) active[static_cast<std::size_t>(v.id())] = 1;
    }
    for (std::size_t k = 0; k <= last; ++k) {
        for (int i : nodes_[k].inputs) active[k] = active[k] || active[static_cast<std::size_t>(i)];
    }

    // `make` is only evaluated for active inputs.
    auto accumulate = [&](int id, const auto& make) {
        if (!active[static_cast<std::size_t>(id)]) return;
        Matrix& slot = adj[static_cast<std::size_t>(id)];
        if (slot.size() == 0) {
            slot = make();
        } else {
            slot += make();
        }
    };

    for (std::size_t k = last + 1; k-- > 0;) {
        const Matrix& g = adj[k];
        if (g.size() == 0 || !active[k]) {
            continue;
        }
        const Node& n = nodes_[k];
        const auto in = [&](std::size_t i) -> const Matrix& {
            return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
        };
        switch (n.op) {
            case Op::Leaf:
            case Op::Constant:
                break;
            case Op::Add:
                accumulate(n.inputs[0], [&] { return Matrix(g); });
                accumulate(n.inputs[1], [&] { return Matrix(g); });
                break;
            case Op::Sub:
                accumulate(n.inputs[0], [&] { return Matrix(g); });
                accumulate(n.inputs[1], [&] { return Matrix(-g); });
                break;
            case Op::Neg:
                accumulate(n.inputs[0], [&] { return Matrix(-g); });
                break;
            case Op::Scale:
                accumulate(n.inputs[0], [&] { return Matrix(n.param * g); });
                break;
            case Op::AddScalar:
                accumulate(n.inputs[0], [&] { return Matrix(g); });
                break;
            case Op::MatMul:
                accumulate(n.inputs[0], [&] { return Matrix(g * in(1).transpose()); });
                accumulate(n.inputs[1], [&] { return Matrix(in(0).transpose() * g); });
                break;
            case Op::Mul:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct(in(1))); });
                accumulate(n.inputs[1], [&] { return Matrix(g.cwiseProduct(in(0))); });
                break;
            case Op::AddColBroadcast:
                accumulate(n.inputs[0], [&] { return Matrix(g); });
                accumulate(n.inputs[1], [&] { return Matrix(g.rowwise().sum()); });
                break;
            case Op::MulRowBroadcast: {
                const Matrix& a = in(0);
                const Matrix& b = in(1);
                Matrix ga = g;
                for (Eigen::Index j = 0; j < ga.cols(); ++j) {
                    ga.col(j) *= b(0, j);
                }
                accumulate(n.inputs[0], [&] { return Matrix(ga); });
                accumulate(n.inputs[1], [&] { return Matrix(g.cwiseProduct(a).colwise().sum()); });
                break;
            }
            case Op::Tanh:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct((1.0 - n.value.array().square()).matrix())); });
                break;
            case Op::Relu:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct((in(0).array() > 0.0).cast<double>().matrix())); });
                break;
            case Op::Sigmoid:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix())); });
                break;
            case Op::Log:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseQuotient(in(0))); });
                break;
            case Op::Abs:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct(in(0).unaryExpr(&sign_or_zero))); });
                break;
            case Op::Square:
                accumulate(n.inputs[0], [&] { return Matrix(2.0 * g.cwiseProduct(in(0))); });
                break;
            case Op::Sin:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct(in(0).array().cos().matrix())); });
                break;
            case Op::Softplus:
                accumulate(n.inputs[0], [&] { return Matrix(g.cwiseProduct(in(0).unaryExpr(&stable_sigmoid))); });
                break;
            case Op::Sum:
                accumulate(n.inputs[0], [&] { return Matrix(Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0))); });
                break;
            case Op::SumRows:
                accumulate(n.inputs[0], [&] { return Matrix(g.replicate(in(0).rows(), 1)); });
                break;
            case Op::Dot:
                accumulate(n.inputs[0], [&] { return Matrix(g(0, 0) * in(1)); });
                accumulate(n.inputs[1], [&] { return Matrix(g(0, 0) * in(0)); });
                break;
            case Op::Norm1:
                accumulate(n.inputs[0], [&] { return Matrix(g(0, 0) * in(0).unaryExpr(&sign_or_zero)); });
                break;
            case Op::Norm2: {
                const double norm = n.value(0, 0);
                if (norm > 0.0) {
                    accumulate(n.inputs[0], [&] { return Matrix((g(0, 0) / norm) * in(0)); });
                }
                break;
            }
            case Op::ColNorm2: {
                Matrix ga = Matrix::Zero(in(0).rows(), in(0).cols());
                for (Eigen::Index j = 0; j < ga.cols(); ++j) {
                    const double norm = n.value(0, j);
                    if (norm > 0.0) {
                        ga.col(j) = (g(0, j) / norm) * in(0).col(j);
                    }
                }
                accumulate(n.inputs[0], [&] { return Matrix(ga); });
                break;
            }
            case Op::Row: {
                Matrix ga = Matrix::Zero(in(0).rows(), in(0).cols());
                ga.row(n.index) = g;
                accumulate(n.inputs[0], [&] { return Matrix(ga); });
                break;
            }
            case Op::StackRows:
                for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    accumulate(n.inputs[i], [&] { return Matrix(g.row(static_cast<Eigen::Index>(i))); });
                }
                break;
            case Op::TileCols: {
                const Eigen::Index m = in(0).cols();
                Matrix ga = Matrix::Zero(in(0).rows(), m);
                for (int c = 0; c < n.index; ++c) {
                    ga += g.middleCols(c * m, m);
                }
                accumulate(n.inputs[0], [&] { return Matrix(ga); });
                break;
            }
            case Op::FoldBlocks: {
                const Eigen::Index m = n.value.cols();
                Matrix ga(1, in(0).cols());
                for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
                    ga.middleCols(i * m, m) = g.row(i);
                }
                accumulate(n.inputs[0], [&] { return Matrix(ga); });
                break;
            }
        }
    }

    std::vector<Matrix> out;
    out.reserve(wrt.size());
    for (const Var& v : wrt) {
        if (&v.tape() != this) {
            throw std::invalid_argument("autodiff: gradient requested for a node on a different tape");
        }
        const auto id = static_cast<std::size_t>(v.id());
        if (id <= last && adj[id].size() != 0) {
            out.push_back(adj[id]);
        } else {
            out.push_back(Matrix::Zero(value(v).rows(), value(v).cols()));
        }
    }
    return out;
}

Var operator+(Var a, Var b) {
    require_same_shape(Op::Add, a, b);
    return elementwise_binary(Op::Add, a, b, a.value() + b.value());
}

Var operator-(Var a, Var b) {
    require_same_shape(Op::Sub, a, b);
    return elementwise_binary(Op::Sub, a, b, a.value() - b.value());
}

Var operator-(Var a) {
    return a.tape().push(Op::Neg, {a.id()}, -a.value());
}

Var operator*(Var a, Var b) {
    require_same_shape(Op::Mul, a, b);
    return elementwise_binary(Op::Mul, a, b, a.value().cwiseProduct(b.value()));
}

Var operator*(Var a, double s) {
    return a.tape().push(Op::Scale, {a.id()}, s * a.value(), s);
}

Var operator*(double s, Var a) {
    return a * s;
}

Var operator+(Var a, double s) {
    return a.tape().push(Op::AddScalar, {a.id()}, (a.value().array() + s).matrix(), s);
}

Var operator+(double s, Var a) {
    return a + s;
}

Var operator-(Var a, double s) {
    return a + (-s);
}

Var operator-(double s, Var a) {
    return (-a) + s;
}

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    if (a.cols() != b.rows()) {
        shape_error(Op::MatMul, tape, {a, b}, "inner dimensions differ");
    }
    return tape.push(Op::MatMul, {a.id(), b.id()}, a.value() * b.value());
}

Var add_col_broadcast(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    if (b.cols() != 1 || b.rows() != a.rows()) {
        shape_error(Op::AddColBroadcast, tape, {a, b}, "bias must be a column with as many rows as the input");
    }
    return tape.push(Op::AddColBroadcast, {a.id(), b.id()}, a.value().colwise() + b.value().col(0));
}

Var mul_row_broadcast(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    if (b.rows() != 1 || b.cols() != a.cols()) {
        shape_error(Op::MulRowBroadcast, tape, {a, b}, "scale must be a row with as many columns as the input");
    }
    Matrix v = a.value();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        v.col(j) *= b.value()(0, j);
    }
    return tape.push(Op::MulRowBroadcast, {a.id(), b.id()}, std::move(v));
}

Var tanh(Var a) {
    return a.tape().push(Op::Tanh, {a.id()}, a.value().array().tanh().matrix());
}

Var relu(Var a) {
    return a.tape().push(Op::Relu, {a.id()}, a.value().cwiseMax(0.0));
}

Var sigmoid(Var a) {
    return a.tape().push(Op::Sigmoid, {a.id()}, a.value().unaryExpr(&stable_sigmoid));
}

Var log(Var a) {
    return a.tape().push(Op::Log, {a.id()}, a.value().array().log().matrix());
}

Var abs(Var a) {
    return a.tape().push(Op::Abs, {a.id()}, a.value().cwiseAbs());
}

Var square(Var a) {
    return a.tape().push(Op::Square, {a.id()}, a.value().array().square().matrix());
}

Var sin(Var a) {
    return a.tape().push(Op::Sin, {a.id()}, a.value().array().sin().matrix());
}

Var softplus(Var a) {
    return a.tape().push(Op::Softplus, {a.id()}, a.value().unaryExpr(&stable_softplus));
}

Var sum(Var a) {
    return a.tape().push(Op::Sum, {a.id()}, Matrix::Constant(1, 1, a.value().sum()));
}

Var sum_rows(Var a) {
    return a.tape().push(Op::SumRows, {a.id()}, a.value().colwise().sum());
}

Var dot(Var a, Var b) {
    require_same_shape(Op::Dot, a, b);
    return a.tape().push(Op::Dot, {a.id(), b.id()}, Matrix::Constant(1, 1, a.value().cwiseProduct(b.value()).sum()));
}

Var norm1(Var a) {
    return a.tape().push(Op::Norm1, {a.id()}, Matrix::Constant(1, 1, a.value().cwiseAbs().sum()));
}

Var norm2(Var a) {
    return a.tape().push(Op::Norm2, {a.id()}, Matrix::Constant(1, 1, a.value().norm()));
}

Var col_norm2(Var a) {
    return a.tape().push(Op::ColNorm2, {a.id()}, a.value().colwise().norm());
}

Var row(Var a, int i) {
    if (i < 0 || i >= a.rows()) {
        shape_error(Op::Row, a.tape(), {a}, "row index " + std::to_string(i) + " out of range");
    }
    return a.tape().push(Op::Row, {a.id()}, a.value().row(i), 0.0, i);
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) {
        throw ShapeError("autodiff: stack_rows needs at least one row");
    }
    Tape& tape = rows.front().tape();
    const Eigen::Index cols = rows.front().cols();
    Matrix v(static_cast<Eigen::Index>(rows.size()), cols);
    std::vector<int> inputs;
    inputs.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Var& r = rows[i];
        same_tape(rows.front(), r);
        if (r.rows() != 1 || r.cols() != cols) {
            shape_error(Op::StackRows, tape, {rows.front(), r}, "every input must be a row of equal width");
        }
        v.row(static_cast<Eigen::Index>(i)) = r.value();
        inputs.push_back(r.id());
    }
    return tape.push(Op::StackRows, std::move(inputs), std::move(v));
}

Var tile_cols(Var a, int copies) {
    if (copies < 1) {
        shape_error(Op::TileCols, a.tape(), {a}, "copies must be positive");
    }
    return a.tape().push(Op::TileCols, {a.id()}, a.value().replicate(1, copies), 0.0, copies);
}

Var fold_blocks(Var a, int blocks) {
    if (blocks < 1 || a.rows() != 1 || a.cols() % blocks != 0) {
        shape_error(Op::FoldBlocks, a.tape(), {a}, "input must be a row whose width is a multiple of " + std::to_string(blocks));
    }
    const Eigen::Index m = a.cols() / blocks;
    Matrix v(blocks, m);
    for (int i = 0; i < blocks; ++i) {
        v.row(i) = a.value().middleCols(i * m, m);
    }
    return a.tape().push(Op::FoldBlocks, {a.id()}, std::move(v), 0.0, blocks);
}

Var input_gradient_stencil(const ScoreFn& score, Var x, StencilOptions options) {
    if (!(options.step > 0.0)) {
        throw std::invalid_argument("input_gradient_stencil: step must be positive");
    }
    const auto n = static_cast<int>(x.rows());
    const Eigen::Index m = x.cols();
    if (n > options.max_dim) {
        throw std::invalid_argument("input_gradient_stencil: feature dimension " + std::to_string(n) +
                                    " exceeds limit " + std::to_string(options.max_dim));
    }
    Tape& tape = x.tape();
    Matrix offsets = Matrix::Zero(n, n * m);
    for (int i = 0; i < n; ++i) {
        offsets.block(i, i * m, 1, m).setConstant(options.step);
    }
    const Var tiled = tile_cols(x, n);
    const Var shift = tape.constant(std::move(offsets));
    const Var forward = score(tiled + shift);
    const Var backward = score(tiled - shift);
    if (!forward.value().allFinite() || !backward.value().allFinite()) {
        throw NonFiniteError("input_gradient_stencil: non-finite score at a stencil point");
    }
    return fold_blocks((forward - backward) * (0.5 / options.step), n);
}

Matrix input_gradient(const ScoreFn& score, const Matrix& x) {
    Tape tape;
    const Var input = tape.leaf(x, "input");
    const Var total = sum(score(input));
    return tape.gradient(total, input);
}

}  // namespace robrec::ad
