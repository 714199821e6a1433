#pragma once

// Finite-difference gradient checks shared by the unit and acceptance tests.

#include "oracles.hpp"

#include "robrec/autodiff.hpp"
#include "robrec/model.hpp"
#include "robrec/recourse.hpp"
#include "robrec/scm.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace gradcheck {

using namespace robrec;
using namespace robrec::ad;

struct Primitive {
    std::string name;
    std::vector<std::pair<int, int>> shapes;
    std::function<Var(std::vector<Var>&)> build;
    bool positive = false;  // inputs must be > 0
};

inline std::vector<Primitive> primitives() {
    return {
        {"add", {{3, 2}, {3, 2}}, [](auto& v) { return v[0] + v[1]; }},
        {"sub", {{3, 2}, {3, 2}}, [](auto& v) { return v[0] - v[1]; }},
        {"neg", {{3, 2}}, [](auto& v) { return -v[0]; }},
        {"scale", {{3, 2}}, [](auto& v) { return v[0] * 2.5; }},
        {"add_scalar", {{3, 2}}, [](auto& v) { return 1.5 - v[0]; }},
        {"mul", {{3, 2}, {3, 2}}, [](auto& v) { return v[0] * v[1]; }},
        {"matvec", {{3, 4}, {4, 1}}, [](auto& v) { return matmul(v[0], v[1]); }},
        {"matmul", {{3, 4}, {4, 2}}, [](auto& v) { return matmul(v[0], v[1]); }},
        {"add_col_broadcast", {{3, 4}, {3, 1}}, [](auto& v) { return add_col_broadcast(v[0], v[1]); }},
        {"mul_row_broadcast", {{3, 4}, {1, 4}}, [](auto& v) { return mul_row_broadcast(v[0], v[1]); }},
        {"tanh", {{3, 2}}, [](auto& v) { return robrec::ad::tanh(v[0]); }},
        {"relu", {{3, 2}}, [](auto& v) { return relu(v[0]); }},
        {"sigmoid", {{3, 2}}, [](auto& v) { return sigmoid(v[0]); }},
        {"log", {{3, 2}}, [](auto& v) { return robrec::ad::log(v[0]); }, true},
        {"abs", {{3, 2}}, [](auto& v) { return robrec::ad::abs(v[0]); }},
        {"square", {{3, 2}}, [](auto& v) { return square(v[0]); }},
        {"sin", {{3, 2}}, [](auto& v) { return robrec::ad::sin(v[0]); }},
        {"softplus", {{3, 2}}, [](auto& v) { return softplus(v[0]); }},
        {"sum", {{3, 2}}, [](auto& v) { return sum(v[0]); }},
        {"sum_rows", {{3, 2}}, [](auto& v) { return sum_rows(v[0]); }},
        {"dot", {{4, 1}, {4, 1}}, [](auto& v) { return dot(v[0], v[1]); }},
        {"norm1", {{4, 1}}, [](auto& v) { return norm1(v[0]); }},
        {"norm2", {{4, 1}}, [](auto& v) { return norm2(v[0]); }},
        {"col_norm2", {{3, 4}}, [](auto& v) { return col_norm2(v[0]); }},
        {"row", {{3, 4}}, [](auto& v) { return row(v[0], 1); }},
        {"stack_rows", {{1, 3}, {1, 3}},
         [](auto& v) {
             const std::vector<Var> rows{v[1], v[0], v[1]};
             return stack_rows(rows);
         }},
        {"tile_cols", {{3, 2}}, [](auto& v) { return tile_cols(v[0], 3); }},
        {"fold_blocks", {{1, 6}}, [](auto& v) { return fold_blocks(v[0], 3); }},
    };
}

inline Matrix random_input(int r, int c, bool positive, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.2, 2.0);
    std::bernoulli_distribution sign(0.5);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) m(i, j) = (positive || sign(rng) ? 1.0 : -1.0) * mag(rng);
    }
    return m;
}

// Scalar root = sum(weights .* op(inputs)) evaluated on a fresh tape.
inline double evaluate(const Primitive& p, const std::vector<Matrix>& inputs, const Matrix& weights) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.constant(m));
    const Var out = p.build(leaves);
    return (out.value().array() * weights.array()).sum();
}

/// Worst relative error of the reverse-mode gradient of sum(weights .* op)
/// against central differences over `trials` random instances.
inline double primitive_worst_error(const Primitive& p, int trials, std::mt19937_64& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<Matrix> inputs;
        for (auto [r, c] : p.shapes) inputs.push_back(random_input(r, c, p.positive, rng));
        Tape probe;
        std::vector<Var> pl;
        for (const Matrix& m : inputs) pl.push_back(probe.constant(m));
        const Var shape = p.build(pl);
        const Matrix weights =
            random_input(static_cast<int>(shape.rows()), static_cast<int>(shape.cols()), false, rng);

        Tape tape;
        std::vector<Var> leaves;
        for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m));
        const Var root = sum(p.build(leaves) * tape.constant(weights));
        const std::vector<Matrix> grads = tape.gradient(root, leaves);
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            const Matrix fd = oracle::central_diff(
                [&](const Matrix& m) {
                    std::vector<Matrix> in = inputs;
                    in[k] = m;
                    return evaluate(p, in, weights);
                },
                inputs[k]);
            worst = std::max(worst, oracle::rel_err(grads[k], fd, 1e-3));
        }
    }
    return worst;
}

inline Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

inline robrec::Classifier small_mlp(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return robrec::Classifier::random_mlp(n, {6, 6}, Activation::Tanh, rng);
}

// Training loss (BCE + regularizer with the inner solution held fixed) as a
// plain function of the flat parameter vector.
inline double objective_value(const robrec::Classifier& base, const Vector& flat, const Matrix& xb, const Vector& yb,
                       const robrec::Objective objective, const Matrix& delta, const Vector& mask) {
    robrec::Classifier clf = base;
    clf.set_parameters(flat);
    ad::Tape tape;
    std::vector<ad::Var> params;
    for (const Matrix& b : clf.parameter_blocks()) params.push_back(tape.constant(b));
    ad::Var loss = bce_with_logits(clf.logit(params, tape.constant(xb)), yb);
    if (objective == robrec::Objective::Allr) {
        loss = loss + allr_penalty_given_delta(clf, params, xb, delta, mask, {1.0, 0.7, 0.3, 10, 1e-4});
    } else if (objective == robrec::Objective::Ross) {
        loss = loss + ross_penalty_given_delta(clf, params, xb, delta, mask, 0.8);
    }
    return loss.scalar();
}

inline Vector taped_gradient(const robrec::Classifier& clf, const Matrix& xb, const Vector& yb, robrec::Objective objective,
                      const Matrix& delta, const Vector& mask) {
    ad::Tape tape;
    std::vector<ad::Var> params;
    for (const Matrix& b : clf.parameter_blocks()) params.push_back(tape.leaf(b));
    ad::Var loss = bce_with_logits(clf.logit(params, tape.constant(xb)), yb);
    if (objective == robrec::Objective::Allr) {
        loss = loss + allr_penalty_given_delta(clf, params, xb, delta, mask, {1.0, 0.7, 0.3, 10, 1e-4});
    } else if (objective == robrec::Objective::Ross) {
        loss = loss + ross_penalty_given_delta(clf, params, xb, delta, mask, 0.8);
    }
    const auto grads = tape.gradient(loss, params);
    robrec::Classifier shaped = clf;
    shaped.set_parameter_blocks(grads);
    return shaped.parameters();
}

/// Worst relative error of the taped training-loss gradient (BCE plus the
/// regularizer with its inner solution fixed) over `trials` random MLPs.
inline double loss_worst_error(robrec::Objective obj, int trials, std::mt19937_64& rng) {
    Vector mask(3);
    mask << 1, 0, 1;
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const robrec::Classifier clf = small_mlp(3, rng());
        const Matrix xb = random_matrix(3, 4, rng);
        Vector yb(4);
        yb << 0, 1, 1, 0;
        const Matrix delta = random_matrix(3, 4, rng, 0.1);
        const Vector g = taped_gradient(clf, xb, yb, obj, delta, mask);
        const Vector flat = clf.parameters();
        const Matrix fd = oracle::central_diff(
            [&](const Matrix& p) { return objective_value(clf, p, xb, yb, obj, delta, mask); }, flat);
        worst = std::max(worst, oracle::rel_err(g, fd, 1e-2));
    }
    return worst;
}

/// Worst relative error of the solver's validity-loss gradients (theta and
/// delta) over `trials` random MLP instances on each builtin SCM. The
/// oracle differentiates softplus(-z) of the untaped counterfactual path.
inline double solver_loss_worst_error(int trials, std::mt19937_64& rng) {
    double worst = 0.0;
    for (const char* name : {"imf-2", "income-savings", "quadratic", "loan-like"}) {
        const Scm scm = builtin_scm(name);
        const int n = scm.size();
        for (int t = 0; t < trials; ++t) {
            const Classifier clf = Classifier::random_mlp(n, {6}, Activation::Tanh, rng);
            const Vector x = random_matrix(n, 1, rng);
            std::vector<int> intervened;
            for (int i = 0; i < n; ++i) {
                if (std::bernoulli_distribution(0.6)(rng) || (i == n - 1 && intervened.empty())) intervened.push_back(i);
            }
            const RecourseAction action{intervened, random_matrix(static_cast<int>(intervened.size()), 1, rng, 0.5)};
            const Vector delta = random_matrix(n, 1, rng, 0.1);
            const auto loss = [&](const Vector& theta, const Vector& d) {
                const double z = clf.logit(scm.apply_action_to_perturbed(x, d, RecourseAction{intervened, theta}));
                return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
            };
            const RecourseLoss r = recourse_loss(clf, scm, x, action, delta);
            const Matrix fd_theta =
                oracle::central_diff([&](const Matrix& th) { return loss(th, delta); }, action.theta);
            const Matrix fd_delta = oracle::central_diff([&](const Matrix& d) { return loss(action.theta, d); }, delta);
            worst = std::max(worst, oracle::rel_err(r.grad_theta, fd_theta, 1e-2));
            worst = std::max(worst, oracle::rel_err(r.grad_delta, fd_delta, 1e-2));
            worst = std::max(worst, std::abs(r.loss - loss(action.theta, delta)));
        }
    }
    return worst;
}

}  // namespace gradcheck
