#pragma once

// Additive-noise structural causal models: x_i = f_i(x_pa(i)) + u_i over a DAG.

#include "robrec/autodiff.hpp"
#include "robrec/types.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace robrec {

/// Expression tree over parent features, used by NONLINEAR mechanisms.
class Expr {
public:
    enum class Kind { Constant, Feature, Add, Sub, Mul, Square, Tanh };

    static Expr constant(double value);
    static Expr feature(int index);
    static Expr square(Expr arg);
    static Expr tanh(Expr arg);
    friend Expr operator+(Expr a, Expr b);
    friend Expr operator-(Expr a, Expr b);
    friend Expr operator*(Expr a, Expr b);

    [[nodiscard]] Kind kind() const { return node_->kind; }
    [[nodiscard]] double value() const { return node_->value; }
    [[nodiscard]] int index() const { return node_->index; }
    [[nodiscard]] const std::vector<Expr>& args() const { return node_->args; }
    /// Every feature index referenced anywhere in the tree.
    void collect_features(std::vector<int>& out) const;
    [[nodiscard]] std::string to_string() const;

private:
    struct Node {
        Kind kind;
        double value = 0.0;
        int index = -1;
        std::vector<Expr> args;
    };
    explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
    static Expr make(Kind kind, std::vector<Expr> args);

    std::shared_ptr<const Node> node_;
};

enum class MechanismForm { Linear, Nonlinear };

/// f_i(x_pa(i)). LINEAR: bias + sum_k weights[k] * x[parents[k]].
/// NONLINEAR: bias + expr(x), where expr may only reference parents.
struct Mechanism {
    MechanismForm form = MechanismForm::Linear;
    std::vector<double> weights;
    double bias = 0.0;
    std::optional<Expr> expr;
};

class Scm {
public:
    /// Validates the parent graph (acyclic, in range, no self loops) and that
    /// each mechanism only reads its parents.
    Scm(std::vector<std::string> feature_names, std::vector<std::vector<int>> parents,
        std::vector<Mechanism> mechanisms);

    /// Independently manipulable features: no edges, f_i = 0.
    static Scm imf(int n);

    [[nodiscard]] int size() const { return static_cast<int>(parents_.size()); }
    [[nodiscard]] bool is_linear() const { return linear_; }
    [[nodiscard]] bool is_imf() const;
    [[nodiscard]] const std::vector<std::string>& feature_names() const { return names_; }
    [[nodiscard]] const std::vector<std::vector<int>>& parents() const { return parents_; }
    [[nodiscard]] const std::vector<Mechanism>& mechanisms() const { return mechanisms_; }
    [[nodiscard]] const std::vector<int>& topo_order() const { return topo_; }

    /// u = S^{-1}(x).
    [[nodiscard]] Vector abduct(const Vector& x) const;
    /// x = S(u).
    [[nodiscard]] Vector reconstruct(const Vector& u) const;
    /// CF(x, do(X_I = x_I + theta)).
    [[nodiscard]] Vector counterfactual_hard(const Vector& x, const RecourseAction& action) const;
    /// CF(x, Delta) = S(S^{-1}(x) + Delta).
    [[nodiscard]] Vector counterfactual_additive(const Vector& x, const Vector& delta) const;
    /// CF(CF(x, Delta), a) with the intervened values anchored at CF(x, Delta).
    [[nodiscard]] Vector apply_action_to_perturbed(const Vector& x, const Vector& delta,
                                                   const RecourseAction& action) const;

    /// d/dDelta of apply_action_to_perturbed at Delta = 0. Exact (and independent
    /// of theta) for linear SCMs; a local Jacobian at (x, theta) otherwise.
    [[nodiscard]] Matrix interventional_jacobian(const Vector& x, const RecourseAction& action) const;
    [[nodiscard]] Matrix interventional_jacobian(const Vector& x, std::span<const int> intervened) const;
    /// d/dtheta of counterfactual_hard(x, a): n x |I|.
    [[nodiscard]] Matrix action_effect_matrix(const Vector& x, const RecourseAction& action) const;

    /// Differentiable CF(CF(x, delta), do(X_I = x'_I + theta)) for a batch.
    /// `x` is n x m (one individual per column); `delta` is n x m and `theta`
    /// is |I| x m. Either may be omitted (treated as zero / no intervention).
    [[nodiscard]] ad::Var counterfactual(ad::Tape& tape, const Matrix& x, std::optional<ad::Var> delta,
                                         std::span<const int> intervened, std::optional<ad::Var> theta) const;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<int>> parents_;
    std::vector<Mechanism> mechanisms_;
    std::vector<int> topo_;
    bool linear_ = true;
};

/// income-savings | quadratic | loan-like | imf-<k>.
Scm builtin_scm(const std::string& name);

/// JSON text of the loan-like SCM as shipped in configs/scm/loan_like.json.
const std::string& loan_like_scm_json();

}  // namespace robrec
