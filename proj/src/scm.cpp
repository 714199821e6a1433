#include "robrec/scm.hpp"

#include "robrec/io.hpp"
#include "loan_like_scm.inc"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace robrec {

namespace {

double square_of(double v) { return v * v; }
ad::Var square_of(ad::Var v) { return ad::square(v); }
double tanh_of(double v) { return std::tanh(v); }
ad::Var tanh_of(ad::Var v) { return ad::tanh(v); }

// A value that is either a known constant or a (possibly taped) quantity, so
// that constant sub-expressions never create tape nodes.
template <class V>
struct Term {
    bool is_const = true;
    double c = 0.0;
    V v{};

    static Term constant(double value) { return Term{true, value, V{}}; }
    static Term of(V value) { return Term{false, 0.0, value}; }
};

template <class V>
Term<V> add(const Term<V>& a, const Term<V>& b) {
    if (a.is_const && b.is_const) return Term<V>::constant(a.c + b.c);
    if (a.is_const) return a.c == 0.0 ? b : Term<V>::of(b.v + a.c);
    if (b.is_const) return b.c == 0.0 ? a : Term<V>::of(a.v + b.c);
    return Term<V>::of(a.v + b.v);
}

template <class V>
Term<V> sub(const Term<V>& a, const Term<V>& b) {
    if (a.is_const && b.is_const) return Term<V>::constant(a.c - b.c);
    if (a.is_const) return Term<V>::of(a.c - b.v);
    if (b.is_const) return b.c == 0.0 ? a : Term<V>::of(a.v - b.c);
    return Term<V>::of(a.v - b.v);
}

template <class V>
Term<V> mul(const Term<V>& a, const Term<V>& b) {
    if (a.is_const && b.is_const) return Term<V>::constant(a.c * b.c);
    if (a.is_const) return a.c == 1.0 ? b : Term<V>::of(b.v * a.c);
    if (b.is_const) return b.c == 1.0 ? a : Term<V>::of(a.v * b.c);
    return Term<V>::of(a.v * b.v);
}

template <class V>
Term<V> eval_expr(const Expr& e, const std::vector<std::optional<V>>& x) {
    switch (e.kind()) {
        case Expr::Kind::Constant:
            return Term<V>::constant(e.value());
        case Expr::Kind::Feature:
            return Term<V>::of(*x[static_cast<std::size_t>(e.index())]);
        case Expr::Kind::Add:
            return add(eval_expr<V>(e.args()[0], x), eval_expr<V>(e.args()[1], x));
        case Expr::Kind::Sub:
            return sub(eval_expr<V>(e.args()[0], x), eval_expr<V>(e.args()[1], x));
        case Expr::Kind::Mul:
            return mul(eval_expr<V>(e.args()[0], x), eval_expr<V>(e.args()[1], x));
        case Expr::Kind::Square: {
            const Term<V> a = eval_expr<V>(e.args()[0], x);
            return a.is_const ? Term<V>::constant(a.c * a.c) : Term<V>::of(square_of(a.v));
        }
        case Expr::Kind::Tanh: {
            const Term<V> a = eval_expr<V>(e.args()[0], x);
            return a.is_const ? Term<V>::constant(std::tanh(a.c)) : Term<V>::of(tanh_of(a.v));
        }
    }
    throw Error("scm: unknown expression kind");
}

template <class V>
Term<V> eval_mechanism(const Mechanism& m, const std::vector<int>& parents, const std::vector<std::optional<V>>& x,
                       bool tangent) {
    if (m.form == MechanismForm::Linear) {
        Term<V> acc = Term<V>::constant(tangent ? 0.0 : m.bias);
        for (std::size_t k = 0; k < parents.size(); ++k) {
            if (m.weights[k] == 0.0) continue;
            acc = add(acc, mul(Term<V>::constant(m.weights[k]), Term<V>::of(*x[static_cast<std::size_t>(parents[k])])));
        }
        return acc;
    }
    return add(Term<V>::constant(m.bias), eval_expr<V>(*m.expr, x));
}

std::vector<int> topological_order(const std::vector<std::vector<int>>& parents) {
    const auto n = static_cast<int>(parents.size());
    std::vector<int> indegree(static_cast<std::size_t>(n), 0);
    std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int p : parents[static_cast<std::size_t>(i)]) {
            if (p < 0 || p >= n) {
                throw Error("scm: node " + std::to_string(i) + " has out-of-range parent " + std::to_string(p));
            }
            if (p == i) {
                throw Error("scm: node " + std::to_string(i) + " lists itself as a parent");
            }
            children[static_cast<std::size_t>(p)].push_back(i);
            ++indegree[static_cast<std::size_t>(i)];
        }
    }
    // Kahn's algorithm, smallest index first for a deterministic order.
    std::vector<int> order;
    std::vector<int> ready;
    for (int i = 0; i < n; ++i) {
        if (indegree[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
    }
    while (!ready.empty()) {
        auto it = std::min_element(ready.begin(), ready.end());
        const int v = *it;
        ready.erase(it);
        order.push_back(v);
        for (int c : children[static_cast<std::size_t>(v)]) {
            if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
        }
    }
    if (static_cast<int>(order.size()) != n) {
        throw Error("scm: parent graph contains a cycle");
    }
    return order;
}

}  // namespace

// ---------------------------------------------------------------------------
// Expr

Expr Expr::make(Kind kind, std::vector<Expr> args) {
    auto node = std::make_shared<Node>();
    node->kind = kind;
    node->args = std::move(args);
    return Expr(std::move(node));
}

Expr Expr::constant(double value) {
    auto node = std::make_shared<Node>();
    node->kind = Kind::Constant;
    node->value = value;
    return Expr(std::move(node));
}

Expr Expr::feature(int index) {
    auto node = std::make_shared<Node>();
    node->kind = Kind::Feature;
    node->index = index;
    return Expr(std::move(node));
}

Expr Expr::square(Expr arg) { return make(Kind::Square, {std::move(arg)}); }
Expr Expr::tanh(Expr arg) { return make(Kind::Tanh, {std::move(arg)}); }
Expr operator+(Expr a, Expr b) { return Expr::make(Expr::Kind::Add, {std::move(a), std::move(b)}); }
Expr operator-(Expr a, Expr b) { return Expr::make(Expr::Kind::Sub, {std::move(a), std::move(b)}); }
Expr operator*(Expr a, Expr b) { return Expr::make(Expr::Kind::Mul, {std::move(a), std::move(b)}); }

void Expr::collect_features(std::vector<int>& out) const {
    if (kind() == Kind::Feature) out.push_back(index());
    for (const Expr& a : args()) a.collect_features(out);
}

std::string Expr::to_string() const {
    std::ostringstream os;
    switch (kind()) {
        case Kind::Constant: os << value(); break;
        case Kind::Feature: os << "x" << index(); break;
        case Kind::Add: os << "(" << args()[0].to_string() << " + " << args()[1].to_string() << ")"; break;
        case Kind::Sub: os << "(" << args()[0].to_string() << " - " << args()[1].to_string() << ")"; break;
        case Kind::Mul: os << "(" << args()[0].to_string() << " * " << args()[1].to_string() << ")"; break;
        case Kind::Square: os << "square(" << args()[0].to_string() << ")"; break;
        case Kind::Tanh: os << "tanh(" << args()[0].to_string() << ")"; break;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// RecourseAction

Vector RecourseAction::dense(int n) const {
    validate(n);
    Vector out = Vector::Zero(n);
    for (std::size_t k = 0; k < intervened.size(); ++k) {
        out(intervened[k]) = theta(static_cast<Eigen::Index>(k));
    }
    return out;
}

void RecourseAction::validate(int n) const {
    if (static_cast<Eigen::Index>(intervened.size()) != theta.size()) {
        throw Error("action: intervened set and theta differ in length");
    }
    if (!theta.allFinite()) {
        throw Error("action: theta must be finite");
    }
    if (intervened.empty() && theta.size() != 0) {
        throw Error("action: nonzero theta without intervened features");
    }
    std::vector<int> sorted = intervened;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw Error("action: duplicate intervened feature");
    }
    for (int i : intervened) {
        if (i < 0 || i >= n) throw Error("action: intervened feature " + std::to_string(i) + " out of range");
    }
}

// ---------------------------------------------------------------------------
// Scm

Scm::Scm(std::vector<std::string> feature_names, std::vector<std::vector<int>> parents,
         std::vector<Mechanism> mechanisms)
    : names_(std::move(feature_names)), parents_(std::move(parents)), mechanisms_(std::move(mechanisms)) {
    const auto n = parents_.size();
    if (n == 0) throw Error("scm: needs at least one feature");
    if (mechanisms_.size() != n) throw Error("scm: one mechanism per feature required");
    if (names_.empty()) {
        for (std::size_t i = 0; i < n; ++i) names_.push_back("x" + std::to_string(i + 1));
    }
    if (names_.size() != n) throw Error("scm: one feature name per feature required");
    topo_ = topological_order(parents_);

    for (std::size_t i = 0; i < n; ++i) {
        const Mechanism& m = mechanisms_[i];
        const auto& pa = parents_[i];
        if (m.form == MechanismForm::Linear) {
            if (m.weights.size() != pa.size()) {
                throw Error("scm: linear mechanism of '" + names_[i] + "' needs one weight per parent");
            }
        } else {
            linear_ = false;
            if (!m.expr) throw Error("scm: nonlinear mechanism of '" + names_[i] + "' has no expression");
            std::vector<int> used;
            m.expr->collect_features(used);
            for (int f : used) {
                if (std::find(pa.begin(), pa.end(), f) == pa.end()) {
                    throw Error("scm: mechanism of '" + names_[i] + "' reads x" + std::to_string(f) +
                                " which is not a parent");
                }
            }
        }
        if (!std::isfinite(m.bias)) throw Error("scm: non-finite bias");
    }
}

Scm Scm::imf(int n) {
    if (n < 1) throw Error("scm: imf needs at least one feature");
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) names.push_back("x" + std::to_string(i + 1));
    return Scm(std::move(names), std::vector<std::vector<int>>(static_cast<std::size_t>(n)),
               std::vector<Mechanism>(static_cast<std::size_t>(n)));
}

bool Scm::is_imf() const {
    return std::all_of(parents_.begin(), parents_.end(), [](const auto& p) { return p.empty(); });
}

namespace {

// Shared propagation for scalar and taped values:
//   value_i = fixed_i if set, else (f_i(value_pa) - base_f_i) + anchor_i
// where base_f_i is f_i at the factual individual. The difference form makes a
// zero perturbation reproduce the factual values bit-exactly. In tangent mode
// (linear SCMs only) biases and base terms drop out.
template <class V>
std::vector<V> propagate_values(const Scm& scm, const std::vector<V>& anchor, const std::vector<Term<V>>& base_f,
                                const std::vector<std::optional<V>>& fixed, bool tangent) {
    const auto n = static_cast<std::size_t>(scm.size());
    std::vector<std::optional<V>> x(n);
    for (int i : scm.topo_order()) {
        const auto k = static_cast<std::size_t>(i);
        if (fixed[k]) {
            x[k] = *fixed[k];
            continue;
        }
        if (scm.parents()[k].empty()) {
            x[k] = anchor[k];
            continue;
        }
        Term<V> f = eval_mechanism<V>(scm.mechanisms()[k], scm.parents()[k], x, tangent);
        if (!tangent) f = sub(f, base_f[k]);
        x[k] = add(f, Term<V>::of(anchor[k])).v;
    }
    std::vector<V> out;
    out.reserve(n);
    for (auto& v : x) out.push_back(*v);
    return out;
}

std::vector<Term<double>> as_terms(const std::vector<double>& v) {
    std::vector<Term<double>> out;
    out.reserve(v.size());
    for (double d : v) out.push_back(Term<double>::constant(d));
    return out;
}

std::vector<double> mechanism_values(const Scm& scm, const Vector& x) {
    const auto n = static_cast<std::size_t>(scm.size());
    std::vector<std::optional<double>> xv(n);
    for (std::size_t i = 0; i < n; ++i) xv[i] = x(static_cast<Eigen::Index>(i));
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Term<double> t = eval_mechanism<double>(scm.mechanisms()[i], scm.parents()[i], xv, false);
        f[i] = t.is_const ? t.c : t.v;
        if (!std::isfinite(f[i])) {
            throw Error("scm: non-finite mechanism output for feature '" + scm.feature_names()[i] + "'");
        }
    }
    return f;
}

std::vector<double> to_std(const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vector to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_input(const Scm& scm, const Vector& x, const char* what) {
    if (x.size() != scm.size()) {
        throw Error(std::string("scm: ") + what + " has length " + std::to_string(x.size()) + ", expected " +
                    std::to_string(scm.size()));
    }
    if (!x.allFinite()) throw Error(std::string("scm: ") + what + " must be finite");
}

}  // namespace

Vector Scm::abduct(const Vector& x) const {
    check_input(*this, x, "x");
    const std::vector<double> f = mechanism_values(*this, x);
    Vector u(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) u(i) = x(i) - f[static_cast<std::size_t>(i)];
    return u;
}

Vector Scm::reconstruct(const Vector& u) const {
    check_input(*this, u, "u");
    const auto n = static_cast<std::size_t>(size());
    std::vector<std::optional<double>> x(n);
    for (int i : topo_) {
        const auto k = static_cast<std::size_t>(i);
        const Term<double> f = eval_mechanism<double>(mechanisms_[k], parents_[k], x, false);
        x[k] = (f.is_const ? f.c : f.v) + u(i);
    }
    Vector out(size());
    for (std::size_t k = 0; k < n; ++k) out(static_cast<Eigen::Index>(k)) = *x[k];
    return out;
}

Vector Scm::counterfactual_additive(const Vector& x, const Vector& delta) const {
    check_input(*this, x, "x");
    check_input(*this, delta, "delta");
    const Vector anchor = x + delta;
    const std::vector<std::optional<double>> none(static_cast<std::size_t>(size()));
    return to_eigen(propagate_values<double>(*this, to_std(anchor), as_terms(mechanism_values(*this, x)), none, false));
}

Vector Scm::counterfactual_hard(const Vector& x, const RecourseAction& action) const {
    return apply_action_to_perturbed(x, Vector::Zero(size()), action);
}

Vector Scm::apply_action_to_perturbed(const Vector& x, const Vector& delta, const RecourseAction& action) const {
    check_input(*this, x, "x");
    check_input(*this, delta, "delta");
    action.validate(size());
    const std::vector<double> anchor = to_std(x + delta);
    const std::vector<Term<double>> base_f = as_terms(mechanism_values(*this, x));
    const auto n = static_cast<std::size_t>(size());
    std::vector<std::optional<double>> fixed(n);
    const std::vector<double> perturbed =
        delta.isZero(0.0) ? to_std(x) : propagate_values<double>(*this, anchor, base_f, fixed, false);
    for (std::size_t k = 0; k < action.intervened.size(); ++k) {
        const auto i = static_cast<std::size_t>(action.intervened[k]);
        fixed[i] = perturbed[i] + action.theta(static_cast<Eigen::Index>(k));
    }
    // Abducting the perturbed individual gives u + delta, so the same anchor
    // serves the second pass.
    return to_eigen(propagate_values<double>(*this, anchor, base_f, fixed, false));
}

Matrix Scm::interventional_jacobian(const Vector& x, std::span<const int> intervened) const {
    RecourseAction action{std::vector<int>(intervened.begin(), intervened.end()),
                          Vector::Zero(static_cast<Eigen::Index>(intervened.size()))};
    return interventional_jacobian(x, action);
}

Matrix Scm::interventional_jacobian(const Vector& x, const RecourseAction& action) const {
    check_input(*this, x, "x");
    action.validate(size());
    const int n = size();
    Matrix jac(n, n);
    if (linear_) {
        const std::vector<Term<double>> unused(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            std::vector<double> unit(static_cast<std::size_t>(n), 0.0);
            unit[static_cast<std::size_t>(j)] = 1.0;
            std::vector<std::optional<double>> fixed(static_cast<std::size_t>(n));
            const std::vector<double> first = propagate_values<double>(*this, unit, unused, fixed, true);
            for (int i : action.intervened) fixed[static_cast<std::size_t>(i)] = first[static_cast<std::size_t>(i)];
            jac.col(j) = to_eigen(propagate_values<double>(*this, unit, unused, fixed, true));
        }
        return jac;
    }
    ad::Tape tape;
    const ad::Var delta = tape.leaf(Matrix::Zero(n, 1), "delta");
    const ad::Var theta = tape.constant(action.theta);
    const ad::Var out = counterfactual(tape, x, delta, action.intervened, theta);
    for (int i = 0; i < n; ++i) {
        jac.row(i) = tape.gradient(ad::row(out, i), delta).transpose();
    }
    return jac;
}

Matrix Scm::action_effect_matrix(const Vector& x, const RecourseAction& action) const {
    check_input(*this, x, "x");
    action.validate(size());
    const int n = size();
    const auto k = static_cast<int>(action.intervened.size());
    Matrix effect(n, k);
    if (linear_) {
        const std::vector<double> zero(static_cast<std::size_t>(n), 0.0);
        const std::vector<Term<double>> unused(static_cast<std::size_t>(n));
        for (int c = 0; c < k; ++c) {
            std::vector<std::optional<double>> fixed(static_cast<std::size_t>(n));
            for (int j = 0; j < k; ++j) {
                fixed[static_cast<std::size_t>(action.intervened[static_cast<std::size_t>(j)])] = (j == c) ? 1.0 : 0.0;
            }
            effect.col(c) = to_eigen(propagate_values<double>(*this, zero, unused, fixed, true));
        }
        return effect;
    }
    ad::Tape tape;
    const ad::Var theta = tape.leaf(action.theta, "theta");
    const ad::Var out = counterfactual(tape, x, std::nullopt, action.intervened, theta);
    for (int i = 0; i < n; ++i) {
        effect.row(i) = tape.gradient(ad::row(out, i), theta).transpose();
    }
    return effect;
}

ad::Var Scm::counterfactual(ad::Tape& tape, const Matrix& x, std::optional<ad::Var> delta,
                            std::span<const int> intervened, std::optional<ad::Var> theta) const {
    const int n = size();
    const Eigen::Index m = x.cols();
    if (x.rows() != n) throw Error("scm: batch must have one row per feature");
    if (delta && (delta->rows() != n || delta->cols() != m)) throw Error("scm: delta must be n x m");
    if (theta && (theta->rows() != static_cast<Eigen::Index>(intervened.size()) || theta->cols() != m)) {
        throw Error("scm: theta must be |I| x m");
    }

    Matrix base_f(n, m);
    for (Eigen::Index c = 0; c < m; ++c) {
        const std::vector<double> f = mechanism_values(*this, x.col(c));
        base_f.col(c) = to_eigen(f);
    }

    const auto un = static_cast<std::size_t>(n);
    std::vector<ad::Var> anchor(un);
    std::vector<Term<ad::Var>> base(un);
    for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const ad::Var factual = tape.constant(x.row(i));
        anchor[k] = delta ? factual + ad::row(*delta, i) : factual;
        if (!parents_[k].empty()) base[k] = Term<ad::Var>::of(tape.constant(base_f.row(i)));
    }

    std::vector<std::optional<ad::Var>> fixed(un);
    if (intervened.empty()) {
        return ad::stack_rows(propagate_values<ad::Var>(*this, anchor, base, fixed, false));
    }
    const std::vector<ad::Var> perturbed =
        delta ? propagate_values<ad::Var>(*this, anchor, base, fixed, false) : anchor;
    for (std::size_t k = 0; k < intervened.size(); ++k) {
        const auto i = static_cast<std::size_t>(intervened[k]);
        fixed[i] = theta ? perturbed[i] + ad::row(*theta, static_cast<int>(k)) : perturbed[i];
    }
    return ad::stack_rows(propagate_values<ad::Var>(*this, anchor, base, fixed, false));
}

Scm builtin_scm(const std::string& name) {
    if (name == "income-savings") {
        Mechanism income;
        Mechanism savings{MechanismForm::Linear, {1.0}, 0.0, std::nullopt};
        return Scm({"income", "savings"}, {{}, {0}}, {income, savings});
    }
    if (name == "quadratic") {
        Mechanism x1;
        Mechanism x2{MechanismForm::Nonlinear, {}, 0.0, Expr::square(Expr::feature(0))};
        return Scm({"x1", "x2"}, {{}, {0}}, {x1, x2});
    }
    if (name == "loan-like") {
        return io::scm_from_json(nlohmann::json::parse(loan_like_scm_json()));
    }
    if (name.rfind("imf-", 0) == 0) {
        const std::string count = name.substr(4);
        if (!count.empty() && std::all_of(count.begin(), count.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            return Scm::imf(std::stoi(count));
        }
    }
    throw Error("scm: unknown builtin '" + name + "' (expected income-savings, quadratic, loan-like or imf-<k>)");
}

const std::string& loan_like_scm_json() {
    static const std::string text = kLoanLikeScmJson;
    return text;
}

}  // namespace robrec
