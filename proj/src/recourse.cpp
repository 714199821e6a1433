#include "robrec/recourse.hpp"

#include "acted.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <tuple>

namespace robrec {

namespace {

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

// Worst-case delta for a fixed action; returns the best (lowest) logit.
std::pair<Vector, double> worst_delta(const detail::ActedLogit& acted, const Vector& theta, double eps, int steps,
                                      double h) {
    const int n = acted.size();
    Vector best = Vector::Zero(n);
    ad::Tape probe;
    double best_logit = acted(probe, probe.constant(Matrix::Zero(n, 1)), probe.constant(Matrix(theta))).scalar();
    if (eps <= 0.0) return {best, best_logit};
    Vector delta = Vector::Zero(n);
    for (int t = 0; t <= steps; ++t) {
        ad::Tape tape;
        const ad::Var d = tape.leaf(Matrix(delta));
        const ad::Var z = acted(tape, d, tape.constant(Matrix(theta)));
        if (z.scalar() < best_logit) {
            best_logit = z.scalar();
            best = delta;
        }
        if (t == steps) break;
        // Ascending the loss softplus(-z) is descending z.
        const Vector g = tape.gradient(z, d);
        if (!g.allFinite()) throw ad::NonFiniteError("inner_maximize: non-finite gradient");
        const double nrm = g.norm();
        if (nrm == 0.0) break;
        delta -= (h / nrm) * g;
        const double dn = delta.norm();
        if (dn > eps) delta *= eps / dn;
    }
    return {best, best_logit};
}

RecourseLoss acted_loss(const detail::ActedLogit& acted, const Vector& delta, const Vector& theta) {
    ad::Tape tape;
    const ad::Var d = tape.leaf(Matrix(delta));
    const ad::Var th = tape.leaf(Matrix(theta));
    const ad::Var z = acted(tape, d, th);
    const ad::Var loss = ad::softplus(-z);
    const std::vector<Matrix> g = tape.gradient(loss, std::vector<ad::Var>{th, d});
    return {z.scalar(), loss.scalar(), g[0], g[1]};
}

}  // namespace

// ---------------------------------------------------------------------------
// Specs

FeasibilitySpec FeasibilitySpec::all_free(int n) {
    FeasibilitySpec spec;
    for (int i = 0; i < n; ++i) {
        FeatureConstraint c;
        c.name = "x" + std::to_string(i + 1);
        c.actionable = true;
        spec.features.push_back(c);
    }
    return spec;
}

FeasibilitySpec FeasibilitySpec::from_mask(const Vector& actionable) {
    FeasibilitySpec spec = all_free(static_cast<int>(actionable.size()));
    for (Eigen::Index i = 0; i < actionable.size(); ++i) {
        spec.features[static_cast<std::size_t>(i)].actionable = actionable(i) != 0.0;
    }
    return spec;
}

void FeasibilitySpec::validate() const {
    for (const FeatureConstraint& c : features) {
        if (std::isnan(c.min) || std::isnan(c.max)) throw Error("feasibility: NaN bound on '" + c.name + "'");
        if (c.min > c.max) throw Error("feasibility: min > max on '" + c.name + "'");
    }
}

std::vector<int> FeasibilitySpec::actionable() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        if (features[static_cast<std::size_t>(i)].actionable) out.push_back(i);
    }
    return out;
}

Vector FeasibilitySpec::actionable_mask() const {
    Vector m(size());
    for (int i = 0; i < size(); ++i) m(i) = features[static_cast<std::size_t>(i)].actionable ? 1.0 : 0.0;
    return m;
}

std::pair<Vector, Vector> FeasibilitySpec::theta_bounds(const Vector& x, std::span<const int> intervened) const {
    if (x.size() != size()) throw Error("feasibility: individual has wrong length");
    const auto k = static_cast<Eigen::Index>(intervened.size());
    Vector lo(k), hi(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const int i = intervened[static_cast<std::size_t>(j)];
        if (i < 0 || i >= size()) throw Error("feasibility: intervened feature out of range");
        const FeatureConstraint& c = features[static_cast<std::size_t>(i)];
        if (!c.actionable) {
            lo(j) = hi(j) = 0.0;
            continue;
        }
        double l = c.min - x(i);
        double h = c.max - x(i);
        if (c.direction == Direction::IncreaseOnly) l = std::max(l, 0.0);
        if (c.direction == Direction::DecreaseOnly) h = std::min(h, 0.0);
        lo(j) = std::min(l, 0.0);
        hi(j) = std::max(h, 0.0);
    }
    return {lo, hi};
}

Vector FeasibilitySpec::project(const Vector& x, std::span<const int> intervened, const Vector& theta) const {
    const auto [lo, hi] = theta_bounds(x, intervened);
    return theta.cwiseMax(lo).cwiseMin(hi);
}

bool FeasibilitySpec::feasible(const Vector& x, const RecourseAction& action, double tol) const {
    action.validate(size());
    const auto [lo, hi] = theta_bounds(x, action.intervened);
    for (Eigen::Index j = 0; j < action.theta.size(); ++j) {
        if (action.theta(j) < lo(j) - tol || action.theta(j) > hi(j) + tol) return false;
    }
    return true;
}

void UncertaintySpec::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw Error("uncertainty: epsilon must be finite and >= 0");
}

double CostFn::weight(int feature) const {
    if (weights.size() == 0) return 1.0;
    if (feature < 0 || feature >= weights.size()) throw Error("cost: no weight for feature " + std::to_string(feature));
    return weights(feature);
}

double CostFn::operator()(const RecourseAction& action) const {
    double total = 0.0;
    for (std::size_t k = 0; k < action.intervened.size(); ++k) {
        total += weight(action.intervened[k]) * std::abs(action.theta(static_cast<Eigen::Index>(k)));
    }
    return total;
}

void SolverParams::validate() const {
    if (!(lambda0 > 0.0) || !(gamma > 0.0)) throw Error("solver: lambda0 and gamma must be positive");
    if (n_max < 1 || max_theta_steps < 1 || inner_steps < 1) throw Error("solver: iteration counts must be >= 1");
    if (!(alpha > 0.0)) throw Error("solver: alpha must be positive");
    if (!(inner_step_fraction > 0.0)) throw Error("solver: inner_step_fraction must be positive");
    if (exit_bisection_steps < 0) throw Error("solver: exit_bisection_steps must be >= 0");
    if (!(ray_scan_min > 0.0) || !(ray_scan_max >= ray_scan_min)) throw Error("solver: need 0 < ray_scan_min <= ray_scan_max");
}

bool is_valid_recourse(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action) {
    return clf.decide(scm.counterfactual_hard(x, action));
}

// ---------------------------------------------------------------------------
// Closed form

RecourseResult robust_linear_recourse(const Classifier& clf, const Scm& scm, const Vector& x,
                                      const FeasibilitySpec& feas, const UncertaintySpec& unc, const CostFn& cost) {
    if (clf.kind() != ClassifierKind::Linear || !scm.is_linear()) {
        throw Error("robust_linear_recourse needs a linear classifier and a linear SCM; use robust_recourse_pgd");
    }
    unc.validate();
    feas.validate();
    if (feas.size() != scm.size()) throw Error("feasibility spec and SCM disagree on the feature count");
    const HalfSpace hs = clf.half_space();
    const std::vector<int> intervened = feas.actionable();
    const auto k = static_cast<Eigen::Index>(intervened.size());
    RecourseAction action{intervened, Vector::Zero(k)};

    RecourseResult result;
    result.action = action;
    const Matrix jac = scm.interventional_jacobian(x, action);
    const double need = hs.b + unc.epsilon * (jac.transpose() * hs.w).norm() - hs.w.dot(x);
    if (need <= 0.0) {
        result.status = RecourseStatus::Found;
        result.cost = 0.0;
        return result;
    }
    if (k == 0) {
        result.message = "no actionable features";
        return result;
    }

    const Vector coef = scm.action_effect_matrix(x, action).transpose() * hs.w;
    const auto [lo, hi] = feas.theta_bounds(x, intervened);
    std::vector<Eigen::Index> order;
    for (Eigen::Index j = 0; j < k; ++j) {
        if (coef(j) != 0.0) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(coef(a)) / cost.weight(intervened[static_cast<std::size_t>(a)]) >
               std::abs(coef(b)) / cost.weight(intervened[static_cast<std::size_t>(b)]);
    });

    double remaining = need;
    Eigen::Index last = -1;
    for (Eigen::Index j : order) {
        const double limit = coef(j) > 0.0 ? hi(j) : lo(j);
        const double capacity = std::abs(coef(j) * limit);
        last = j;
        if (capacity >= remaining) {
            action.theta(j) = remaining / coef(j);
            remaining = 0.0;
            break;
        }
        action.theta(j) = limit;
        remaining -= capacity;
    }
    if (remaining > 0.0 || last < 0) {
        result.message = "feasibility constraints exhausted before reaching the margin";
        return result;
    }

    // Rounding can leave the margin a few ulps short; nudge the last
    // coordinate outward until the certificate holds in floating point.
    const double sign = coef(last) > 0.0 ? 1.0 : -1.0;
    const double bound = sign > 0.0 ? hi(last) : lo(last);
    const double target = hs.b + unc.epsilon * (jac.transpose() * hs.w).norm();
    double bump = std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(action.theta(last)));
    for (int tries = 0; tries < 60; ++tries) {
        const Vector cf = scm.counterfactual_hard(x, action);
        if (hs.w.dot(cf) >= target && clf.decide(cf)) break;
        action.theta(last) = sign > 0.0 ? std::min(bound, action.theta(last) + bump)
                                        : std::max(bound, action.theta(last) - bump);
        bump *= 2.0;
    }

    result.status = RecourseStatus::Found;
    result.action = action;
    result.cost = cost(action);
    result.tight = true;
    return result;
}

// ---------------------------------------------------------------------------
// Min-max solver

InnerResult inner_maximize(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                           const UncertaintySpec& unc, int steps, double step) {
    unc.validate();
    action.validate(scm.size());
    if (steps < 1) throw Error("inner_maximize: steps must be >= 1");
    const detail::ActedLogit acted(clf, scm, x, action.intervened);
    InnerResult best;
    const double h = step > 0.0 ? step : unc.epsilon / 5.0;
    std::tie(best.delta, best.logit) = worst_delta(acted, action.theta, unc.epsilon, steps, h);
    best.x_star = scm.counterfactual_additive(x, best.delta);
    return best;
}

RecourseLoss recourse_loss(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                           const Vector& delta) {
    action.validate(scm.size());
    if (delta.size() != scm.size()) throw Error("recourse_loss: delta has wrong length");
    const detail::ActedLogit acted(clf, scm, x, action.intervened);
    return acted_loss(acted, delta, action.theta);
}

namespace {

struct PgdProblem {
    const Classifier& clf;
    const Scm& scm;
    const Vector& x;
    const UncertaintySpec& unc;
    const CostFn& cost;
    const SolverParams& params;
    const detail::ActedLogit& acted;
    Vector lo, hi, weights;
    double zb = 0.0;
};

// `reached_valid` reports whether any iterate was nominally valid.
RecourseResult pgd_from(const PgdProblem& p, RecourseAction action, int& iterations, bool& reached_valid) {
    const auto k = action.theta.size();
    const double inner_step = p.unc.epsilon * p.params.inner_step_fraction;
    const bool increasing = p.params.schedule == LambdaSchedule::IncreasingConstraintWeight;
    const auto robust = [&](const Vector& theta, Vector* worst) {
        const auto [d, z] = worst_delta(p.acted, theta, p.unc.epsilon, p.params.inner_steps, inner_step);
        if (worst) *worst = d;
        const bool valid = is_valid_recourse(p.clf, p.scm, p.x, RecourseAction{action.intervened, theta});
        reached_valid = reached_valid || valid;
        return z >= p.zb && valid;
    };
    RecourseResult result;
    double lambda = p.params.lambda0;
    std::optional<Vector> previous;
    for (int round = 0; round < p.params.n_max; ++round) {
        for (int t = 0; t < p.params.max_theta_steps; ++t) {
            ++iterations;
            Vector worst_d;
            if (robust(action.theta, &worst_d)) {
                // The exit step can overshoot by a whole step; bisect back
                // toward the last failing iterate.
                if (previous) {
                    Vector lo = *previous;
                    for (int b = 0; b < p.params.exit_bisection_steps; ++b) {
                        const Vector mid = 0.5 * (lo + action.theta);
                        (robust(mid, nullptr) ? action.theta : lo) = mid;
                    }
                }
                result.status = RecourseStatus::Found;
                result.action = action;
                result.cost = p.cost(action);
                return result;
            }
            previous = action.theta;
            if (k == 0) {
                result.message = "no actionable features";
                return result;
            }
            const Vector g = acted_loss(p.acted, worst_d, action.theta).grad_theta;
            if (!g.allFinite()) {
                throw ad::NonFiniteError("robust_recourse_pgd: non-finite gradient at iteration " +
                                         std::to_string(iterations));
            }
            // Proximal step on the l1 cost, then the box/direction clip.
            const double loss_weight = increasing ? lambda : 1.0;
            const double cost_weight = increasing ? 1.0 : lambda;
            Vector next(k);
            for (Eigen::Index j = 0; j < k; ++j) {
                const double v = action.theta(j) - p.params.alpha * loss_weight * g(j);
                next(j) = std::clamp(soft_threshold(v, p.params.alpha * cost_weight * p.weights(j)), p.lo(j), p.hi(j));
            }
            const double change = (next - action.theta).cwiseAbs().maxCoeff();
            action.theta = next;
            if (change < p.params.tolerance) break;
        }
        lambda *= p.params.gamma;
    }
    result.message = "no robust action found within n_max rounds";
    return result;
}

// Cheapest nominally valid point on the rays +-e_j and +-1 inside the box,
// located by a geometric scan then bisection. Empty when no ray crosses.
std::optional<Vector> ray_start(const PgdProblem& p, const std::vector<int>& intervened) {
    const auto k = static_cast<Eigen::Index>(intervened.size());
    std::vector<Vector> dirs;
    for (Eigen::Index j = 0; j < k; ++j) {
        for (double s : {1.0, -1.0}) {
            Vector d = Vector::Zero(k);
            d(j) = s;
            dirs.push_back(d);
        }
    }
    if (k > 1) {
        dirs.push_back(Vector::Ones(k));
        dirs.push_back(-Vector::Ones(k));
    }
    const auto valid = [&](const Vector& theta) {
        return is_valid_recourse(p.clf, p.scm, p.x, RecourseAction{intervened, theta});
    };
    const auto clip = [&](const Vector& theta) { return theta.cwiseMax(p.lo).cwiseMin(p.hi); };
    std::optional<Vector> best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const Vector& d : dirs) {
        double prev = 0.0;
        double t = p.params.ray_scan_min;
        std::optional<double> crossing;
        while (t <= p.params.ray_scan_max * (1.0 + 1e-12)) {
            if (valid(clip(t * d))) {
                crossing = t;
                break;
            }
            prev = t;
            t *= 1.25;
        }
        if (!crossing) continue;
        double a = prev;
        double b = *crossing;
        for (int it = 0; it < 40 && b - a > 1e-6 * b; ++it) {
            const double m = 0.5 * (a + b);
            (valid(clip(m * d)) ? b : a) = m;
        }
        const Vector theta = clip(b * d);
        const double c = p.cost(RecourseAction{intervened, theta});
        if (c < best_cost) {
            best_cost = c;
            best = theta;
        }
    }
    return best;
}

}  // namespace

RecourseResult robust_recourse_pgd(const Classifier& clf, const Scm& scm, const Vector& x,
                                   const FeasibilitySpec& feas, const UncertaintySpec& unc, const CostFn& cost,
                                   const SolverParams& params) {
    params.validate();
    unc.validate();
    feas.validate();
    if (feas.size() != scm.size()) throw Error("feasibility spec and SCM disagree on the feature count");
    const std::vector<int> intervened = feas.actionable();
    const auto k = static_cast<Eigen::Index>(intervened.size());
    const auto [lo, hi] = feas.theta_bounds(x, intervened);
    const detail::ActedLogit acted(clf, scm, x, intervened);

    Vector weights(k);
    for (Eigen::Index j = 0; j < k; ++j) weights(j) = cost.weight(intervened[static_cast<std::size_t>(j)]);
    const PgdProblem problem{clf, scm, x, unc, cost, params, acted, lo, hi, weights, clf.logit_threshold()};

    int iterations = 0;
    bool reached_valid = false;
    RecourseResult result = pgd_from(problem, RecourseAction{intervened, Vector::Zero(k)}, iterations, reached_valid);
    // Only a run that never reached the valid region is restarted.
    if (!result.found() && !reached_valid && k > 0 && params.ray_restart) {
        if (const auto start = ray_start(problem, intervened)) {
            RecourseResult second = pgd_from(problem, RecourseAction{intervened, *start}, iterations, reached_valid);
            if (second.found()) result = std::move(second);
        }
    }
    result.iterations = iterations;
    return result;
}

RecourseResult generate_recourse(const Classifier& clf, const Scm& scm, const Vector& x,
                                 const FeasibilitySpec& feas, const UncertaintySpec& unc, const CostFn& cost,
                                 const SolverParams& params) {
    if (clf.kind() == ClassifierKind::Linear && scm.is_linear()) {
        return robust_linear_recourse(clf, scm, x, feas, unc, cost);
    }
    return robust_recourse_pgd(clf, scm, x, feas, unc, cost, params);
}

// ---------------------------------------------------------------------------
// Cost bounds

double cost_bound_beta(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                       const UncertaintySpec& unc) {
    unc.validate();
    const HalfSpace hs = clf.half_space();
    if (!scm.is_linear()) throw Error("cost_bound_beta needs a linear SCM");
    const double denom = hs.w.dot(scm.counterfactual_hard(x, action) - x);
    if (!(denom > 0.0)) throw Error("cost_bound_beta: <w, J theta> must be positive (action is not valid recourse)");
    const Matrix jac = scm.interventional_jacobian(x, action);
    return unc.epsilon * (jac.transpose() * hs.w).norm() / denom;
}

double cost_bound_beta_masked(const Classifier& clf, const RecourseAction& action, const Vector& actionable,
                              const UncertaintySpec& unc) {
    unc.validate();
    const HalfSpace hs = clf.half_space();
    if (actionable.size() != hs.w.size()) throw Error("cost_bound_beta_masked: mask has wrong length");
    const Vector wa = hs.w.cwiseProduct(actionable);
    const Vector wu = hs.w - wa;
    const double denom = wa.dot(action.dense(static_cast<int>(hs.w.size())));
    if (!(denom > 0.0)) throw Error("cost_bound_beta_masked: <m_A w, theta> must be positive");
    return unc.epsilon * (wa.norm() + wu.norm()) / denom;
}

}  // namespace robrec
