#include "robrec/attack.hpp"

#include "acted.hpp"

#include <cmath>
#include <random>

namespace robrec {

namespace {

bool invalidates(const Classifier& clf, const Scm& scm, const Vector& x, const Vector& delta,
                 const RecourseAction& action) {
    return clf.logit(scm.apply_action_to_perturbed(x, delta, action)) < clf.logit_threshold();
}

}  // namespace

double analytic_min_invalidation(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action) {
    if (!scm.is_linear()) throw Error("analytic_min_invalidation needs a linear SCM");
    const HalfSpace hs = clf.half_space();
    const Matrix jac = scm.interventional_jacobian(x, action);
    const double norm = (jac.transpose() * hs.w).norm();
    if (norm == 0.0) throw Error("analytic_min_invalidation: classifier is constant along every perturbation direction");
    return (hs.w.dot(scm.counterfactual_hard(x, action)) - hs.b) / norm;
}

AttackResult cw_min_invalidation(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                                 const CwParams& params) {
    if (!(params.c_lo > 0.0) || !(params.c_hi >= params.c_lo)) throw Error("cw: need 0 < c_lo <= c_hi");
    if (params.bisection_steps < 1 || params.inner_iters < 1 || params.restarts < 0) {
        throw Error("cw: iteration counts must be positive");
    }
    action.validate(scm.size());
    const int n = scm.size();
    const double zb = clf.logit_threshold();
    const double b = clf.threshold();

    AttackResult result;
    result.delta = Vector::Zero(n);
    if (clf.kind() == ClassifierKind::Linear && scm.is_linear()) {
        result.certified_lower_bound = analytic_min_invalidation(clf, scm, x, action);
    }
    if (invalidates(clf, scm, x, result.delta, action)) {
        result.success = true;
        result.magnitude = 0.0;
        return result;
    }

    const detail::ActedLogit acted(clf, scm, x, action.intervened);
    const int m = 1 + params.restarts;
    const Matrix theta = action.theta.replicate(1, m);
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> normal(0.0, params.restart_std);
    Matrix init = Matrix::Zero(n, m);
    for (int j = 1; j < m; ++j) {
        for (int i = 0; i < n; ++i) init(i, j) = normal(rng);
    }

    bool have_best = false;
    Vector best;
    double best_norm = std::numeric_limits<double>::infinity();
    double lo = params.c_lo;
    double hi = params.c_hi;
    double c = std::sqrt(lo * hi);
    for (int s = 0; s < params.bisection_steps; ++s) {
        Matrix d = init;
        bool succeeded = false;
        for (int it = 0; it <= params.inner_iters; ++it) {
            ad::Tape tape;
            const ad::Var dv = tape.leaf(d);
            const ad::Var z = acted(tape, dv, tape.constant(theta));
            const Matrix& zv = z.value();
            for (int j = 0; j < m; ++j) {
                if (zv(0, j) < zb) {
                    succeeded = true;
                    const double nrm = d.col(j).norm();
                    if (nrm < best_norm) {
                        best_norm = nrm;
                        best = d.col(j);
                        have_best = true;
                    }
                }
            }
            if (it == params.inner_iters) break;
            const ad::Var objective = ad::sum(ad::square(dv)) + ad::sum(ad::relu(ad::sigmoid(z) - b)) * c;
            const Matrix g = tape.gradient(objective, dv);
            if (!g.allFinite()) break;
            d -= params.step * g;
        }
        if (succeeded) {
            hi = c;
        } else {
            lo = c;
        }
        c = std::sqrt(lo * hi);
    }
    if (!have_best) return result;

    // Shrink along the ray to the boundary crossing; only ever lowers the
    // reported magnitude and keeps strict invalidation.
    if (invalidates(clf, scm, x, best, action)) {
        double t_lo = 0.0;
        double t_hi = 1.0;
        for (int r = 0; r < params.refine_steps; ++r) {
            const double mid = 0.5 * (t_lo + t_hi);
            if (invalidates(clf, scm, x, mid * best, action)) {
                t_hi = mid;
            } else {
                t_lo = mid;
            }
        }
        best *= t_hi;
    }
    if (!invalidates(clf, scm, x, best, action)) return result;
    result.success = true;
    result.delta = best;
    result.magnitude = best.norm();
    return result;
}

}  // namespace robrec
