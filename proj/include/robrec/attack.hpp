#pragma once

// Minimal additive interventions that invalidate a recourse action: the
// analytic distance for linear models and a C&W-style search otherwise.

#include "robrec/model.hpp"
#include "robrec/scm.hpp"
#include "robrec/types.hpp"

#include <cstdint>
#include <limits>
#include <optional>

namespace robrec {

struct AttackResult {
    Vector delta;
    double magnitude = std::numeric_limits<double>::infinity();
    bool success = false;
    /// Exact distance when classifier and SCM are linear.
    std::optional<double> certified_lower_bound;
};

/// (<w, CF(x, a)> - b~) / ||J^T w||_2: the L2 distance in delta-space to the
/// decision boundary; negative when the action is already invalid.
double analytic_min_invalidation(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action);

struct CwParams {
    double c_lo = 1e-3;
    double c_hi = 1e3;
    int bisection_steps = 10;
    int inner_iters = 1000;
    double step = 0.01;
    int restarts = 3;
    double restart_std = 1e-3;
    int refine_steps = 60;
    std::uint64_t seed = 0;
};

/// Minimizes ||delta||^2 + c relu(h~(CF(CF(x, delta), a)) - b) by gradient
/// descent, bisecting c and keeping the smallest strictly invalidating
/// delta. The magnitude is an upper bound on the true minimum.
AttackResult cw_min_invalidation(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                                 const CwParams& params = {});

}  // namespace robrec
