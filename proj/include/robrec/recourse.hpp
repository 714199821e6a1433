#pragma once

// Standard and adversarially robust recourse: feasibility sets, the l1 cost,
// the closed-form solver for linear models and the projected-gradient min-max
// solver for differentiable ones.

#include "robrec/model.hpp"
#include "robrec/scm.hpp"
#include "robrec/types.hpp"

#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace robrec {

enum class Direction { Free, IncreaseOnly, DecreaseOnly };

/// Bounds apply to the post-action value of the feature.
struct FeatureConstraint {
    std::string name;
    bool actionable = false;
    Direction direction = Direction::Free;
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
};

struct FeasibilitySpec {
    std::vector<FeatureConstraint> features;

    static FeasibilitySpec all_free(int n);
    static FeasibilitySpec from_mask(const Vector& actionable);

    [[nodiscard]] int size() const { return static_cast<int>(features.size()); }
    void validate() const;
    /// Indices of actionable features: the default intervention set I.
    [[nodiscard]] std::vector<int> actionable() const;
    /// m_A as a 0/1 vector.
    [[nodiscard]] Vector actionable_mask() const;
    /// Per-coordinate [lo, hi] for theta on `intervened` at individual x. The
    /// range always contains 0 (doing nothing is feasible).
    [[nodiscard]] std::pair<Vector, Vector> theta_bounds(const Vector& x, std::span<const int> intervened) const;
    /// Coordinate-wise clip of theta into its bounds.
    [[nodiscard]] Vector project(const Vector& x, std::span<const int> intervened, const Vector& theta) const;
    [[nodiscard]] bool feasible(const Vector& x, const RecourseAction& action, double tol = 0.0) const;
};

enum class UncertaintyNorm { L2 };

struct UncertaintySpec {
    UncertaintyNorm norm = UncertaintyNorm::L2;
    double epsilon = 0.0;

    void validate() const;
};

/// c(x, a) = sum_k weight_k |theta_k|; empty weights mean all ones.
struct CostFn {
    Vector weights;

    [[nodiscard]] double weight(int feature) const;
    [[nodiscard]] double operator()(const RecourseAction& action) const;
};

enum class RecourseStatus { Found, NotFound };

struct RecourseResult {
    RecourseStatus status = RecourseStatus::NotFound;
    RecourseAction action;
    double cost = std::numeric_limits<double>::infinity();
    /// Closed form: the margin constraint is active (robustness holds with equality).
    bool tight = false;
    int iterations = 0;
    std::string message;

    [[nodiscard]] bool found() const { return status == RecourseStatus::Found; }
};

enum class LambdaSchedule {
    /// lambda weights the constraint loss and grows by gamma each round.
    IncreasingConstraintWeight,
    /// lambda weights the cost and shrinks by gamma each round.
    DecreasingCostWeight,
};

struct SolverParams {
    double lambda0 = 1.0;
    double gamma = 1.0 / 0.9;
    int n_max = 100;
    int max_theta_steps = 50;
    double alpha = 0.05;
    double tolerance = 1e-5;
    int inner_steps = 20;
    /// Inner ascent step as a fraction of epsilon.
    double inner_step_fraction = 0.2;
    LambdaSchedule schedule = LambdaSchedule::IncreasingConstraintWeight;
    /// Bisection steps between the last failing and the first robust iterate.
    int exit_bisection_steps = 30;
    /// When the run from theta = 0 never reaches a valid iterate, rerun once
    /// from the cheapest nominal boundary crossing on the rays +-e_j and +-1,
    /// scanned over [ray_scan_min, ray_scan_max].
    bool ray_restart = true;
    double ray_scan_min = 1e-2;
    double ray_scan_max = 10.0;

    void validate() const;
};

/// h(CF(x, a)) = 1.
bool is_valid_recourse(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action);

/// Exact minimum-cost robust action for a linear classifier over a linear SCM,
/// by greedy allocation on the single margin constraint.
RecourseResult robust_linear_recourse(const Classifier& clf, const Scm& scm, const Vector& x,
                                      const FeasibilitySpec& feas, const UncertaintySpec& unc,
                                      const CostFn& cost = {});

struct InnerResult {
    Vector delta;
    Vector x_star;
    /// Logit of CF(CF(x, delta), a) at the returned delta.
    double logit = 0.0;
};

struct RecourseLoss {
    /// z(CF(CF(x, delta), a)).
    double logit = 0.0;
    /// softplus(-logit): the solver's smooth validity loss.
    double loss = 0.0;
    Vector grad_theta;
    Vector grad_delta;
};

/// Validity loss of `action` on the individual perturbed by `delta`, with its
/// reverse-mode gradients.
RecourseLoss recourse_loss(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                           const Vector& delta);

/// Local worst case over the eps-ball: normalized projected gradient ascent of
/// the recourse loss over delta from 0, best iterate kept. step <= 0 means eps/5.
InnerResult inner_maximize(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                           const UncertaintySpec& unc, int steps = 20, double step = 0.0);

/// The projected-gradient min-max solver. The intervention set is the
/// actionable features of `feas`.
RecourseResult robust_recourse_pgd(const Classifier& clf, const Scm& scm, const Vector& x,
                                   const FeasibilitySpec& feas, const UncertaintySpec& unc, const CostFn& cost = {},
                                   const SolverParams& params = {});

/// Closed form for linear classifier + linear SCM, min-max solver otherwise.
RecourseResult generate_recourse(const Classifier& clf, const Scm& scm, const Vector& x,
                                 const FeasibilitySpec& feas, const UncertaintySpec& unc, const CostFn& cost = {},
                                 const SolverParams& params = {});

/// Upper bound on the relative extra cost of robustifying the valid action:
/// eps ||J^T w||_2 / <w, CF(x, a) - x>.
double cost_bound_beta(const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action,
                       const UncertaintySpec& unc);
/// IMF split form: eps (||m_A w||_2 + ||(1 - m_A) w||_2) / <m_A w, theta>.
double cost_bound_beta_masked(const Classifier& clf, const RecourseAction& action, const Vector& actionable,
                              const UncertaintySpec& unc);

}  // namespace robrec
