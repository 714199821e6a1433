#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace robrec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a caller violates an operation's preconditions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// do(X_I = x_I + theta): an additive shift `theta[k]` on feature
/// `intervened[k]`, applied as a hard intervention anchored at the
/// individual's own value of that feature.
struct RecourseAction {
    std::vector<int> intervened;
    Vector theta;

    /// Shift as a length-n vector (zero outside the intervened set).
    [[nodiscard]] Vector dense(int n) const;
    void validate(int n) const;
};

}  // namespace robrec
