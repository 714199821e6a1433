#pragma once

// Taped evaluation of z(CF(CF(x, delta), do(X_I = x'_I + theta))) for a fixed
// individual, batched over columns of delta / theta.

#include "robrec/model.hpp"
#include "robrec/scm.hpp"

#include <vector>

namespace robrec::detail {

class ActedLogit {
public:
    ActedLogit(const Classifier& clf, const Scm& scm, const Vector& x, std::vector<int> intervened);

    /// delta: n x m, theta: |I| x m. Returns 1 x m logits.
    [[nodiscard]] ad::Var operator()(ad::Tape& tape, ad::Var delta, ad::Var theta) const;
    /// Acted features (n x m) before scoring.
    [[nodiscard]] ad::Var features(ad::Tape& tape, ad::Var delta, ad::Var theta) const;

    [[nodiscard]] const std::vector<int>& intervened() const { return intervened_; }
    [[nodiscard]] int size() const { return static_cast<int>(x_.size()); }

private:
    const Classifier& clf_;
    const Scm& scm_;
    Vector x_;
    std::vector<int> intervened_;
    // For linear SCMs the map is affine: x + K theta + J delta.
    bool affine_ = false;
    Matrix effect_;
    Matrix jacobian_;
};

}  // namespace robrec::detail
