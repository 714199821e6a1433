#include "acted.hpp"

namespace robrec::detail {

ActedLogit::ActedLogit(const Classifier& clf, const Scm& scm, const Vector& x, std::vector<int> intervened)
    : clf_(clf), scm_(scm), x_(x), intervened_(std::move(intervened)) {
    if (clf.input_dim() != scm.size()) throw Error("classifier and SCM disagree on the feature count");
    if (scm.is_linear()) {
        const RecourseAction zero{intervened_, Vector::Zero(static_cast<Eigen::Index>(intervened_.size()))};
        affine_ = true;
        effect_ = scm.action_effect_matrix(x_, zero);
        jacobian_ = scm.interventional_jacobian(x_, zero);
    }
}

ad::Var ActedLogit::features(ad::Tape& tape, ad::Var delta, ad::Var theta) const {
    const auto m = static_cast<int>(delta.cols());
    if (affine_) {
        ad::Var out = tape.constant(x_.replicate(1, m)) + ad::matmul(tape.constant(jacobian_), delta);
        if (!intervened_.empty()) out = out + ad::matmul(tape.constant(effect_), theta);
        return out;
    }
    return scm_.counterfactual(tape, x_.replicate(1, m), delta, intervened_, theta);
}

ad::Var ActedLogit::operator()(ad::Tape& tape, ad::Var delta, ad::Var theta) const {
    return clf_.logit(tape, features(tape, delta, theta));
}

}  // namespace robrec::detail
