#pragma once

// Binary classifiers h~(x) = sigmoid(z(x)) with a decision threshold b, and
// their training under ERM, actionable-features ERM, ALLR and the Ross
// regularizer.

#include "robrec/autodiff.hpp"
#include "robrec/types.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace robrec {

enum class ClassifierKind { Linear, Mlp, Sine };
enum class Activation { Tanh, Relu };

struct LinearParams {
    Vector w;
    double c = 0.0;
};

struct MlpLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

/// Hidden layers use `activation`; the last layer is affine with one output.
struct MlpParams {
    std::vector<MlpLayer> layers;
    Activation activation = Activation::Tanh;
};

/// z(x) = sharpness * sin(pi * x[feature] / (2 gamma)): accepts exactly the
/// stripes where the sine is nonnegative, each 2 gamma wide.
struct SineParams {
    int feature = 0;
    double gamma = 0.1;
    double sharpness = 10.0;
};

/// Half-space form of a linear classifier: h(x) = 1 iff <w, x> >= b.
struct HalfSpace {
    Vector w;
    double b = 0.0;
};

class Classifier {
public:
    static Classifier linear(Vector w, double c, double threshold = 0.5);
    static Classifier mlp(MlpParams params, double threshold = 0.5);
    static Classifier sine(int n, SineParams params);
    /// Glorot-uniform weights, zero biases.
    static Classifier random_mlp(int n, const std::vector<int>& hidden, Activation activation, std::mt19937_64& rng);

    [[nodiscard]] ClassifierKind kind() const { return kind_; }
    [[nodiscard]] int input_dim() const { return n_; }
    [[nodiscard]] double threshold() const { return threshold_; }
    void set_threshold(double b);
    /// log(b / (1 - b)): the decision boundary in logit space.
    [[nodiscard]] double logit_threshold() const;

    /// Inputs are multiplied by the mask before scoring (actionable-features training).
    [[nodiscard]] const std::optional<Vector>& feature_mask() const { return mask_; }
    void set_feature_mask(std::optional<Vector> mask);

    [[nodiscard]] const LinearParams& linear_params() const;
    [[nodiscard]] const MlpParams& mlp_params() const;
    [[nodiscard]] const SineParams& sine_params() const;

    [[nodiscard]] double logit(const Vector& x) const;
    /// One logit per column of `x`.
    [[nodiscard]] Vector logits(const Matrix& x) const;
    [[nodiscard]] double score(const Vector& x) const;
    [[nodiscard]] bool decide(const Vector& x) const { return logit(x) >= logit_threshold(); }

    [[nodiscard]] bool differentiable_params() const { return kind_ != ClassifierKind::Sine; }
    [[nodiscard]] int num_parameters() const;
    [[nodiscard]] Vector parameters() const;
    void set_parameters(const Vector& flat);

    /// Parameter tensors in flattening order: linear {w (n x 1), c (1 x 1)};
    /// MLP {W1, b1, W2, b2, ...}.
    [[nodiscard]] std::vector<Matrix> parameter_blocks() const;
    void set_parameter_blocks(const std::vector<Matrix>& blocks);

    /// Taped logits (1 x m) of the n x m batch `x` with the given parameter
    /// nodes (same layout as parameter_blocks()).
    [[nodiscard]] ad::Var logit(std::span<const ad::Var> params, ad::Var x) const;
    /// Taped logits with the parameters entered as constants.
    [[nodiscard]] ad::Var logit(ad::Tape& tape, ad::Var x) const;

    [[nodiscard]] HalfSpace half_space() const;

private:
    Classifier() = default;

    ClassifierKind kind_ = ClassifierKind::Linear;
    int n_ = 0;
    double threshold_ = 0.5;
    std::optional<Vector> mask_;
    LinearParams linear_;
    MlpParams mlp_;
    SineParams sine_;
};

enum class Objective { Erm, Af, Allr, Ross };

struct TrainConfig {
    Objective objective = Objective::Erm;
    double mu1 = 3.0;
    double mu2 = 0.0;
    double eps_reg = 0.1;
    double mu = 0.8;
    int epochs = 100;
    int batch_size = 100;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int allr_steps = 10;
    int ross_steps = 10;
    double ross_step = 0.1;
    double stencil_step = 1e-4;

    void validate() const;
};

struct TrainReport {
    std::vector<double> loss_trace;     // mean total loss per epoch
    std::vector<double> penalty_trace;  // mean regularizer per epoch
};

/// Mean binary cross-entropy of logits `z` (1 x m) against labels `y`.
ad::Var bce_with_logits(ad::Var z, const Vector& y);

/// Trains `init` on rows of `x` with labels `y`. `actionable` is the 0/1
/// mask m_A; AF training sets it as the returned classifier's feature mask.
Classifier train(const Classifier& init, const Matrix& x, const Vector& y, const TrainConfig& config,
                 const Vector& actionable, TrainReport* report = nullptr);

struct AllrOptions {
    double mu1 = 3.0;
    double mu2 = 0.0;
    double eps_reg = 0.1;
    int steps = 10;
    double stencil_step = 1e-4;
};

/// Worst-case delta (n x m) of |z(x + d) - <d, g> - z(x)| over ||d||_2 <= eps_reg,
/// per column, by normalized projected gradient ascent from a random point
/// on the sphere; the best iterate is kept.
Matrix allr_worst_delta(const Classifier& clf, const Matrix& x, const AllrOptions& options, std::mt19937_64& rng);

/// ALLR with a fixed delta: mean over columns of
/// mu1 |z(x + d) - <d, g> - z(x)| + mu2 ||(1 - m_A) * g||_2, g the stencil gradient.
ad::Var allr_penalty_given_delta(const Classifier& clf, std::span<const ad::Var> params, const Matrix& x,
                                 const Matrix& delta, const Vector& actionable, const AllrOptions& options);

/// Full ALLR value at the columns of `x` (inner maximization included).
double allr_penalty(const Classifier& clf, const Matrix& x, const Vector& actionable, const AllrOptions& options,
                    std::uint64_t seed = 0);

struct RossOptions {
    double mu = 0.8;
    int steps = 10;
    double step = 0.1;
};

/// argmin over delta of softplus(-z(x + m_A * delta)) by gradient descent from
/// 0, best iterate kept (n x m).
Matrix ross_best_delta(const Classifier& clf, const Matrix& x, const Vector& actionable, const RossOptions& options);
ad::Var ross_penalty_given_delta(const Classifier& clf, std::span<const ad::Var> params, const Matrix& x,
                                 const Matrix& delta, const Vector& actionable, double mu);
double ross_penalty(const Classifier& clf, const Matrix& x, const Vector& actionable, const RossOptions& options);

/// Matthews correlation coefficient; 0 when the denominator vanishes.
double mcc(const std::vector<int>& predicted, const std::vector<int>& labels);

/// Threshold maximizing MCC over the midpoints of sorted unique scores, ties
/// to the larger threshold.
double select_threshold(std::span<const double> scores, std::span<const int> labels);
double select_threshold(const Classifier& clf, const Matrix& x, const Vector& y);

struct Metrics {
    double accuracy = 0.0;
    double mcc = 0.0;
};
Metrics evaluate(const Classifier& clf, const Matrix& x, const Vector& y);

}  // namespace robrec
