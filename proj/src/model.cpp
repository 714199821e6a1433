#include "robrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace robrec {

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Matrix mask_columns(const Matrix& x, const std::optional<Vector>& mask) {
    if (!mask) return x;
    return mask->asDiagonal() * x;
}

ad::Var activate(ad::Var v, Activation a) { return a == Activation::Tanh ? ad::tanh(v) : ad::relu(v); }

Matrix col_normalized(const Matrix& g) {
    Matrix out = g;
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        const double nrm = g.col(j).norm();
        if (nrm > 0.0) out.col(j) /= nrm;
    }
    return out;
}

void project_columns_to_ball(Matrix& d, double radius) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
        const double nrm = d.col(j).norm();
        if (nrm > radius) d.col(j) *= radius / nrm;
    }
}

std::vector<ad::Var> constant_params(const Classifier& clf, ad::Tape& tape) {
    std::vector<ad::Var> out;
    for (Matrix& m : clf.parameter_blocks()) out.push_back(tape.constant(std::move(m)));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Classifier

Classifier Classifier::linear(Vector w, double c, double threshold) {
    if (w.size() == 0) throw Error("classifier: linear weights must be nonempty");
    if (!w.allFinite() || !std::isfinite(c)) throw Error("classifier: non-finite linear parameters");
    Classifier out;
    out.kind_ = ClassifierKind::Linear;
    out.n_ = static_cast<int>(w.size());
    out.linear_ = LinearParams{std::move(w), c};
    out.set_threshold(threshold);
    return out;
}

Classifier Classifier::mlp(MlpParams params, double threshold) {
    if (params.layers.empty()) throw Error("classifier: MLP needs at least one layer");
    int in = static_cast<int>(params.layers.front().weight.cols());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const MlpLayer& layer = params.layers[l];
        if (layer.weight.cols() != in || layer.bias.size() != layer.weight.rows()) {
            throw Error("classifier: MLP layer " + std::to_string(l) + " has inconsistent shape");
        }
        in = static_cast<int>(layer.weight.rows());
    }
    if (in != 1) throw Error("classifier: MLP output layer must have one unit");
    Classifier out;
    out.kind_ = ClassifierKind::Mlp;
    out.n_ = static_cast<int>(params.layers.front().weight.cols());
    out.mlp_ = std::move(params);
    out.set_threshold(threshold);
    return out;
}

Classifier Classifier::sine(int n, SineParams params) {
    if (params.feature < 0 || params.feature >= n) throw Error("classifier: sine feature out of range");
    if (!(params.gamma > 0.0)) throw Error("classifier: sine gamma must be positive");
    Classifier out;
    out.kind_ = ClassifierKind::Sine;
    out.n_ = n;
    out.sine_ = params;
    out.threshold_ = 0.5;
    return out;
}

Classifier Classifier::random_mlp(int n, const std::vector<int>& hidden, Activation activation, std::mt19937_64& rng) {
    MlpParams params;
    params.activation = activation;
    int in = n;
    std::vector<int> widths = hidden;
    widths.push_back(1);
    for (int out : widths) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        MlpLayer layer{Matrix(out, in), Vector::Zero(out)};
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = dist(rng);
        }
        params.layers.push_back(std::move(layer));
        in = out;
    }
    return mlp(std::move(params));
}

void Classifier::set_threshold(double b) {
    if (!(b > 0.0 && b < 1.0)) throw Error("classifier: threshold must lie in (0, 1)");
    threshold_ = b;
}

double Classifier::logit_threshold() const { return std::log(threshold_ / (1.0 - threshold_)); }

void Classifier::set_feature_mask(std::optional<Vector> mask) {
    if (mask) {
        if (mask->size() != n_) throw Error("classifier: feature mask has wrong length");
        for (double v : *mask) {
            if (v != 0.0 && v != 1.0) throw Error("classifier: feature mask entries must be 0 or 1");
        }
    }
    mask_ = std::move(mask);
}

const LinearParams& Classifier::linear_params() const {
    if (kind_ != ClassifierKind::Linear) throw Error("classifier: not linear");
    return linear_;
}

const MlpParams& Classifier::mlp_params() const {
    if (kind_ != ClassifierKind::Mlp) throw Error("classifier: not an MLP");
    return mlp_;
}

const SineParams& Classifier::sine_params() const {
    if (kind_ != ClassifierKind::Sine) throw Error("classifier: not a sine classifier");
    return sine_;
}

Vector Classifier::logits(const Matrix& x) const {
    if (x.rows() != n_) {
        throw Error("classifier: input has " + std::to_string(x.rows()) + " features, expected " + std::to_string(n_));
    }
    const Matrix in = mask_columns(x, mask_);
    switch (kind_) {
        case ClassifierKind::Linear:
            return (in.transpose() * linear_.w).array() + linear_.c;
        case ClassifierKind::Mlp: {
            Matrix h = in;
            for (std::size_t l = 0; l < mlp_.layers.size(); ++l) {
                const MlpLayer& layer = mlp_.layers[l];
                h = (layer.weight * h).colwise() + layer.bias;
                if (l + 1 < mlp_.layers.size()) {
                    h = mlp_.activation == Activation::Tanh ? Matrix(h.array().tanh()) : Matrix(h.array().max(0.0));
                }
            }
            return h.row(0).transpose();
        }
        case ClassifierKind::Sine: {
            const double k = std::numbers::pi / (2.0 * sine_.gamma);
            return sine_.sharpness * (in.row(sine_.feature).array() * k).sin().transpose();
        }
    }
    throw Error("classifier: unknown kind");
}

double Classifier::logit(const Vector& x) const { return logits(x)(0); }

double Classifier::score(const Vector& x) const { return stable_sigmoid(logit(x)); }

std::vector<Matrix> Classifier::parameter_blocks() const {
    std::vector<Matrix> out;
    switch (kind_) {
        case ClassifierKind::Linear:
            out.emplace_back(linear_.w);
            out.emplace_back(Matrix::Constant(1, 1, linear_.c));
            break;
        case ClassifierKind::Mlp:
            for (const MlpLayer& layer : mlp_.layers) {
                out.emplace_back(layer.weight);
                out.emplace_back(layer.bias);
            }
            break;
        case ClassifierKind::Sine:
            break;
    }
    return out;
}

void Classifier::set_parameter_blocks(const std::vector<Matrix>& blocks) {
    const std::vector<Matrix> current = parameter_blocks();
    if (blocks.size() != current.size()) throw Error("classifier: wrong number of parameter blocks");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].rows() != current[i].rows() || blocks[i].cols() != current[i].cols()) {
            throw Error("classifier: parameter block " + std::to_string(i) + " has wrong shape");
        }
    }
    if (kind_ == ClassifierKind::Linear) {
        linear_.w = blocks[0];
        linear_.c = blocks[1](0, 0);
    } else if (kind_ == ClassifierKind::Mlp) {
        for (std::size_t l = 0; l < mlp_.layers.size(); ++l) {
            mlp_.layers[l].weight = blocks[2 * l];
            mlp_.layers[l].bias = blocks[2 * l + 1];
        }
    }
}

int Classifier::num_parameters() const {
    int total = 0;
    for (const Matrix& m : parameter_blocks()) total += static_cast<int>(m.size());
    return total;
}

Vector Classifier::parameters() const {
    Vector flat(num_parameters());
    Eigen::Index k = 0;
    for (const Matrix& m : parameter_blocks()) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) flat(k++) = m(i, j);
        }
    }
    return flat;
}

void Classifier::set_parameters(const Vector& flat) {
    if (flat.size() != num_parameters()) throw Error("classifier: wrong number of parameters");
    std::vector<Matrix> blocks = parameter_blocks();
    Eigen::Index k = 0;
    for (Matrix& m : blocks) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat(k++);
        }
    }
    set_parameter_blocks(blocks);
}

ad::Var Classifier::logit(std::span<const ad::Var> params, ad::Var x) const {
    if (x.rows() != n_) throw Error("classifier: taped input has wrong feature count");
    ad::Tape& tape = x.tape();
    const auto m = static_cast<int>(x.cols());
    ad::Var in = x;
    if (mask_) in = in * tape.constant(mask_->replicate(1, m));
    switch (kind_) {
        case ClassifierKind::Linear:
            return ad::add_col_broadcast(ad::sum_rows(in * ad::tile_cols(params[0], m)), params[1]);
        case ClassifierKind::Mlp: {
            ad::Var h = in;
            const std::size_t layers = mlp_.layers.size();
            for (std::size_t l = 0; l < layers; ++l) {
                h = ad::add_col_broadcast(ad::matmul(params[2 * l], h), params[2 * l + 1]);
                if (l + 1 < layers) h = activate(h, mlp_.activation);
            }
            return h;
        }
        case ClassifierKind::Sine: {
            const double k = std::numbers::pi / (2.0 * sine_.gamma);
            return ad::sin(ad::row(in, sine_.feature) * k) * sine_.sharpness;
        }
    }
    throw Error("classifier: unknown kind");
}

ad::Var Classifier::logit(ad::Tape& tape, ad::Var x) const {
    const std::vector<ad::Var> params = constant_params(*this, tape);
    return logit(params, x);
}

HalfSpace Classifier::half_space() const {
    if (kind_ != ClassifierKind::Linear) throw Error("classifier: half-space form needs a linear classifier");
    Vector w = linear_.w;
    if (mask_) w = w.cwiseProduct(*mask_);
    return HalfSpace{w, logit_threshold() - linear_.c};
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (epochs < 1) throw Error("train: epochs must be >= 1");
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (mu1 < 0.0 || mu2 < 0.0 || mu < 0.0) throw Error("train: regularization weights must be nonnegative");
    if (objective == Objective::Allr && !(eps_reg > 0.0)) throw Error("train: eps_reg must be positive");
    if (!(learning_rate > 0.0)) throw Error("train: learning_rate must be positive");
}

ad::Var bce_with_logits(ad::Var z, const Vector& y) {
    const auto m = static_cast<double>(y.size());
    const ad::Var labels = z.tape().constant(Matrix(y.transpose()));
    return ad::sum(ad::softplus(z) - labels * z) * (1.0 / m);
}

Classifier train(const Classifier& init, const Matrix& x, const Vector& y, const TrainConfig& config,
                 const Vector& actionable, TrainReport* report) {
    config.validate();
    if (!init.differentiable_params()) throw Error("train: classifier has no trainable parameters");
    if (x.rows() != y.size()) throw Error("train: feature and label counts differ");
    if (x.cols() != init.input_dim()) throw Error("train: feature count does not match the classifier");
    if (actionable.size() != x.cols()) throw Error("train: actionable mask has wrong length");
    const Eigen::Index positives = (y.array() == 1.0).count();
    const Eigen::Index negatives = (y.array() == 0.0).count();
    if (positives + negatives != y.size()) throw Error("train: labels must be 0 or 1");
    if (positives == 0 || negatives == 0) throw Error("train: dataset contains a single class");

    Classifier clf = init;
    if (config.objective == Objective::Af) clf.set_feature_mask(actionable);

    std::mt19937_64 shuffle_rng(config.seed);
    std::mt19937_64 penalty_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<Matrix> blocks = clf.parameter_blocks();
    std::vector<Matrix> m1, m2;
    for (const Matrix& b : blocks) {
        m1.push_back(Matrix::Zero(b.rows(), b.cols()));
        m2.push_back(Matrix::Zero(b.rows(), b.cols()));
    }
    const AllrOptions allr{config.mu1, config.mu2, config.eps_reg, config.allr_steps, config.stencil_step};
    const RossOptions ross{config.mu, config.ross_steps, config.ross_step};
    const bool use_allr = config.objective == Objective::Allr && (config.mu1 > 0.0 || config.mu2 > 0.0);
    const bool use_ross = config.objective == Objective::Ross && config.mu > 0.0;

    const auto rows = static_cast<int>(x.rows());
    std::vector<int> order(static_cast<std::size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    long long step = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        double penalty_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < rows; start += config.batch_size) {
            const int stop = std::min(rows, start + config.batch_size);
            const int m = stop - start;
            Matrix xb(x.cols(), m);
            Vector yb(m);
            for (int k = 0; k < m; ++k) {
                const int r = order[static_cast<std::size_t>(start + k)];
                xb.col(k) = x.row(r).transpose();
                yb(k) = y(r);
            }

            ad::Tape tape;
            std::vector<ad::Var> params;
            for (const Matrix& b : blocks) params.push_back(tape.leaf(b));
            const ad::Var xv = tape.constant(xb);
            ad::Var loss = bce_with_logits(clf.logit(params, xv), yb);
            double penalty = 0.0;
            if (use_allr) {
                const Matrix delta = allr_worst_delta(clf, xb, allr, penalty_rng);
                const ad::Var p = allr_penalty_given_delta(clf, params, xb, delta, actionable, allr);
                penalty = p.scalar();
                loss = loss + p;
            } else if (use_ross) {
                const Matrix delta = ross_best_delta(clf, xb, actionable, ross);
                const ad::Var p = ross_penalty_given_delta(clf, params, xb, delta, actionable, config.mu);
                penalty = p.scalar();
                loss = loss + p;
            }
            if (!std::isfinite(loss.scalar())) {
                throw ad::NonFiniteError("train: non-finite loss at epoch " + std::to_string(epoch));
            }
            const std::vector<Matrix> grads = tape.gradient(loss, params);

            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < blocks.size(); ++i) {
                m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * grads[i];
                m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * grads[i].cwiseAbs2();
                const Matrix mhat = m1[i] / bc1;
                const Matrix vhat = m2[i] / bc2;
                blocks[i].array() -= config.learning_rate * mhat.array() / (vhat.array().sqrt() + config.adam_eps);
            }
            clf.set_parameter_blocks(blocks);
            loss_sum += loss.scalar();
            penalty_sum += penalty;
            ++batches;
        }
        if (report) {
            report->loss_trace.push_back(loss_sum / batches);
            report->penalty_trace.push_back(penalty_sum / batches);
        }
    }
    return clf;
}

// ---------------------------------------------------------------------------
// Regularizers

Matrix allr_worst_delta(const Classifier& clf, const Matrix& x, const AllrOptions& options, std::mt19937_64& rng) {
    const Eigen::Index n = x.rows();
    const Eigen::Index m = x.cols();
    const double eps = options.eps_reg;

    Matrix g;
    Vector z0;
    {
        ad::Tape tape;
        const ad::Var xv = tape.constant(x);
        const ad::ScoreFn score = [&](ad::Var v) { return clf.logit(tape, v); };
        g = ad::input_gradient_stencil(score, xv, {options.stencil_step, 64}).value();
        z0 = clf.logits(x);
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix delta(n, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) delta(i, j) = normal(rng);
        const double nrm = delta.col(j).norm();
        delta.col(j) *= nrm > 0.0 ? eps / nrm : 0.0;
    }

    // Each column restarts from its best point with half the step whenever an
    // ascent step fails to improve.
    Matrix best = delta;
    Matrix best_grad = Matrix::Zero(n, m);
    Vector best_value = Vector::Constant(m, -1.0);
    Vector step = Vector::Constant(m, eps / 4.0);
    for (int t = 0; t <= options.steps; ++t) {
        ad::Tape tape;
        const ad::Var d = tape.leaf(delta);
        const ad::Var z = clf.logit(tape, tape.constant(x) + d);
        const ad::Var lin = ad::sum_rows(d * tape.constant(g));
        const ad::Var r = ad::abs(z - lin - tape.constant(Matrix(z0.transpose())));
        const Matrix rv = r.value();
        Matrix grad = tape.gradient(ad::sum(r), d);
        for (Eigen::Index j = 0; j < m; ++j) {
            // On the sphere an outward gradient is projected onto the tangent plane.
            const double nrm = delta.col(j).norm();
            if (nrm < eps * (1.0 - 1e-9)) continue;
            const Vector u = delta.col(j) / nrm;
            const double radial = grad.col(j).dot(u);
            if (radial > 0.0) grad.col(j) -= radial * u;
        }
        grad = col_normalized(grad);
        for (Eigen::Index j = 0; j < m; ++j) {
            if (rv(0, j) > best_value(j)) {
                best_value(j) = rv(0, j);
                best.col(j) = delta.col(j);
                best_grad.col(j) = grad.col(j);
            } else {
                step(j) *= 0.5;
            }
        }
        if (t == options.steps) break;
        delta = best + best_grad * step.asDiagonal();
        project_columns_to_ball(delta, eps);
    }
    return best;
}

ad::Var allr_penalty_given_delta(const Classifier& clf, std::span<const ad::Var> params, const Matrix& x,
                                 const Matrix& delta, const Vector& actionable, const AllrOptions& options) {
    ad::Tape& tape = params.front().tape();
    const auto m = static_cast<double>(x.cols());
    const ad::Var xv = tape.constant(x);
    const ad::ScoreFn score = [&](ad::Var v) { return clf.logit(params, v); };
    const ad::Var g = ad::input_gradient_stencil(score, xv, {options.stencil_step, 64});
    ad::Var total = tape.constant(0.0);
    if (options.mu1 > 0.0) {
        const ad::Var d = tape.constant(delta);
        const ad::Var r = ad::abs(clf.logit(params, xv + d) - ad::sum_rows(d * g) - clf.logit(params, xv));
        total = total + ad::sum(r) * (options.mu1 / m);
    }
    if (options.mu2 > 0.0) {
        const Vector unactionable = Vector::Ones(actionable.size()) - actionable;
        const ad::Var masked = g * tape.constant(unactionable.replicate(1, x.cols()));
        total = total + ad::sum(ad::col_norm2(masked)) * (options.mu2 / m);
    }
    return total;
}

double allr_penalty(const Classifier& clf, const Matrix& x, const Vector& actionable, const AllrOptions& options,
                    std::uint64_t seed) {
    if (!(options.eps_reg > 0.0)) throw Error("allr: eps_reg must be positive");
    std::mt19937_64 rng(seed);
    const Matrix delta = allr_worst_delta(clf, x, options, rng);
    ad::Tape tape;
    const std::vector<ad::Var> params = constant_params(clf, tape);
    if (params.empty()) throw Error("allr: classifier has no parameters");
    return allr_penalty_given_delta(clf, params, x, delta, actionable, options).scalar();
}

Matrix ross_best_delta(const Classifier& clf, const Matrix& x, const Vector& actionable, const RossOptions& options) {
    if (options.steps < 1) throw Error("ross: steps must be >= 1");
    const Eigen::Index m = x.cols();
    const Matrix mask = actionable.replicate(1, m);
    Matrix delta = Matrix::Zero(x.rows(), m);
    Matrix best = delta;
    Vector best_value = Vector::Constant(m, std::numeric_limits<double>::infinity());
    for (int t = 0; t <= options.steps; ++t) {
        ad::Tape tape;
        const ad::Var d = tape.leaf(delta);
        const ad::Var loss = ad::softplus(-clf.logit(tape, tape.constant(x) + d * tape.constant(mask)));
        const Matrix& lv = loss.value();
        for (Eigen::Index j = 0; j < m; ++j) {
            if (lv(0, j) < best_value(j)) {
                best_value(j) = lv(0, j);
                best.col(j) = delta.col(j);
            }
        }
        if (t == options.steps) break;
        delta -= options.step * tape.gradient(ad::sum(loss), d);
    }
    return best.cwiseProduct(mask);
}

ad::Var ross_penalty_given_delta(const Classifier& clf, std::span<const ad::Var> params, const Matrix& x,
                                 const Matrix& delta, const Vector& actionable, double mu) {
    ad::Tape& tape = params.front().tape();
    const Matrix moved = x + delta.cwiseProduct(actionable.replicate(1, x.cols()));
    const ad::Var loss = ad::softplus(-clf.logit(params, tape.constant(moved)));
    return ad::sum(loss) * (mu / static_cast<double>(x.cols()));
}

double ross_penalty(const Classifier& clf, const Matrix& x, const Vector& actionable, const RossOptions& options) {
    if (options.mu == 0.0) return 0.0;
    const Matrix delta = ross_best_delta(clf, x, actionable, options);
    ad::Tape tape;
    const std::vector<ad::Var> params = constant_params(clf, tape);
    if (params.empty()) throw Error("ross: classifier has no parameters");
    return ross_penalty_given_delta(clf, params, x, delta, actionable, options.mu).scalar();
}

// ---------------------------------------------------------------------------
// Threshold selection

double mcc(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.size() != labels.size()) throw Error("mcc: length mismatch");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predicted[i] == 1) {
            (labels[i] == 1 ? tp : fp) += 1.0;
        } else {
            (labels[i] == 1 ? fn : tn) += 1.0;
        }
    }
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

double select_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("select_threshold: length mismatch");
    const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (!has_pos || !has_neg) throw Error("select_threshold: validation set must contain both classes");

    std::vector<double> unique(scores.begin(), scores.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    if (unique.size() < 2) return 0.5;

    // Sweep candidates from the largest down: TP/FP counts only grow as the
    // threshold decreases, so each candidate costs O(1) after sorting.
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double total_neg = static_cast<double>(labels.size()) - total_pos;

    double best_b = 0.5;
    double best_mcc = -std::numeric_limits<double>::infinity();
    double tp = 0, fp = 0;
    std::size_t k = 0;
    for (std::size_t u = unique.size() - 1; u >= 1; --u) {
        const double b = 0.5 * (unique[u - 1] + unique[u]);
        while (k < idx.size() && scores[idx[k]] >= b) {
            (labels[idx[k]] == 1 ? tp : fp) += 1.0;
            ++k;
        }
        const double fn = total_pos - tp;
        const double tn = total_neg - fp;
        const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
        const double value = denom == 0.0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(denom);
        if (value > best_mcc && b > 0.0 && b < 1.0) {
            best_mcc = value;
            best_b = b;
        }
    }
    return best_b;
}

double select_threshold(const Classifier& clf, const Matrix& x, const Vector& y) {
    const Vector z = clf.logits(x.transpose());
    std::vector<double> scores(static_cast<std::size_t>(z.size()));
    std::vector<int> labels(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        scores[static_cast<std::size_t>(i)] = stable_sigmoid(z(i));
        labels[static_cast<std::size_t>(i)] = y(i) == 1.0 ? 1 : 0;
    }
    return select_threshold(scores, labels);
}

Metrics evaluate(const Classifier& clf, const Matrix& x, const Vector& y) {
    const Vector z = clf.logits(x.transpose());
    const double zb = clf.logit_threshold();
    std::vector<int> predicted(static_cast<std::size_t>(z.size()));
    std::vector<int> labels(static_cast<std::size_t>(z.size()));
    double correct = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        predicted[static_cast<std::size_t>(i)] = z(i) >= zb ? 1 : 0;
        labels[static_cast<std::size_t>(i)] = y(i) == 1.0 ? 1 : 0;
        if (predicted[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) correct += 1.0;
    }
    return Metrics{z.size() ? correct / static_cast<double>(z.size()) : 0.0, mcc(predicted, labels)};
}

}  // namespace robrec
