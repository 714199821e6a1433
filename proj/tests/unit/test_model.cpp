#include "gradcheck.hpp"
#include "oracles.hpp"

#include "robrec/model.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace robrec;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out(i++) = d;
    return out;
}

// Two Gaussian blobs at +-2 along the first axis.
void blobs(int n, std::mt19937_64& rng, Matrix& x, Vector& y) {
    std::normal_distribution<double> normal(0.0, 0.3);
    x.resize(n, 2);
    y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double label = i % 2;
        x(i, 0) = (label == 1.0 ? 2.0 : -2.0) + normal(rng);
        x(i, 1) = normal(rng);
        y(i) = label;
    }
}

}  // namespace

using gradcheck::random_matrix;
using gradcheck::small_mlp;

TEST_SUITE("model") {
    TEST_CASE("linear classifier semantics") {
        const Classifier clf = Classifier::linear(vec({1, -2}), 0.5, 0.7);
        const Vector x = vec({0.3, 0.1});
        CHECK(clf.logit(x) == doctest::Approx(0.3 - 0.2 + 0.5));
        CHECK(clf.score(x) == doctest::Approx(oracle::sigmoid(0.6)));
        const HalfSpace hs = clf.half_space();
        CHECK(hs.b == doctest::Approx(std::log(0.7 / 0.3) - 0.5));
        CHECK(clf.decide(x) == (hs.w.dot(x) >= hs.b));
        CHECK_THROWS_AS(Classifier::linear(vec({1}), 0.0, 1.0), Error);
    }

    TEST_CASE("sine classifier stripes are 2 gamma wide") {
        const Classifier clf = Classifier::sine(2, SineParams{1, 0.1, 10.0});
        CHECK(clf.decide(vec({0, 0.05})));
        CHECK_FALSE(clf.decide(vec({0, -0.05})));
        CHECK(clf.decide(vec({0, 0.45})));
        CHECK_FALSE(clf.decide(vec({0, 0.25})));
    }

    TEST_CASE("flat parameters roundtrip") {
        const Classifier clf = small_mlp(3, 1);
        Classifier copy = clf;
        copy.set_parameters(clf.parameters());
        CHECK(copy.parameters() == clf.parameters());
        CHECK(clf.num_parameters() == 6 * 3 + 6 + 6 * 6 + 6 + 6 + 1);
    }

    TEST_CASE("taped logits match the direct path") {
        std::mt19937_64 rng(2);
        Classifier clf = small_mlp(3, 2);
        clf.set_feature_mask(vec({1, 0, 1}));
        const Matrix x = random_matrix(3, 5, rng);
        ad::Tape tape;
        const Matrix taped = clf.logit(tape, tape.constant(x)).value();
        CHECK((taped.transpose() - clf.logits(x)).cwiseAbs().maxCoeff() <= 1e-12);
    }

    TEST_CASE("ERM separates blobs") {
        std::mt19937_64 rng(3);
        Matrix x;
        Vector y;
        blobs(400, rng, x, y);
        TrainConfig cfg;
        cfg.epochs = 50;
        for (const Classifier& init : {Classifier::linear(Vector::Zero(2), 0.0), small_mlp(2, 3)}) {
            const Classifier clf = train(init, x, y, cfg, vec({1, 1}));
            CHECK(evaluate(clf, x, y).accuracy >= 0.99);
        }
    }

    TEST_CASE("AF with only unactionable signal is near the majority rate") {
        std::mt19937_64 rng(4);
        Matrix x;
        Vector y;
        blobs(400, rng, x, y);
        TrainConfig cfg;
        cfg.epochs = 30;
        cfg.objective = Objective::Af;
        const Classifier clf = train(Classifier::linear(Vector::Zero(2), 0.0), x, y, cfg, vec({0, 1}));
        CHECK(clf.feature_mask().has_value());
        CHECK(evaluate(clf, x, y).accuracy <= 0.6);
    }

    TEST_CASE("ALLR with zero weights reproduces ERM exactly") {
        std::mt19937_64 rng(5);
        Matrix x;
        Vector y;
        blobs(200, rng, x, y);
        TrainConfig erm;
        erm.epochs = 5;
        erm.seed = 9;
        TrainConfig allr = erm;
        allr.objective = Objective::Allr;
        allr.mu1 = 0.0;
        allr.mu2 = 0.0;
        const Classifier a = train(small_mlp(2, 1), x, y, erm, vec({1, 0}));
        const Classifier b = train(small_mlp(2, 1), x, y, allr, vec({1, 0}));
        CHECK(a.parameters() == b.parameters());
    }

    TEST_CASE("training is deterministic given the seed") {
        std::mt19937_64 rng(6);
        Matrix x;
        Vector y;
        blobs(200, rng, x, y);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.objective = Objective::Allr;
        cfg.mu2 = 0.5;
        const Classifier a = train(small_mlp(2, 1), x, y, cfg, vec({1, 0}));
        const Classifier b = train(small_mlp(2, 1), x, y, cfg, vec({1, 0}));
        CHECK(a.parameters() == b.parameters());
    }

    TEST_CASE("single-class data is rejected") {
        Matrix x = Matrix::Ones(4, 2);
        x(0, 0) = 0;
        CHECK_THROWS_AS(train(Classifier::linear(Vector::Zero(2), 0.0), x, Vector::Ones(4), {}, vec({1, 1})), Error);
    }

    TEST_CASE("end-to-end losses match central differences") {
        std::mt19937_64 rng(7);
        for (Objective obj : {Objective::Erm, Objective::Allr, Objective::Ross}) {
            CHECK(gradcheck::loss_worst_error(obj, 100, rng) <= 1e-4);
        }
    }

    TEST_CASE("ALLR local-linearity term vanishes for linear classifiers") {
        std::mt19937_64 rng(8);
        const Classifier clf = Classifier::linear(vec({0.5, -1.5, 2.0}), 0.3);
        const Matrix x = random_matrix(3, 10, rng);
        CHECK(allr_penalty(clf, x, vec({1, 1, 1}), {3.0, 0.0, 0.2, 10, 1e-4}) <= 1e-6);
    }

    TEST_CASE("ALLR gradient term vanishes when only actionable features matter") {
        std::mt19937_64 rng(9);
        MlpParams p;
        p.layers.push_back({random_matrix(4, 2, rng), Vector::Zero(4)});
        p.layers.push_back({random_matrix(1, 4, rng), Vector::Zero(1)});
        p.layers[0].weight.col(1).setZero();
        const Classifier clf = Classifier::mlp(p);
        const Matrix x = random_matrix(2, 5, rng);
        CHECK(allr_penalty(clf, x, vec({1, 0}), {0.0, 1.0, 0.2, 10, 1e-4}) <= 1e-9);
    }

    TEST_CASE("ALLR inner maximization reaches a local maximum of the residual") {
        std::mt19937_64 rng(10);
        for (int t = 0; t < 10; ++t) {
            const Classifier clf = small_mlp(2, 200 + static_cast<std::uint64_t>(t));
            const Vector x = random_matrix(2, 1, rng);
            const double eps = 0.1;
            const AllrOptions opts{1.0, 0.0, eps, 10, 1e-4};
            const Vector g = ad::input_gradient(
                [&](ad::Var v) {
                    ad::Tape& tp = v.tape();
                    return clf.logit(tp, v);
                },
                x);
            const double z0 = clf.logit(x);
            const auto residual = [&](const Vector& d) { return std::abs(clf.logit(Vector(x + d)) - d.dot(g) - z0); };
            std::mt19937_64 start(static_cast<std::uint64_t>(t));
            const Vector found = allr_worst_delta(clf, x, opts, start).col(0);
            CHECK(found.norm() <= eps + 1e-12);
            const double pga = allr_penalty(clf, x, vec({1, 1}), opts, static_cast<std::uint64_t>(t));
            CHECK(pga == doctest::Approx(residual(found)).epsilon(1e-6));
            // Dense search over the part of the ball near the returned point.
            double local_max = 0.0;
            for (int i = 0; i < 60; ++i) {
                for (int j = 0; j < 60; ++j) {
                    const Vector d = found + vec({-0.2 * eps + 0.4 * eps * i / 59.0, -0.2 * eps + 0.4 * eps * j / 59.0});
                    if (d.norm() > eps) continue;
                    local_max = std::max(local_max, residual(d));
                }
            }
            CHECK(pga >= 0.95 * local_max);
        }
    }

    TEST_CASE("Ross penalty properties") {
        const Classifier clf = Classifier::linear(vec({1, 1}), 0.0);
        const Vector x = vec({2.3, 2.3});  // h~ ~ 0.99
        const double at_zero = std::log1p(std::exp(-clf.logit(x)));
        CHECK(ross_penalty(clf, x, vec({1, 1}), {1.0, 10, 0.1}) <= at_zero + 1e-15);
        CHECK(ross_penalty(clf, x, vec({0, 0}), {0.8, 10, 0.1}) == doctest::Approx(0.8 * at_zero).epsilon(1e-14));
        CHECK(ross_penalty(clf, x, vec({1, 1}), {0.0, 10, 0.1}) == 0.0);
        CHECK(ross_penalty(clf, vec({-1, 0}), vec({1, 0}), {0.8, 10, 0.1}) >= 0.0);
    }

    TEST_CASE("MCC threshold selection") {
        const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
        const std::vector<int> labels{0, 0, 1, 1};
        CHECK(select_threshold(scores, labels) == doctest::Approx(0.5));
        const std::vector<double> same{0.3, 0.7, 0.3, 0.7};
        const std::vector<int> mixed{0, 0, 1, 1};
        CHECK(select_threshold(same, mixed) == doctest::Approx(0.5));
        CHECK_THROWS_AS(select_threshold(scores, std::vector<int>{1, 1, 1, 1}), Error);
    }

    TEST_CASE("MCC threshold matches an exhaustive scan") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        for (int t = 0; t < 20; ++t) {
            std::vector<double> scores(60);
            std::vector<int> labels(60);
            for (std::size_t i = 0; i < 60; ++i) {
                labels[i] = i % 2;
                scores[i] = std::clamp(uni(rng) * 0.6 + 0.3 * labels[i], 0.001, 0.999);
            }
            const auto mcc_at = [&](double b) {
                double tp = 0, tn = 0, fp = 0, fn = 0;
                for (std::size_t i = 0; i < 60; ++i) {
                    const bool p = scores[i] >= b;
                    if (p && labels[i]) tp++;
                    else if (p) fp++;
                    else if (labels[i]) fn++;
                    else tn++;
                }
                return oracle::mcc(tp, tn, fp, fn);
            };
            double scan_best = -2.0;
            for (int k = 1; k < 10000; ++k) scan_best = std::max(scan_best, mcc_at(k / 10000.0));
            const double b = select_threshold(scores, labels);
            CHECK(b > 0.0);
            CHECK(b < 1.0);
            CHECK(mcc_at(b) >= scan_best - 1e-12);
            CHECK(mcc_at(b) <= 1.0);
        }
    }
}
