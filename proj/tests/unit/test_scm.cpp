#include "oracles.hpp"

#include "robrec/io.hpp"
#include "robrec/scm.hpp"

#include <doctest.h>

#include <random>

using namespace robrec;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out(i++) = d;
    return out;
}

Vector random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

RecourseAction random_action(int n, std::mt19937_64& rng) {
    std::bernoulli_distribution pick(0.5);
    std::normal_distribution<double> normal(0.0, 1.0);
    RecourseAction a;
    for (int i = 0; i < n; ++i) {
        if (pick(rng)) a.intervened.push_back(i);
    }
    a.theta.resize(static_cast<Eigen::Index>(a.intervened.size()));
    for (Eigen::Index k = 0; k < a.theta.size(); ++k) a.theta(k) = normal(rng);
    return a;
}

const char* kBuiltins[] = {"income-savings", "quadratic", "loan-like", "imf-3"};

}  // namespace

TEST_SUITE("scm") {
    TEST_CASE("abduction on the income-savings SCM") {
        const Scm scm = builtin_scm("income-savings");
        const Vector u = scm.abduct(vec({1, 2}));
        CHECK(u(0) == 1.0);
        CHECK(u(1) == 1.0);
        const Vector imf = builtin_scm("imf-2").abduct(vec({3, -1}));
        CHECK(imf == vec({3, -1}));
    }

    TEST_CASE("hard interventions sever and propagate") {
        const Scm scm = builtin_scm("income-savings");
        const Vector x = vec({1, 2});
        CHECK(scm.counterfactual_hard(x, {{0}, vec({1})}) == vec({2, 3}));
        CHECK(scm.counterfactual_hard(x, {{1}, vec({1})}) == vec({1, 3}));
        CHECK(scm.counterfactual_hard(x, {{0, 1}, vec({0, 0})}) == x);
        CHECK_THROWS_AS((void)scm.counterfactual_hard(x, {{}, vec({1})}), Error);
    }

    TEST_CASE("additive interventions keep causal links") {
        const Vector x = vec({1, 2});
        const Vector lin = builtin_scm("income-savings").counterfactual_additive(x, vec({0.1, 0}));
        CHECK(lin(0) == doctest::Approx(1.1).epsilon(1e-12));
        CHECK(lin(1) == doctest::Approx(2.1).epsilon(1e-12));
        const Vector quad = builtin_scm("quadratic").counterfactual_additive(x, vec({0.1, 0}));
        CHECK(quad(0) == doctest::Approx(1.1).epsilon(1e-12));
        CHECK(quad(1) == doctest::Approx(2.21).epsilon(1e-12));
        CHECK(builtin_scm("quadratic").counterfactual_additive(x, Vector::Zero(2)) == x);
    }

    TEST_CASE("action applied to a perturbed individual") {
        const Scm scm = builtin_scm("income-savings");
        const Vector out = scm.apply_action_to_perturbed(vec({1, 2}), vec({0.1, 0}), {{0}, vec({1})});
        CHECK(out(0) == doctest::Approx(2.1).epsilon(1e-12));
        CHECK(out(1) == doctest::Approx(3.1).epsilon(1e-12));
        const RecourseAction a{{0}, vec({0.7})};
        CHECK(scm.apply_action_to_perturbed(vec({1, 2}), Vector::Zero(2), a) == scm.counterfactual_hard(vec({1, 2}), a));
    }

    TEST_CASE("interventional Jacobians by hand") {
        const Scm scm = builtin_scm("income-savings");
        const Matrix expected = (Matrix(2, 2) << 1, 0, 1, 1).finished();
        const std::vector<int> i1{0}, i2{1};
        CHECK(scm.interventional_jacobian(vec({1, 2}), i1) == expected);
        CHECK(scm.interventional_jacobian(vec({1, 2}), i2) == expected);
        const std::vector<int> all{0, 1, 2};
        CHECK(builtin_scm("imf-3").interventional_jacobian(vec({1, 2, 3}), all) == Matrix::Identity(3, 3));
    }

    TEST_CASE("builtins") {
        const Scm is = builtin_scm("income-savings");
        CHECK(is.size() == 2);
        CHECK(is.parents()[1] == std::vector<int>{0});
        CHECK(is.is_linear());
        const Scm quad = builtin_scm("quadratic");
        CHECK_FALSE(quad.is_linear());
        CHECK(quad.mechanisms()[1].expr->kind() == Expr::Kind::Square);
        const Scm imf = builtin_scm("imf-3");
        CHECK(imf.size() == 3);
        CHECK(imf.is_imf());
        const Scm loan = builtin_scm("loan-like");
        CHECK(loan.size() == 7);
        CHECK_FALSE(loan.is_linear());
        CHECK_THROWS_AS(builtin_scm("nope"), Error);
        CHECK_THROWS_AS(builtin_scm("imf-x"), Error);
    }

    TEST_CASE("construction validation") {
        Mechanism root;
        Mechanism child{MechanismForm::Linear, {1.0}, 0.0, std::nullopt};
        CHECK_THROWS_AS(Scm({}, {{1}, {0}}, {child, child}), Error);  // cycle
        CHECK_THROWS_AS(Scm({}, {{}, {5}}, {root, child}), Error);    // out of range
        CHECK_THROWS_AS(Scm({}, {{}, {1}}, {root, child}), Error);    // self loop
        Mechanism reads_nonparent{MechanismForm::Nonlinear, {}, 0.0, Expr::feature(2)};
        CHECK_THROWS_AS(Scm({}, {{}, {0}, {}}, {root, reads_nonparent, root}), Error);
        CHECK_THROWS_AS(Scm({}, {{}, {0}}, {root, Mechanism{MechanismForm::Linear, {}, 0.0, std::nullopt}}), Error);
    }

    TEST_CASE("roundtrip and null interventions on every builtin") {
        std::mt19937_64 rng(1);
        for (const char* name : kBuiltins) {
            const Scm scm = builtin_scm(name);
            double worst = 0.0;
            for (int t = 0; t < 1000; ++t) {
                const Vector u = random_vector(scm.size(), rng);
                const Vector x = scm.reconstruct(u);
                worst = std::max(worst, (scm.abduct(x) - u).cwiseAbs().maxCoeff());
                worst = std::max(worst, (scm.reconstruct(scm.abduct(x)) - x).cwiseAbs().maxCoeff());
                RecourseAction a = random_action(scm.size(), rng);
                a.theta.setZero();
                CHECK(scm.counterfactual_hard(x, a) == x);
                CHECK(scm.counterfactual_additive(x, Vector::Zero(scm.size())) == x);
            }
            INFO(name);
            CHECK(worst <= 1e-8);
        }
    }

    TEST_CASE("additive counterfactual equals S(S^-1(x) + delta)") {
        std::mt19937_64 rng(2);
        for (const char* name : kBuiltins) {
            const Scm scm = builtin_scm(name);
            for (int t = 0; t < 100; ++t) {
                const Vector x = scm.reconstruct(random_vector(scm.size(), rng));
                const Vector d = random_vector(scm.size(), rng, 0.3);
                const Vector direct = scm.reconstruct(scm.abduct(x) + d);
                CHECK((scm.counterfactual_additive(x, d) - direct).cwiseAbs().maxCoeff() <= 1e-10);
            }
        }
    }

    TEST_CASE("linear composition law") {
        std::mt19937_64 rng(3);
        for (const char* name : {"income-savings", "imf-3"}) {
            const Scm scm = builtin_scm(name);
            double worst = 0.0;
            for (int t = 0; t < 1000; ++t) {
                const Vector x = random_vector(scm.size(), rng);
                const Vector d = random_vector(scm.size(), rng);
                const RecourseAction a = random_action(scm.size(), rng);
                const Vector lhs = scm.apply_action_to_perturbed(x, d, a) - scm.counterfactual_hard(x, a);
                worst = std::max(worst, (lhs - scm.interventional_jacobian(x, a) * d).cwiseAbs().maxCoeff());
            }
            CHECK(worst <= 1e-8);
        }
    }

    TEST_CASE("severing: intervened coordinates ignore perturbed ancestors") {
        const Scm scm = builtin_scm("loan-like");
        std::mt19937_64 rng(4);
        for (int t = 0; t < 100; ++t) {
            const Vector x = scm.reconstruct(random_vector(7, rng));
            // income (5) intervened; its ancestors are gender, age, education.
            const RecourseAction a{{5}, vec({0.4})};
            Vector x2 = x;
            x2(0) += 0.5;
            x2(1) -= 0.3;
            x2(5) = x(5);
            CHECK(scm.counterfactual_hard(x, a)(5) == scm.counterfactual_hard(x2, a)(5));
        }
    }

    TEST_CASE("interventional Jacobian matches central differences on every builtin") {
        std::mt19937_64 rng(5);
        for (const char* name : kBuiltins) {
            const Scm scm = builtin_scm(name);
            for (int t = 0; t < 20; ++t) {
                const Vector x = scm.reconstruct(random_vector(scm.size(), rng));
                const RecourseAction a = random_action(scm.size(), rng);
                const Matrix fd = oracle::jacobian_fd(
                    [&](const Vector& d) { return scm.apply_action_to_perturbed(x, d, a); }, Vector::Zero(scm.size()));
                INFO(name);
                CHECK((scm.interventional_jacobian(x, a) - fd).cwiseAbs().maxCoeff() <= 1e-6);
            }
        }
    }

    TEST_CASE("action effect matrix matches central differences") {
        std::mt19937_64 rng(6);
        for (const char* name : kBuiltins) {
            const Scm scm = builtin_scm(name);
            for (int t = 0; t < 20; ++t) {
                const Vector x = scm.reconstruct(random_vector(scm.size(), rng));
                RecourseAction a = random_action(scm.size(), rng);
                if (a.intervened.empty()) continue;
                const Matrix fd = oracle::jacobian_fd(
                    [&](const Vector& th) { return scm.counterfactual_hard(x, {a.intervened, th}); }, a.theta);
                CHECK((scm.action_effect_matrix(x, a) - fd).cwiseAbs().maxCoeff() <= 1e-6);
            }
        }
    }

    TEST_CASE("taped counterfactual agrees with the scalar path") {
        std::mt19937_64 rng(7);
        for (const char* name : kBuiltins) {
            const Scm scm = builtin_scm(name);
            const int n = scm.size();
            Matrix xs(n, 3), ds(n, 3);
            for (int c = 0; c < 3; ++c) {
                xs.col(c) = scm.reconstruct(random_vector(n, rng));
                ds.col(c) = random_vector(n, rng, 0.2);
            }
            const RecourseAction a = random_action(n, rng);
            Matrix thetas = a.theta.replicate(1, 3);
            ad::Tape tape;
            const ad::Var out = scm.counterfactual(tape, xs, tape.constant(ds), a.intervened, tape.constant(thetas));
            for (int c = 0; c < 3; ++c) {
                const Vector ref = scm.apply_action_to_perturbed(xs.col(c), ds.col(c), a);
                CHECK((out.value().col(c) - ref).cwiseAbs().maxCoeff() <= 1e-12);
            }
        }
    }

    TEST_CASE("loan-like ships as the JSON config") {
        const Scm from_text = io::scm_from_json(nlohmann::json::parse(loan_like_scm_json()));
        CHECK(io::scm_to_json(from_text) == io::scm_to_json(builtin_scm("loan-like")));
        CHECK(from_text.feature_names().front() == "gender");
    }
}
