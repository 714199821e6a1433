#include "robrec/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace robrec;

TEST_SUITE("io") {
    TEST_CASE("classifier files round trip bit-exactly") {
        std::mt19937_64 rng(1);
        const auto dir = std::filesystem::temp_directory_path() / "robrec_test_io";
        std::filesystem::create_directories(dir);
        Classifier mlp = Classifier::random_mlp(3, {5, 4}, Activation::Relu, rng);
        mlp.set_threshold(0.37);
        mlp.set_feature_mask((Vector(3) << 1, 0, 1).finished());
        const Classifier lin = Classifier::linear((Vector(2) << 0.1, -1.0 / 3.0).finished(), 1e-17, 0.61);
        const Classifier sine = Classifier::sine(2, SineParams{1, 0.05, 7.0});
        for (const Classifier* c : std::initializer_list<const Classifier*>{&mlp, &lin, &sine}) {
            const auto path = dir / "model.json";
            io::save_classifier(path, *c);
            const Classifier back = io::load_classifier(path);
            CHECK(back.kind() == c->kind());
            CHECK(back.threshold() == c->threshold());
            CHECK(back.parameters() == c->parameters());
            CHECK(back.feature_mask().has_value() == c->feature_mask().has_value());
            CHECK(io::classifier_to_json(back) == io::classifier_to_json(*c));
        }
    }

    TEST_CASE("classifier JSON validation") {
        CHECK_THROWS_AS(io::classifier_from_json(nlohmann::json::parse(R"({"kind": "forest"})")), Error);
        CHECK_THROWS_AS(io::classifier_from_json(nlohmann::json::parse(
                            R"({"kind": "mlp", "layers": [{"rows": 2, "cols": 2, "weight": [1], "bias": [0, 0]}]})")),
                        Error);
        CHECK_THROWS_AS(io::classifier_from_json(nlohmann::json::parse(R"({"kind": "linear", "n": 3, "w": [1, 2]})")),
                        Error);
    }

    TEST_CASE("SCM JSON round trip") {
        for (const char* name : {"income-savings", "quadratic", "loan-like", "imf-4"}) {
            const Scm scm = builtin_scm(name);
            const Scm back = io::scm_from_json(io::scm_to_json(scm));
            CHECK(io::scm_to_json(back) == io::scm_to_json(scm));
            const Vector x = Vector::LinSpaced(scm.size(), -1.0, 1.0);
            CHECK(back.abduct(x) == scm.abduct(x));
        }
        CHECK_THROWS_AS(io::scm_from_json(nlohmann::json::parse(
                            R"({"parents": [[]], "mechanisms": [{"form": "nonlinear", "expr": {"op": "cube", "arg": {"var": 0}}}]})")),
                        Error);
    }

    TEST_CASE("feasibility JSON round trip") {
        FeasibilitySpec spec = FeasibilitySpec::all_free(3);
        spec.features[0].direction = Direction::IncreaseOnly;
        spec.features[0].max = 2.5;
        spec.features[1].actionable = false;
        spec.features[2].direction = Direction::DecreaseOnly;
        spec.features[2].min = -1.0;
        const FeasibilitySpec back = io::feasibility_from_json(io::feasibility_to_json(spec));
        CHECK(io::feasibility_to_json(back) == io::feasibility_to_json(spec));
        CHECK(back.features[0].min == -std::numeric_limits<double>::infinity());
        CHECK_THROWS_AS(io::feasibility_from_json(nlohmann::json::parse(R"({"features": [{"direction": "up"}]})")),
                        Error);
    }
}
