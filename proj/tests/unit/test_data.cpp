#include "robrec/data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace robrec;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
    const auto dir = std::filesystem::temp_directory_path() / "robrec_test_data";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path) << text;
    return path;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_SUITE("data") {
    TEST_CASE("RFC 4180 parsing") {
        const auto rows = parse_csv("a,b\r\n\"x, y\",\"say \"\"hi\"\"\"\n1,\n");
        REQUIRE(rows.size() == 3);
        CHECK(rows[1][0] == "x, y");
        CHECK(rows[1][1] == "say \"hi\"");
        CHECK(rows[2] == std::vector<std::string>{"1", ""});
    }

    TEST_CASE("4-row toy CSV") {
        const auto path = write_temp("toy.csv", "a,b,y\n1,10,0\n2,20,1\n3,10,0\n4,40,1\n");
        CsvOptions opts;
        opts.label_column = "y";
        opts.train_fraction = 1.0;
        const LoadedData d = load_csv(path, opts);
        CHECK(d.all.size() == 4);
        CHECK(d.all.dim() == 2);
        CHECK(d.all.labels == (Vector(4) << 0, 1, 0, 1).finished());
        CHECK(d.all.feature_names == std::vector<std::string>{"a", "b"});
        const Matrix& f = d.all.features;
        for (Eigen::Index j = 0; j < 2; ++j) {
            const double mean = f.col(j).mean();
            const double var = (f.col(j).array() - mean).square().mean();
            CHECK(std::abs(mean) <= 1e-12);
            CHECK(var == doctest::Approx(1.0));
        }
        CHECK(d.feasibility.size() == 2);
    }

    TEST_CASE("CSV errors") {
        CsvOptions opts;
        opts.label_column = "y";
        opts.train_fraction = 1.0;
        const auto constant = write_temp("constant.csv", "a,flat,y\n1,5,0\n2,5,1\n3,5,0\n");
        CHECK(error_of([&] { (void)load_csv(constant, opts); }).find("flat") != std::string::npos);
        const auto missing = write_temp("missing.csv", "a,b,y\n1,2,0\n,3,1\n4,,0\n5,6,1\n");
        const std::string msg = error_of([&] { (void)load_csv(missing, opts); });
        CHECK(msg.find("missing") != std::string::npos);
        CHECK(msg.find('2') != std::string::npos);
        CHECK(msg.find('3') != std::string::npos);
        const auto labels = write_temp("labels.csv", "a,y\n1,0\n2,2\n3,1\n");
        CHECK(error_of([&] { (void)load_csv(labels, opts); }).find("label") != std::string::npos);
        opts.label_column = "nope";
        CHECK_THROWS_AS(load_csv(labels, opts), Error);
    }

    TEST_CASE("categorical columns are coded in sorted order") {
        const auto path = write_temp("cat.csv", "color,v,y\nred,1,0\nblue,2,1\ngreen,3,0\nblue,4,1\n");
        CsvOptions opts;
        opts.label_column = "y";
        opts.train_fraction = 1.0;
        const LoadedData d = load_csv(path, opts);
        REQUIRE(d.categories.size() == 1);
        CHECK(d.categories[0].first == "color");
        CHECK(d.categories[0].second == std::vector<std::string>{"blue", "green", "red"});
        const Matrix raw = d.all.standardization->invert(d.all.features);
        CHECK(raw(0, 0) == doctest::Approx(2.0));
        CHECK(raw(1, 0) == doctest::Approx(0.0));
    }

    TEST_CASE("standardization is fit on the train split and reloads bit-exactly") {
        std::string text = "a,b,y\n";
        std::mt19937_64 rng(1);
        std::normal_distribution<double> normal(3.0, 2.0);
        for (int i = 0; i < 50; ++i) {
            text += std::to_string(normal(rng)) + "," + std::to_string(normal(rng)) + "," + std::to_string(i % 2) + "\n";
        }
        const auto path = write_temp("many.csv", text);
        CsvOptions opts;
        opts.label_column = "y";
        opts.seed = 9;
        const LoadedData first = load_csv(path, opts);
        const Dataset train = first.train();
        CHECK(train.size() == 40);
        for (Eigen::Index j = 0; j < 2; ++j) {
            const double mean = train.features.col(j).mean();
            CHECK(std::abs(mean) <= 1e-8 * train.size());
            CHECK((train.features.col(j).array() - mean).square().mean() == doctest::Approx(1.0));
        }
        opts.standardization = first.all.standardization;
        const LoadedData again = load_csv(path, opts);
        CHECK(again.all.features == first.all.features);
        const Standardization s = standardization_from_json(standardization_to_json(*first.all.standardization));
        CHECK(s.mean == first.all.standardization->mean);
        CHECK(s.stddev == first.all.standardization->stddev);
        const auto manifest = manifest_to_json(first.all, first.split, 9);
        CHECK(manifest.at("seed") == 9);
    }

    TEST_CASE("standardization round trip") {
        std::mt19937_64 rng(2);
        std::normal_distribution<double> normal(5.0, 3.0);
        Matrix rows(30, 4);
        for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = normal(rng);
        const Standardization s = Standardization::fit(rows, {"a", "b", "c", "d"});
        CHECK((s.invert(s.apply(rows)) - rows).cwiseAbs().maxCoeff() <= 1e-10);
    }

    TEST_CASE("split is deterministic and partitions") {
        const Split a = split_indices(101, 0.8, 5);
        const Split b = split_indices(101, 0.8, 5);
        CHECK(a.train == b.train);
        CHECK(a.test == b.test);
        CHECK(a.train.size() == 81);
        std::vector<int> all = a.train;
        all.insert(all.end(), a.test.begin(), a.test.end());
        std::sort(all.begin(), all.end());
        for (int i = 0; i < 101; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
        CHECK(split_indices(101, 0.8, 6).train != a.train);
    }

    TEST_CASE("actionability with train extremes") {
        const nlohmann::json j = nlohmann::json::parse(R"({"features": [
            {"name": "a", "actionable": true, "direction": "increase-only", "max": "train_max"},
            {"name": "b", "actionable": false}]})");
        Matrix train(3, 2);
        train << 1, 0, 3, 1, 5, 2;
        Standardization s{(Vector(2) << 3, 1).finished(), (Vector(2) << 2, 1).finished()};
        const FeasibilitySpec f = feasibility_for_data(j, {"a", "b"}, s, s.apply(train));
        CHECK(f.features[0].actionable);
        CHECK(f.features[0].direction == Direction::IncreaseOnly);
        CHECK(f.features[0].max == doctest::Approx(1.0));
        CHECK_FALSE(f.features[1].actionable);
        const nlohmann::json wrong = nlohmann::json::parse(R"({"features": [{"name": "zzz"}]})");
        CHECK_THROWS_AS(feasibility_for_data(wrong, {"a", "b"}, s, train), Error);
    }

    TEST_CASE("synthesized labels follow the labeler") {
        const Scm scm = builtin_scm("income-savings");
        const Labeler lab{(Vector(2) << 1, 0).finished(), 0.0, 0.0};
        const Dataset d = synthesize(scm, 500, lab, 3);
        CHECK(d.size() == 500);
        for (int i = 0; i < d.size(); ++i) CHECK(d.labels(i) == (d.features(i, 0) >= 0.0 ? 1.0 : 0.0));
        const Dataset again = synthesize(scm, 500, lab, 3);
        CHECK(again.features == d.features);
        CHECK(again.labels == d.labels);
        const Dataset other = synthesize(scm, 500, lab, 4);
        CHECK(other.features != d.features);

        const Labeler noisy{(Vector(2) << 1, 0).finished(), 0.0, 0.2};
        const Dataset n = synthesize(scm, 2000, noisy, 3);
        int flipped = 0;
        for (int i = 0; i < n.size(); ++i) flipped += n.labels(i) != (n.features(i, 0) >= 0.0 ? 1.0 : 0.0);
        CHECK(flipped > 300);
        CHECK(flipped < 500);
    }
}
