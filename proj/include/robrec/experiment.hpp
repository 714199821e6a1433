#pragma once

// Experiment pipelines behind the CLI: a JSON config, per-seed training and
// per-individual recourse/attack work dispatched to a worker pool, and
// plot-ready CSV output.

#include "robrec/attack.hpp"
#include "robrec/data.hpp"
#include "robrec/model.hpp"
#include "robrec/recourse.hpp"
#include "robrec/scm.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace robrec::exp {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "ROBREC_OUT_DIR";

struct DatasetConfig {
    /// "synthetic" samples from the SCM; "csv" reads `path`.
    std::string source = "synthetic";
    int n_samples = 1000;
    Labeler labeler;
    std::uint64_t data_seed = 0;
    std::filesystem::path path;
    std::string label_column;
    double train_fraction = 0.8;
};

struct ModelConfig {
    ClassifierKind kind = ClassifierKind::Linear;
    std::vector<int> hidden{32, 32};
    Activation activation = Activation::Tanh;
    TrainConfig train;
    /// Skip training and load this model for every seed.
    std::optional<std::filesystem::path> model_path;
};

struct AttackConfig {
    /// "auto" uses the exact distance for linear model + linear SCM, C&W otherwise.
    std::string method = "auto";
    CwParams cw;
};

/// Training variant compared by the regularizers pipeline.
struct ObjectiveSpec {
    std::string name;
    Objective objective = Objective::Erm;
    double mu1 = 3.0;
    double mu2 = 0.0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetConfig dataset;
    /// Unset: independently manipulable features over the data's columns.
    std::optional<Scm> scm;
    nlohmann::json actionability;  // null: every feature free-actionable
    ModelConfig model;
    std::vector<double> epsilons{1e-3, 1e-2, 1e-1, 0.5};
    double robust_epsilon = 0.1;
    SolverParams solver;
    AttackConfig attack;
    int max_individuals = 1000;
    std::vector<std::uint64_t> seeds{0};
    std::vector<ObjectiveSpec> objectives;
    std::filesystem::path output_dir;
    int workers = 1;
    /// Set when --epsilons was given; the fragility pipeline rejects it.
    bool epsilons_overridden = false;
    /// Canonical JSON of the resolved config; its hash tags every output row.
    nlohmann::json canonical;

    [[nodiscard]] std::string hash() const;
    void validate() const;
};

/// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::vector<double>> epsilons;
    std::optional<std::string> objective;
    std::optional<int> workers;
};

/// Parses and validates a config. Relative file paths resolve against
/// `base_dir` (the config file's directory).
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                              const Overrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Objective names: erm | af | allr | ross | allr-no-mu1 | allr-no-mu2.
ObjectiveSpec objective_from_name(const std::string& name, const TrainConfig& defaults);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Runs fn(i) for i in [0, n) on `workers` threads. fn must write only to
/// slot i of its output.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

/// Data, feasibility and split for one seed.
struct Prepared {
    Dataset all;
    Split split;
    FeasibilitySpec feasibility;
    Scm scm;
    [[nodiscard]] Dataset train() const { return all.subset(split.train); }
    [[nodiscard]] Dataset test() const { return all.subset(split.test); }
};

Prepared prepare_data(const ExperimentConfig& config, std::uint64_t seed);

struct TrainedModel {
    Classifier classifier;
    TrainReport report;
    Metrics train_metrics;
    Metrics test_metrics;
};

/// Trains (or loads) the configured model for `seed` and picks the MCC
/// threshold on the training split.
TrainedModel train_model(const ExperimentConfig& config, const Prepared& data, std::uint64_t seed,
                         const ObjectiveSpec& objective);
ObjectiveSpec configured_objective(const ExperimentConfig& config);
Classifier initial_classifier(const ExperimentConfig& config, int n, std::uint64_t seed);

/// Test-split rows classified negative, in index order, at most max_individuals.
std::vector<int> negative_individuals(const ExperimentConfig& config, const Classifier& clf, const Dataset& test);

/// Output directory: --out, then the config, then $ROBREC_OUT_DIR, then "robrec-out".
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

/// Exact distance when possible (per config), C&W otherwise.
AttackResult attack_action(const ExperimentConfig& config, const Classifier& clf, const Scm& scm, const Vector& x,
                           const RecourseAction& action, std::uint64_t seed);

struct RunResult {
    std::vector<std::filesystem::path> files;
    /// Internal consistency re-checks that failed; non-empty means exit code 1.
    std::vector<std::string> failures;
};

RunResult cmd_train(const ExperimentConfig& config);
RunResult cmd_fragility(const ExperimentConfig& config);
RunResult cmd_robustness(const ExperimentConfig& config);
RunResult cmd_regularizers(const ExperimentConfig& config);
/// Single pair: recourse at `epsilon` for test individual `individual`, then attacked.
RunResult cmd_attack(const ExperimentConfig& config, int individual, double epsilon);
/// Single individual: recourse at `epsilon`.
RunResult cmd_recourse(const ExperimentConfig& config, int individual, double epsilon);

/// Shortest round-trip decimal form used in every CSV.
std::string format_double(double v);

}  // namespace robrec::exp
