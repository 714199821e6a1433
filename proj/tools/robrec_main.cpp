#include "robrec/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw robrec::Error("--epsilons: cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw robrec::Error("--epsilons: empty list");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarially robust causal algorithmic recourse experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> epsilons;
    std::optional<std::string> objective;
    std::optional<int> workers;
    int individual = 0;
    double epsilon = 0.0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Run a single seed instead of the configured list");
        sub->add_option("--out", out, "Output directory (default: config, then $ROBREC_OUT_DIR)");
        sub->add_option("--epsilons", epsilons, "Comma-separated uncertainty levels, ascending");
        sub->add_option("--objective", objective, "erm|af|allr|ross|allr-no-mu1|allr-no-mu2");
        sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    };
    const auto add_single = [&](CLI::App* sub) {
        sub->add_option("--individual", individual, "Index into the test split")->check(CLI::NonNegativeNumber);
        sub->add_option("--epsilon", epsilon, "Uncertainty level the action is robustified against")
            ->check(CLI::NonNegativeNumber);
    };

    CLI::App* train = app.add_subcommand("train", "Train classifiers and report accuracy/MCC per seed");
    CLI::App* fragility = app.add_subcommand("fragility", "Attack standard recourse of negative individuals");
    CLI::App* robustness = app.add_subcommand("robustness", "Attack recourse robustified at each epsilon");
    CLI::App* regularizers = app.add_subcommand("regularizers", "Compare training objectives");
    CLI::App* attack = app.add_subcommand("attack", "Recourse for one individual, then attack it");
    CLI::App* recourse = app.add_subcommand("recourse", "Recourse for one individual");
    for (CLI::App* sub : {train, fragility, robustness, regularizers, attack, recourse}) add_common(sub);
    add_single(attack);
    add_single(recourse);

    CLI11_PARSE(app, argc, argv);

    try {
        robrec::exp::Overrides ov;
        ov.seed = seed;
        if (out) ov.out = *out;
        if (epsilons) ov.epsilons = parse_list(*epsilons);
        ov.objective = objective;
        ov.workers = workers;
        const robrec::exp::ExperimentConfig config = robrec::exp::load_config(config_path, ov);

        robrec::exp::RunResult result;
        if (train->parsed()) {
            result = robrec::exp::cmd_train(config);
        } else if (fragility->parsed()) {
            result = robrec::exp::cmd_fragility(config);
        } else if (robustness->parsed()) {
            result = robrec::exp::cmd_robustness(config);
        } else if (regularizers->parsed()) {
            result = robrec::exp::cmd_regularizers(config);
        } else if (attack->parsed()) {
            result = robrec::exp::cmd_attack(config, individual, epsilon);
        } else {
            result = robrec::exp::cmd_recourse(config, individual, epsilon);
        }
        for (const auto& f : result.files) std::cout << "wrote " << f.string() << '\n';
        if (!result.failures.empty()) {
            for (const auto& f : result.failures) std::cerr << "check failed: " << f << '\n';
            return 1;
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
