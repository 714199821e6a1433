#include "robrec/attack.hpp"
#include "robrec/experiment.hpp"
#include "robrec/io.hpp"
#include "robrec/recourse.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace robrec;

namespace {

nlohmann::json parse(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("json: ") + e.what());
    }
}

const char* kind_name(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::Linear: return "linear";
        case ClassifierKind::Mlp: return "mlp";
        case ClassifierKind::Sine: return "sine";
    }
    return "";
}

py::dict run_result(const exp::RunResult& r) {
    py::dict d;
    std::vector<std::string> files;
    for (const auto& f : r.files) files.push_back(f.string());
    d["files"] = files;
    d["failures"] = r.failures;
    return d;
}

}  // namespace

PYBIND11_MODULE(_robrec, m) {
    m.doc() = "Adversarially robust causal algorithmic recourse.";
    py::register_exception<Error>(m, "RobrecError", PyExc_ValueError);

    py::class_<RecourseAction>(m, "RecourseAction")
        .def(py::init([](std::vector<int> intervened, Vector theta) {
                 return RecourseAction{std::move(intervened), std::move(theta)};
             }),
             py::arg("intervened"), py::arg("theta"))
        .def_readwrite("intervened", &RecourseAction::intervened)
        .def_readwrite("theta", &RecourseAction::theta)
        .def("dense", &RecourseAction::dense, py::arg("n"));

    py::class_<Scm>(m, "Scm")
        .def_static("builtin", &builtin_scm, py::arg("name"), "income-savings | quadratic | loan-like | imf-<k>")
        .def_static("imf", &Scm::imf, py::arg("n"))
        .def_static("from_json", [](const std::string& text) { return io::scm_from_json(parse(text)); })
        .def("to_json", [](const Scm& s) { return io::scm_to_json(s).dump(); })
        .def_property_readonly("size", &Scm::size)
        .def_property_readonly("is_linear", &Scm::is_linear)
        .def_property_readonly("feature_names", &Scm::feature_names)
        .def_property_readonly("parents", &Scm::parents)
        .def("abduct", &Scm::abduct, py::arg("x"))
        .def("reconstruct", &Scm::reconstruct, py::arg("u"))
        .def("counterfactual_hard", &Scm::counterfactual_hard, py::arg("x"), py::arg("action"))
        .def("counterfactual_additive", &Scm::counterfactual_additive, py::arg("x"), py::arg("delta"))
        .def("apply_action_to_perturbed", &Scm::apply_action_to_perturbed, py::arg("x"), py::arg("delta"),
             py::arg("action"))
        .def("interventional_jacobian",
             py::overload_cast<const Vector&, const RecourseAction&>(&Scm::interventional_jacobian, py::const_),
             py::arg("x"), py::arg("action"));

    py::class_<Classifier>(m, "Classifier")
        .def_static("linear", &Classifier::linear, py::arg("w"), py::arg("c"), py::arg("threshold") = 0.5)
        .def_static("sine",
                    [](int n, int feature, double gamma, double sharpness) {
                        return Classifier::sine(n, SineParams{feature, gamma, sharpness});
                    },
                    py::arg("n"), py::arg("feature") = 0, py::arg("gamma") = 0.1, py::arg("sharpness") = 10.0)
        .def_static("from_json", [](const std::string& text) { return io::classifier_from_json(parse(text)); })
        .def_static("load", &io::load_classifier, py::arg("path"))
        .def("to_json", [](const Classifier& c) { return io::classifier_to_json(c).dump(); })
        .def_property_readonly("kind", [](const Classifier& c) { return kind_name(c.kind()); })
        .def_property_readonly("input_dim", &Classifier::input_dim)
        .def_property_readonly("threshold", &Classifier::threshold)
        .def("logit", py::overload_cast<const Vector&>(&Classifier::logit, py::const_), py::arg("x"))
        .def("logits", &Classifier::logits, py::arg("x"), "One logit per column.")
        .def("score", &Classifier::score, py::arg("x"))
        .def("decide", &Classifier::decide, py::arg("x"));

    py::class_<FeasibilitySpec>(m, "FeasibilitySpec")
        .def_static("all_free", &FeasibilitySpec::all_free, py::arg("n"))
        .def_static("from_mask", &FeasibilitySpec::from_mask, py::arg("actionable"))
        .def_static("from_json", [](const std::string& text) { return io::feasibility_from_json(parse(text)); })
        .def("to_json", [](const FeasibilitySpec& f) { return io::feasibility_to_json(f).dump(); })
        .def_property_readonly("size", &FeasibilitySpec::size)
        .def("actionable", &FeasibilitySpec::actionable);

    py::class_<SolverParams>(m, "SolverParams")
        .def(py::init<>())
        .def_readwrite("lambda0", &SolverParams::lambda0)
        .def_readwrite("gamma", &SolverParams::gamma)
        .def_readwrite("n_max", &SolverParams::n_max)
        .def_readwrite("max_theta_steps", &SolverParams::max_theta_steps)
        .def_readwrite("alpha", &SolverParams::alpha)
        .def_readwrite("tolerance", &SolverParams::tolerance)
        .def_readwrite("inner_steps", &SolverParams::inner_steps)
        .def_readwrite("inner_step_fraction", &SolverParams::inner_step_fraction)
        .def_readwrite("exit_bisection_steps", &SolverParams::exit_bisection_steps)
        .def_readwrite("ray_restart", &SolverParams::ray_restart);

    py::class_<RecourseResult>(m, "RecourseResult")
        .def_property_readonly("found", &RecourseResult::found)
        .def_readonly("action", &RecourseResult::action)
        .def_readonly("cost", &RecourseResult::cost)
        .def_readonly("tight", &RecourseResult::tight)
        .def_readonly("iterations", &RecourseResult::iterations)
        .def_readonly("message", &RecourseResult::message);

    m.def(
        "generate_recourse",
        [](const Classifier& clf, const Scm& scm, const Vector& x, const FeasibilitySpec& feas, double epsilon,
           const Vector& cost_weights, const SolverParams& params) {
            UncertaintySpec unc;
            unc.epsilon = epsilon;
            return generate_recourse(clf, scm, x, feas, unc, CostFn{cost_weights}, params);
        },
        py::arg("clf"), py::arg("scm"), py::arg("x"), py::arg("feasibility"), py::arg("epsilon") = 0.0,
        py::arg("cost_weights") = Vector(), py::arg("params") = SolverParams{},
        "Closed form for linear classifier + linear SCM, min-max solver otherwise.");
    m.def("is_valid_recourse", &is_valid_recourse, py::arg("clf"), py::arg("scm"), py::arg("x"), py::arg("action"));

    py::class_<AttackResult>(m, "AttackResult")
        .def_readonly("delta", &AttackResult::delta)
        .def_readonly("magnitude", &AttackResult::magnitude)
        .def_readonly("success", &AttackResult::success)
        .def_readonly("certified_lower_bound", &AttackResult::certified_lower_bound);

    m.def("analytic_min_invalidation", &analytic_min_invalidation, py::arg("clf"), py::arg("scm"), py::arg("x"),
          py::arg("action"));
    m.def(
        "cw_min_invalidation",
        [](const Classifier& clf, const Scm& scm, const Vector& x, const RecourseAction& action, std::uint64_t seed) {
            CwParams p;
            p.seed = seed;
            return cw_min_invalidation(clf, scm, x, action, p);
        },
        py::arg("clf"), py::arg("scm"), py::arg("x"), py::arg("action"), py::arg("seed") = 0);

    m.def(
        "run_experiment",
        [](const std::string& command, const std::filesystem::path& config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out, std::optional<std::vector<double>> epsilons,
           std::optional<std::string> objective, std::optional<int> workers, int individual, double epsilon) {
            exp::Overrides ov{seed, std::move(out), std::move(epsilons), std::move(objective), workers};
            const exp::ExperimentConfig cfg = exp::load_config(config, ov);
            py::gil_scoped_release release;
            exp::RunResult r;
            if (command == "train") {
                r = exp::cmd_train(cfg);
            } else if (command == "fragility") {
                r = exp::cmd_fragility(cfg);
            } else if (command == "robustness") {
                r = exp::cmd_robustness(cfg);
            } else if (command == "regularizers") {
                r = exp::cmd_regularizers(cfg);
            } else if (command == "attack") {
                r = exp::cmd_attack(cfg, individual, epsilon);
            } else if (command == "recourse") {
                r = exp::cmd_recourse(cfg, individual, epsilon);
            } else {
                throw Error("unknown command '" + command + "'");
            }
            py::gil_scoped_acquire acquire;
            return run_result(r);
        },
        py::arg("command"), py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        py::arg("epsilons") = py::none(), py::arg("objective") = py::none(), py::arg("workers") = py::none(),
        py::arg("individual") = 0, py::arg("epsilon") = 0.1,
        "Runs a CLI subcommand; returns {'files': [...], 'failures': [...]}.");
}
