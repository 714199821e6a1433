#include "robrec/experiment.hpp"

#include "robrec/io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace robrec::exp {

using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!known) throw Error("config: unknown key '" + key + "' in " + where);
    }
}

fs::path resolve_path(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::Erm: return "erm";
        case Objective::Af: return "af";
        case Objective::Allr: return "allr";
        case Objective::Ross: return "ross";
    }
    return "erm";
}

class Csv {
public:
    explicit Csv(std::initializer_list<std::string> header) { add(std::vector<std::string>(header)); }
    void add(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) text_ += ',';
            text_ += fields[i];
        }
        text_ += '\n';
    }
    [[nodiscard]] const std::string& text() const { return text_; }

private:
    std::string text_;
};

std::string fmt(double v) { return format_double(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "1" : "0"; }

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0.0;
    for (double d : v) s += d;
    return s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

// Tight actions sit exactly epsilon from the boundary; allow rounding there.
bool survives(const AttackResult& a, double eps) { return !a.success || a.magnitude >= eps * (1.0 - 1e-9); }

double pct(std::size_t part, std::size_t whole) {
    return whole == 0 ? std::nan("") : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

Json vector_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

LambdaSchedule schedule_from_name(const std::string& s) {
    if (s == "increasing-constraint-weight") return LambdaSchedule::IncreasingConstraintWeight;
    if (s == "decreasing-cost-weight") return LambdaSchedule::DecreasingCostWeight;
    throw Error("config: unknown solver schedule '" + s + "'");
}

// Everything trained for one seed.
struct SeedRun {
    std::uint64_t seed = 0;
    std::optional<Prepared> data;
    std::optional<TrainedModel> model;
    Dataset test;
    std::vector<int> negatives;
};

std::vector<SeedRun> run_seeds(const ExperimentConfig& config, const ObjectiveSpec& objective) {
    std::vector<SeedRun> runs(config.seeds.size());
    parallel_for(static_cast<int>(runs.size()), config.workers, [&](int i) {
        SeedRun& r = runs[static_cast<std::size_t>(i)];
        r.seed = config.seeds[static_cast<std::size_t>(i)];
        r.data = prepare_data(config, r.seed);
        r.model = train_model(config, *r.data, r.seed, objective);
        r.test = r.data->test();
        r.negatives = negative_individuals(config, r.model->classifier, r.test);
    });
    return runs;
}

RecourseResult solve(const ExperimentConfig& config, const SeedRun& run, const Vector& x, double eps) {
    return generate_recourse(run.model->classifier, run.data->scm, x, run.data->feasibility,
                             {UncertaintyNorm::L2, eps}, CostFn{}, config.solver);
}

bool exact_attack(const ExperimentConfig& config, const Classifier& clf, const Scm& scm) {
    const bool linear = clf.kind() == ClassifierKind::Linear && scm.is_linear();
    return config.attack.method == "analytic" || (config.attack.method == "auto" && linear);
}

const char* method_name(const ExperimentConfig& config, const Classifier& clf, const Scm& scm) {
    return exact_attack(config, clf, scm) ? "analytic" : "cw";
}

struct Failures {
    std::mutex mutex;
    std::vector<std::string> items;
    void add(std::string msg) {
        const std::lock_guard<std::mutex> lock(mutex);
        items.push_back(std::move(msg));
    }
    std::vector<std::string> sorted() {
        std::sort(items.begin(), items.end());
        return items;
    }
};

// Re-checks shared by the recourse pipelines.
void check_action(Failures& failures, const std::string& where, const SeedRun& run, const Vector& x,
                  const RecourseResult& r) {
    if (!r.found()) return;
    if (!run.data->feasibility.feasible(x, r.action, 1e-9)) failures.add(where + ": action violates feasibility");
    if (!is_valid_recourse(run.model->classifier, run.data->scm, x, r.action)) {
        failures.add(where + ": action is not valid recourse");
    }
}

void check_attack(Failures& failures, const std::string& where, const ExperimentConfig& config,
                  const SeedRun& run, const Vector& x, const RecourseAction& action, const AttackResult& a) {
    if (!a.success) return;
    if (std::abs(a.magnitude - a.delta.norm()) > 1e-9 * std::max(1.0, a.magnitude)) {
        failures.add(where + ": attack magnitude differs from ||delta||");
    }
    const Classifier& clf = run.model->classifier;
    if (!exact_attack(config, clf, run.data->scm) && clf.decide(run.data->scm.apply_action_to_perturbed(x, a.delta, action))) {
        failures.add(where + ": attack does not invalidate the action");
    }
}

fs::path prepare_out(const ExperimentConfig& config) {
    const fs::path out = resolve_output_dir(config);
    fs::create_directories(out);
    return out;
}

// Log-spaced bins 1e-8..1e0, two per decade, plus an underflow and an overflow bin.
std::vector<double> histogram_edges() {
    std::vector<double> edges{0.0};
    for (int k = 0; k <= 16; ++k) edges.push_back(std::pow(10.0, -8.0 + 0.5 * k));
    edges.push_back(std::numeric_limits<double>::infinity());
    return edges;
}

std::vector<int> histogram(const std::vector<double>& values, const std::vector<double>& edges) {
    std::vector<int> counts(edges.size() - 1, 0);
    for (double v : values) {
        for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
            if (v >= edges[b] && v < edges[b + 1]) {
                ++counts[b];
                break;
            }
        }
    }
    return counts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Utilities

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int threads = std::max(1, std::min(workers, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (std::thread& th : pool) th.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

fs::path resolve_output_dir(const ExperimentConfig& config) {
    if (!config.output_dir.empty()) return config.output_dir;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return fs::path(env);
    return fs::path("robrec-out");
}

// ---------------------------------------------------------------------------
// Config

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical.dump()); }

void ExperimentConfig::validate() const {
    if (dataset.source != "synthetic" && dataset.source != "csv") {
        throw Error("config: dataset.source must be 'synthetic' or 'csv'");
    }
    if (dataset.source == "synthetic") {
        if (!scm) throw Error("config: a synthetic dataset needs an scm");
        if (dataset.n_samples < 2) throw Error("config: dataset.n_samples must be >= 2");
        if (dataset.labeler.noise_rate < 0.0 || dataset.labeler.noise_rate > 1.0) {
            throw Error("config: labeler.noise_rate must lie in [0, 1]");
        }
        if (dataset.labeler.weights.size() != scm->size()) {
            throw Error("config: labeler.weights needs one entry per SCM variable");
        }
    } else {
        if (!fs::exists(dataset.path)) throw Error("config: dataset file not found: " + dataset.path.string());
        if (dataset.label_column.empty()) throw Error("config: dataset.label_column is required for csv");
    }
    if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
        throw Error("config: dataset.train_fraction must lie in (0, 1)");
    }
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
        if (!(epsilons[i] >= 0.0) || !std::isfinite(epsilons[i])) throw Error("config: epsilons must be >= 0");
        if (i > 0 && epsilons[i] < epsilons[i - 1]) throw Error("config: epsilons must be sorted ascending");
    }
    if (!(robust_epsilon >= 0.0)) throw Error("config: robust_epsilon must be >= 0");
    if (seeds.empty()) throw Error("config: seeds must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw Error("config: seeds must be distinct");
    }
    if (max_individuals < 1) throw Error("config: max_individuals must be >= 1");
    if (workers < 1) throw Error("config: workers must be >= 1");
    if (objectives.empty()) throw Error("config: objectives must not be empty");
    if (model.model_path && !fs::exists(*model.model_path)) {
        throw Error("config: model file not found: " + model.model_path->string());
    }
    const std::string& m = attack.method;
    if (m != "auto" && m != "cw" && m != "analytic") throw Error("config: attack.method must be auto|cw|analytic");
    if (!(attack.cw.c_lo > 0.0 && attack.cw.c_hi >= attack.cw.c_lo)) throw Error("config: need 0 < c_lo <= c_hi");
    if (attack.cw.inner_iters < 1 || attack.cw.bisection_steps < 1) {
        throw Error("config: attack iterations must be >= 1");
    }
    model.train.validate();
    solver.validate();
}

ObjectiveSpec objective_from_name(const std::string& name, const TrainConfig& defaults) {
    if (name == "erm") return {name, Objective::Erm, 0.0, 0.0};
    if (name == "af") return {name, Objective::Af, 0.0, 0.0};
    if (name == "ross") return {name, Objective::Ross, 0.0, 0.0};
    if (name == "allr") return {name, Objective::Allr, defaults.mu1, defaults.mu2};
    if (name == "allr-no-mu1") return {name, Objective::Allr, 0.0, defaults.mu2};
    if (name == "allr-no-mu2") return {name, Objective::Allr, defaults.mu1, 0.0};
    throw Error("config: unknown objective '" + name + "' (erm|af|allr|ross|allr-no-mu1|allr-no-mu2)");
}

ExperimentConfig parse_config(const Json& j, const fs::path& base_dir, const Overrides& overrides) {
    check_keys(j,
               {"name", "dataset", "scm", "actionability", "model", "epsilons", "robust_epsilon", "solver", "attack",
                "max_individuals", "seeds", "seed", "objectives", "ablations", "output_dir", "workers"},
               "config");
    ExperimentConfig c;
    Json canonical = j;
    c.name = j.value("name", std::string("experiment"));

    // scm first: the synthetic labeler defaults depend on its size.
    if (j.contains("scm") && !j["scm"].is_null()) {
        if (j["scm"].is_object()) {
            c.scm = io::scm_from_json(j["scm"]);
        } else {
            const std::string ref = j["scm"].get<std::string>();
            const fs::path p = resolve_path(base_dir, ref);
            if (ref.find(".json") != std::string::npos || fs::exists(p)) {
                if (!fs::exists(p)) throw Error("config: scm file not found: " + p.string());
                c.scm = io::load_scm(p);
                canonical["scm"] = io::scm_to_json(*c.scm);
            } else {
                c.scm = builtin_scm(ref);
            }
        }
    }

    const Json d = j.value("dataset", Json::object());
    check_keys(d, {"source", "n_samples", "data_seed", "labeler", "path", "label_column", "train_fraction"},
               "dataset");
    c.dataset.source = d.value("source", std::string("synthetic"));
    c.dataset.n_samples = d.value("n_samples", 1000);
    c.dataset.data_seed = d.value("data_seed", std::uint64_t{0});
    c.dataset.train_fraction = d.value("train_fraction", 0.8);
    if (c.dataset.source == "synthetic") {
        const Json lab = d.value("labeler", Json::object());
        check_keys(lab, {"weights", "bias", "noise_rate"}, "dataset.labeler");
        if (lab.contains("weights")) {
            const auto w = lab["weights"].get<std::vector<double>>();
            c.dataset.labeler.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
        } else if (c.scm) {
            c.dataset.labeler.weights = Vector::Ones(c.scm->size());
        }
        c.dataset.labeler.bias = lab.value("bias", 0.0);
        c.dataset.labeler.noise_rate = lab.value("noise_rate", 0.0);
    } else if (c.dataset.source == "csv") {
        if (!d.contains("path")) throw Error("config: dataset.path is required for csv");
        c.dataset.path = resolve_path(base_dir, d["path"].get<std::string>());
        c.dataset.label_column = d.value("label_column", std::string());
        if (fs::exists(c.dataset.path)) canonical["dataset"]["content_fnv1a"] = fnv1a_hex(read_text(c.dataset.path));
    }

    if (j.contains("actionability") && !j["actionability"].is_null()) {
        if (j["actionability"].is_string()) {
            const fs::path p = resolve_path(base_dir, j["actionability"].get<std::string>());
            if (!fs::exists(p)) throw Error("config: actionability file not found: " + p.string());
            c.actionability = io::read_json(p);
            canonical["actionability"] = c.actionability;
        } else {
            c.actionability = j["actionability"];
        }
    }

    c.robust_epsilon = j.value("robust_epsilon", 0.1);
    if (j.contains("epsilons")) c.epsilons = j["epsilons"].get<std::vector<double>>();
    if (overrides.epsilons) {
        c.epsilons = *overrides.epsilons;
        c.epsilons_overridden = true;
        canonical["epsilons"] = c.epsilons;
    }

    const Json m = j.value("model", Json::object());
    check_keys(m,
               {"kind", "hidden", "activation", "objective", "mu1", "mu2", "eps_reg", "mu", "epochs", "batch_size",
                "learning_rate", "allr_steps", "ross_steps", "ross_step", "stencil_step", "model_path"},
               "model");
    const std::string kind = m.value("kind", std::string("linear"));
    if (kind == "linear") {
        c.model.kind = ClassifierKind::Linear;
    } else if (kind == "mlp") {
        c.model.kind = ClassifierKind::Mlp;
    } else {
        throw Error("config: model.kind must be linear or mlp");
    }
    c.model.hidden = m.value("hidden", std::vector<int>{32, 32});
    const std::string act = m.value("activation", std::string("tanh"));
    if (act != "tanh" && act != "relu") throw Error("config: model.activation must be tanh or relu");
    c.model.activation = act == "tanh" ? Activation::Tanh : Activation::Relu;
    TrainConfig& t = c.model.train;
    t.mu1 = m.value("mu1", t.mu1);
    t.mu2 = m.value("mu2", t.mu2);
    t.eps_reg = m.value("eps_reg", c.robust_epsilon > 0.0 ? c.robust_epsilon : t.eps_reg);
    t.mu = m.value("mu", t.mu);
    t.epochs = m.value("epochs", t.epochs);
    t.batch_size = m.value("batch_size", t.batch_size);
    t.learning_rate = m.value("learning_rate", t.learning_rate);
    t.allr_steps = m.value("allr_steps", t.allr_steps);
    t.ross_steps = m.value("ross_steps", t.ross_steps);
    t.ross_step = m.value("ross_step", t.ross_step);
    t.stencil_step = m.value("stencil_step", t.stencil_step);
    std::string objective = m.value("objective", std::string("erm"));
    if (overrides.objective) {
        objective = *overrides.objective;
        canonical["model"]["objective"] = objective;
    }
    const ObjectiveSpec configured = objective_from_name(objective, t);
    t.objective = configured.objective;
    t.mu1 = configured.objective == Objective::Allr ? configured.mu1 : t.mu1;
    t.mu2 = configured.objective == Objective::Allr ? configured.mu2 : t.mu2;
    if (m.contains("model_path")) {
        c.model.model_path = resolve_path(base_dir, m["model_path"].get<std::string>());
        if (fs::exists(*c.model.model_path)) canonical["model"]["model_path"] = io::read_json(*c.model.model_path);
    }

    const Json s = j.value("solver", Json::object());
    check_keys(s,
               {"lambda0", "gamma", "n_max", "max_theta_steps", "alpha", "tolerance", "inner_steps",
                "inner_step_fraction", "schedule", "exit_bisection_steps", "ray_restart", "ray_scan_min", "ray_scan_max"},
               "solver");
    SolverParams& sp = c.solver;
    sp.schedule = schedule_from_name(s.value("schedule", std::string("increasing-constraint-weight")));
    const double default_gamma = sp.schedule == LambdaSchedule::DecreasingCostWeight ? 0.9 : sp.gamma;
    sp.lambda0 = s.value("lambda0", sp.lambda0);
    sp.gamma = s.value("gamma", default_gamma);
    sp.n_max = s.value("n_max", sp.n_max);
    sp.max_theta_steps = s.value("max_theta_steps", sp.max_theta_steps);
    sp.alpha = s.value("alpha", sp.alpha);
    sp.tolerance = s.value("tolerance", sp.tolerance);
    sp.inner_steps = s.value("inner_steps", sp.inner_steps);
    sp.inner_step_fraction = s.value("inner_step_fraction", sp.inner_step_fraction);
    sp.exit_bisection_steps = s.value("exit_bisection_steps", sp.exit_bisection_steps);
    sp.ray_restart = s.value("ray_restart", sp.ray_restart);
    sp.ray_scan_min = s.value("ray_scan_min", sp.ray_scan_min);
    sp.ray_scan_max = s.value("ray_scan_max", sp.ray_scan_max);

    const Json a = j.value("attack", Json::object());
    check_keys(a,
               {"method", "c_lo", "c_hi", "bisection_steps", "inner_iters", "step", "restarts", "restart_std",
                "refine_steps"},
               "attack");
    c.attack.method = a.value("method", std::string("auto"));
    CwParams& cw = c.attack.cw;
    cw.c_lo = a.value("c_lo", cw.c_lo);
    cw.c_hi = a.value("c_hi", cw.c_hi);
    cw.bisection_steps = a.value("bisection_steps", cw.bisection_steps);
    cw.inner_iters = a.value("inner_iters", cw.inner_iters);
    cw.step = a.value("step", cw.step);
    cw.restarts = a.value("restarts", cw.restarts);
    cw.restart_std = a.value("restart_std", cw.restart_std);
    cw.refine_steps = a.value("refine_steps", cw.refine_steps);

    c.max_individuals = j.value("max_individuals", 1000);
    if (j.contains("seeds")) {
        c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    } else if (j.contains("seed")) {
        c.seeds = {j["seed"].get<std::uint64_t>()};
    }
    if (overrides.seed) {
        c.seeds = {*overrides.seed};
        canonical["seeds"] = c.seeds;
        canonical.erase("seed");
    }

    std::vector<std::string> names = j.value("objectives", std::vector<std::string>{"erm", "af", "allr", "ross"});
    if (overrides.objective) names = {"erm", *overrides.objective};
    if (j.value("ablations", false)) {
        names.emplace_back("allr-no-mu1");
        names.emplace_back("allr-no-mu2");
    }
    std::vector<std::string> unique;
    for (const std::string& n : names) {
        if (std::find(unique.begin(), unique.end(), n) == unique.end()) unique.push_back(n);
    }
    // ERM leads: relative costs are measured on individuals it also solves.
    unique.erase(std::remove(unique.begin(), unique.end(), "erm"), unique.end());
    unique.insert(unique.begin(), "erm");
    for (const std::string& n : unique) c.objectives.push_back(objective_from_name(n, t));

    c.output_dir = j.contains("output_dir") ? fs::path(j["output_dir"].get<std::string>()) : fs::path();
    if (overrides.out) c.output_dir = *overrides.out;
    c.workers = overrides.workers ? *overrides.workers : j.value("workers", 1);

    canonical.erase("output_dir");
    canonical.erase("workers");
    c.canonical = std::move(canonical);
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path, const Overrides& overrides) {
    return parse_config(io::read_json(path), path.parent_path(), overrides);
}

// ---------------------------------------------------------------------------
// Data and models

Prepared prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
    if (config.dataset.source == "synthetic") {
        const Scm& scm = *config.scm;
        Dataset all = synthesize(scm, config.dataset.n_samples, config.dataset.labeler, config.dataset.data_seed);
        if (all.feature_names.empty()) {
            for (int i = 0; i < scm.size(); ++i) all.feature_names.push_back("x" + std::to_string(i + 1));
        }
        Split split = split_indices(all.size(), config.dataset.train_fraction, seed);
        FeasibilitySpec feas = FeasibilitySpec::all_free(all.dim());
        for (int i = 0; i < all.dim(); ++i) feas.features[static_cast<std::size_t>(i)].name = all.feature_names[static_cast<std::size_t>(i)];
        if (!config.actionability.is_null()) {
            feas = feasibility_for_data(config.actionability, all.feature_names, std::nullopt,
                                        all.subset(split.train).features);
        }
        return Prepared{std::move(all), std::move(split), std::move(feas), scm};
    }
    CsvOptions opts;
    opts.label_column = config.dataset.label_column;
    opts.train_fraction = config.dataset.train_fraction;
    opts.seed = seed;
    LoadedData loaded = load_csv(config.dataset.path, opts);
    FeasibilitySpec feas = loaded.feasibility;
    if (!config.actionability.is_null()) {
        feas = feasibility_for_data(config.actionability, loaded.all.feature_names, loaded.all.standardization,
                                    loaded.train().features);
    }
    Scm scm = config.scm ? *config.scm : Scm::imf(loaded.all.dim());
    if (scm.size() != loaded.all.dim()) {
        throw Error("config: scm has " + std::to_string(scm.size()) + " variables but the data has " +
                    std::to_string(loaded.all.dim()) + " features");
    }
    return Prepared{std::move(loaded.all), std::move(loaded.split), std::move(feas), std::move(scm)};
}

ObjectiveSpec configured_objective(const ExperimentConfig& config) {
    const TrainConfig& t = config.model.train;
    ObjectiveSpec o{objective_name(t.objective), t.objective, t.mu1, t.mu2};
    return o;
}

Classifier initial_classifier(const ExperimentConfig& config, int n, std::uint64_t seed) {
    if (config.model.kind == ClassifierKind::Linear) return Classifier::linear(Vector::Zero(n), 0.0);
    std::mt19937_64 rng(mix_seed(seed, 0x51ed));
    return Classifier::random_mlp(n, config.model.hidden, config.model.activation, rng);
}

TrainedModel train_model(const ExperimentConfig& config, const Prepared& data, std::uint64_t seed,
                         const ObjectiveSpec& objective) {
    const Dataset train_set = data.train();
    const Dataset test_set = data.test();
    TrainReport report;
    std::optional<Classifier> clf;
    if (config.model.model_path) {
        clf = io::load_classifier(*config.model.model_path);
        if (clf->input_dim() != data.all.dim()) throw Error("model file does not match the data dimension");
    } else {
        TrainConfig tc = config.model.train;
        tc.seed = seed;
        tc.objective = objective.objective;
        tc.mu1 = objective.mu1;
        tc.mu2 = objective.mu2;
        clf = train(initial_classifier(config, data.all.dim(), seed), train_set.features, train_set.labels, tc,
                    data.feasibility.actionable_mask(), &report);
        clf->set_threshold(select_threshold(*clf, train_set.features, train_set.labels));
    }
    TrainedModel out{*clf, std::move(report), evaluate(*clf, train_set.features, train_set.labels), {}};
    if (test_set.size() > 0) out.test_metrics = evaluate(*clf, test_set.features, test_set.labels);
    return out;
}

std::vector<int> negative_individuals(const ExperimentConfig& config, const Classifier& clf, const Dataset& test) {
    std::vector<int> out;
    for (int i = 0; i < test.size() && static_cast<int>(out.size()) < config.max_individuals; ++i) {
        if (!clf.decide(test.features.row(i).transpose())) out.push_back(i);
    }
    return out;
}

AttackResult attack_action(const ExperimentConfig& config, const Classifier& clf, const Scm& scm, const Vector& x,
                           const RecourseAction& action, std::uint64_t seed) {
    if (exact_attack(config, clf, scm)) {
        if (clf.kind() != ClassifierKind::Linear || !scm.is_linear()) {
            throw Error("attack: the analytic method needs a linear classifier and a linear SCM");
        }
        const double d = analytic_min_invalidation(clf, scm, x, action);
        const Vector v = scm.interventional_jacobian(x, action).transpose() * clf.half_space().w;
        AttackResult r;
        r.success = true;
        r.magnitude = std::max(d, 0.0);
        r.delta = -r.magnitude * v / v.norm();
        r.certified_lower_bound = d;
        return r;
    }
    CwParams p = config.attack.cw;
    p.seed = seed;
    return cw_min_invalidation(clf, scm, x, action, p);
}

// ---------------------------------------------------------------------------
// Pipelines

RunResult cmd_train(const ExperimentConfig& config) {
    const fs::path out = prepare_out(config);
    const std::string hash = config.hash();
    const ObjectiveSpec objective = configured_objective(config);
    std::vector<SeedRun> runs(config.seeds.size());
    parallel_for(static_cast<int>(runs.size()), config.workers, [&](int i) {
        SeedRun& r = runs[static_cast<std::size_t>(i)];
        r.seed = config.seeds[static_cast<std::size_t>(i)];
        r.data = prepare_data(config, r.seed);
        r.model = train_model(config, *r.data, r.seed, objective);
    });

    RunResult result;
    Csv metrics({"config_hash", "seed", "objective", "kind", "n_train", "n_test", "threshold", "train_accuracy",
                 "train_mcc", "test_accuracy", "test_mcc", "final_loss", "mean_penalty"});
    Csv trace({"config_hash", "seed", "epoch", "loss", "penalty"});
    for (const SeedRun& r : runs) {
        const std::string seed = fmt(r.seed);
        const Classifier& clf = r.model->classifier;
        const fs::path model_file = out / ("model_seed" + seed + ".json");
        io::save_classifier(model_file, clf);
        result.files.push_back(model_file);
        const Classifier reloaded = io::load_classifier(model_file);
        if (reloaded.logits(r.data->all.features.transpose()) != clf.logits(r.data->all.features.transpose())) {
            result.failures.push_back("seed " + seed + ": saved model does not reproduce its logits");
        }
        Json manifest = manifest_to_json(r.data->all, r.data->split, r.seed);
        manifest["config_hash"] = hash;
        const fs::path manifest_file = out / ("manifest_seed" + seed + ".json");
        io::write_json(manifest_file, manifest);
        result.files.push_back(manifest_file);

        const TrainReport& rep = r.model->report;
        const double final_loss = rep.loss_trace.empty() ? std::nan("") : rep.loss_trace.back();
        metrics.add({hash, seed, objective.name, config.model.kind == ClassifierKind::Linear ? "linear" : "mlp",
                     fmt(r.data->split.train.size()), fmt(r.data->split.test.size()), fmt(clf.threshold()),
                     fmt(r.model->train_metrics.accuracy), fmt(r.model->train_metrics.mcc),
                     fmt(r.model->test_metrics.accuracy), fmt(r.model->test_metrics.mcc), fmt(final_loss),
                     fmt(mean_of(rep.penalty_trace))});
        for (std::size_t e = 0; e < rep.loss_trace.size(); ++e) {
            trace.add({hash, seed, fmt(e), fmt(rep.loss_trace[e]), fmt(rep.penalty_trace[e])});
        }
        if (!std::isfinite(r.model->train_metrics.accuracy)) {
            result.failures.push_back("seed " + seed + ": non-finite metrics");
        }
    }
    write_text(out / "train_metrics.csv", metrics.text());
    write_text(out / "train_trace.csv", trace.text());
    result.files.push_back(out / "train_metrics.csv");
    result.files.push_back(out / "train_trace.csv");
    return result;
}

RunResult cmd_fragility(const ExperimentConfig& config) {
    if (config.epsilons_overridden) {
        throw Error("fragility measures standard (epsilon = 0) recourse and does not accept --epsilons");
    }
    const fs::path out = prepare_out(config);
    const std::string hash = config.hash();
    const std::vector<SeedRun> runs = run_seeds(config, configured_objective(config));

    struct Item {
        std::size_t run;
        int individual;
        RecourseResult recourse;
        AttackResult attack;
    };
    std::vector<Item> items;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        for (int i : runs[r].negatives) items.push_back({r, i, {}, {}});
    }
    if (items.empty()) throw Error("fragility: no negatively classified test individuals");

    Failures failures;
    parallel_for(static_cast<int>(items.size()), config.workers, [&](int k) {
        Item& it = items[static_cast<std::size_t>(k)];
        const SeedRun& run = runs[it.run];
        const Vector x = run.test.features.row(it.individual).transpose();
        it.recourse = solve(config, run, x, 0.0);
        const std::string where = "seed " + fmt(run.seed) + " individual " + fmt(it.individual);
        check_action(failures, where, run, x, it.recourse);
        if (!it.recourse.found()) return;
        it.attack = attack_action(config, run.model->classifier, run.data->scm, x, it.recourse.action,
                                  mix_seed(run.seed, static_cast<std::uint64_t>(it.individual)));
        check_attack(failures, where, config, run, x, it.recourse.action, it.attack);
    });

    Csv rows({"config_hash", "seed", "individual", "row", "found", "cost", "magnitude", "attack_success", "method"});
    Csv hist({"config_hash", "seed", "bin_lo", "bin_hi", "count"});
    Csv summary({"config_hash", "seed", "n_individuals", "n_found", "n_attacked", "median_magnitude",
                 "fraction_below_1e-4"});
    const std::vector<double> edges = histogram_edges();
    std::vector<double> all_mags;
    std::size_t all_found = 0;
    const auto emit_summary = [&](const std::string& seed, std::size_t n, std::size_t found,
                                  const std::vector<double>& mags) {
        const auto counts = histogram(mags, edges);
        for (std::size_t b = 0; b < counts.size(); ++b) {
            hist.add({hash, seed, fmt(edges[b]), fmt(edges[b + 1]), fmt(counts[b])});
        }
        const auto small = static_cast<std::size_t>(std::count_if(mags.begin(), mags.end(), [](double m) { return m <= 1e-4; }));
        summary.add({hash, seed, fmt(n), fmt(found), fmt(mags.size()), fmt(median_of(mags)),
                     fmt(mags.empty() ? std::nan("") : static_cast<double>(small) / static_cast<double>(mags.size()))});
    };
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const SeedRun& run = runs[r];
        const char* method = method_name(config, run.model->classifier, run.data->scm);
        std::vector<double> mags;
        std::size_t found = 0;
        for (const Item& it : items) {
            if (it.run != r) continue;
            const bool ok = it.recourse.found();
            found += ok;
            if (ok && it.attack.success) mags.push_back(it.attack.magnitude);
            rows.add({hash, fmt(run.seed), fmt(it.individual), fmt(run.data->split.test[static_cast<std::size_t>(it.individual)]),
                      fmt(ok), ok ? fmt(it.recourse.cost) : "", ok ? fmt(it.attack.magnitude) : "",
                      fmt(ok && it.attack.success), ok ? method : ""});
        }
        emit_summary(fmt(run.seed), run.negatives.size(), found, mags);
        all_mags.insert(all_mags.end(), mags.begin(), mags.end());
        all_found += found;
    }
    emit_summary("all", items.size(), all_found, all_mags);

    RunResult result;
    for (const auto& [name, csv] : {std::pair{"fragility.csv", &rows}, std::pair{"fragility_hist.csv", &hist},
                                    std::pair{"fragility_summary.csv", &summary}}) {
        write_text(out / name, csv->text());
        result.files.push_back(out / name);
    }
    result.failures = failures.sorted();
    return result;
}

RunResult cmd_robustness(const ExperimentConfig& config) {
    const fs::path out = prepare_out(config);
    const std::string hash = config.hash();
    const std::vector<SeedRun> runs = run_seeds(config, configured_objective(config));

    struct Item {
        std::size_t run;
        std::size_t eps;
        int individual;
        RecourseResult recourse;
        AttackResult attack;
    };
    std::vector<Item> items;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        for (std::size_t e = 0; e < config.epsilons.size(); ++e) {
            for (int i : runs[r].negatives) items.push_back({r, e, i, {}, {}});
        }
    }
    if (items.empty()) throw Error("robustness: no negatively classified test individuals");

    Failures failures;
    parallel_for(static_cast<int>(items.size()), config.workers, [&](int k) {
        Item& it = items[static_cast<std::size_t>(k)];
        const SeedRun& run = runs[it.run];
        const double eps = config.epsilons[it.eps];
        const Vector x = run.test.features.row(it.individual).transpose();
        it.recourse = solve(config, run, x, eps);
        const std::string where =
            "seed " + fmt(run.seed) + " epsilon " + fmt(eps) + " individual " + fmt(it.individual);
        check_action(failures, where, run, x, it.recourse);
        if (!it.recourse.found()) return;
        it.attack = attack_action(config, run.model->classifier, run.data->scm, x, it.recourse.action,
                                  mix_seed(mix_seed(run.seed, it.eps), static_cast<std::uint64_t>(it.individual)));
        check_attack(failures, where, config, run, x, it.recourse.action, it.attack);
        const Classifier& clf = run.model->classifier;
        if (clf.kind() == ClassifierKind::Linear && run.data->scm.is_linear() && it.attack.certified_lower_bound &&
            *it.attack.certified_lower_bound < eps - 1e-8) {
            failures.add(where + ": linear robust action is closer than epsilon to the boundary");
        }
    });

    Csv rows({"config_hash", "seed", "epsilon", "individual", "row", "found", "cost", "magnitude", "robust"});
    Csv summary({"config_hash", "seed", "epsilon", "n_individuals", "found_pct", "robust_pct", "mean_cost",
                 "median_magnitude_over_epsilon"});
    for (std::size_t e = 0; e < config.epsilons.size(); ++e) {
        const double eps = config.epsilons[e];
        std::size_t all_n = 0, all_found = 0, all_robust = 0;
        std::vector<double> all_costs, all_ratios;
        for (std::size_t r = 0; r < runs.size(); ++r) {
            const SeedRun& run = runs[r];
            std::size_t n = 0, found = 0, robust = 0;
            std::vector<double> costs, ratios;
            for (const Item& it : items) {
                if (it.run != r || it.eps != e) continue;
                ++n;
                const bool ok = it.recourse.found();
                const bool is_robust = ok && survives(it.attack, eps);
                if (ok) {
                    ++found;
                    robust += is_robust;
                    costs.push_back(it.recourse.cost);
                    if (eps > 0.0) ratios.push_back(it.attack.magnitude / eps);
                }
                rows.add({hash, fmt(run.seed), fmt(eps), fmt(it.individual),
                          fmt(run.data->split.test[static_cast<std::size_t>(it.individual)]), fmt(ok),
                          ok ? fmt(it.recourse.cost) : "", ok ? fmt(it.attack.magnitude) : "",
                          ok ? fmt(is_robust) : ""});
            }
            summary.add({hash, fmt(run.seed), fmt(eps), fmt(n), fmt(pct(found, n)), fmt(pct(robust, found)),
                         fmt(mean_of(costs)), fmt(median_of(ratios))});
            all_n += n;
            all_found += found;
            all_robust += robust;
            all_costs.insert(all_costs.end(), costs.begin(), costs.end());
            all_ratios.insert(all_ratios.end(), ratios.begin(), ratios.end());
        }
        summary.add({hash, "all", fmt(eps), fmt(all_n), fmt(pct(all_found, all_n)), fmt(pct(all_robust, all_found)),
                     fmt(mean_of(all_costs)), fmt(median_of(all_ratios))});
    }

    RunResult result;
    write_text(out / "robustness.csv", rows.text());
    write_text(out / "robustness_summary.csv", summary.text());
    result.files = {out / "robustness.csv", out / "robustness_summary.csv"};
    result.failures = failures.sorted();
    return result;
}

RunResult cmd_regularizers(const ExperimentConfig& config) {
    const fs::path out = prepare_out(config);
    const std::string hash = config.hash();
    const std::size_t n_obj = config.objectives.size();
    const std::size_t n_seed = config.seeds.size();

    // One SeedRun per (objective, seed), objective-major.
    std::vector<SeedRun> runs(n_obj * n_seed);
    parallel_for(static_cast<int>(runs.size()), config.workers, [&](int k) {
        const std::size_t o = static_cast<std::size_t>(k) / n_seed;
        SeedRun& r = runs[static_cast<std::size_t>(k)];
        r.seed = config.seeds[static_cast<std::size_t>(k) % n_seed];
        r.data = prepare_data(config, r.seed);
        r.model = train_model(config, *r.data, r.seed, config.objectives[o]);
        r.test = r.data->test();
        r.negatives = negative_individuals(config, r.model->classifier, r.test);
    });

    struct Item {
        std::size_t run;
        int individual;
        RecourseResult standard;
        RecourseResult robust;
    };
    std::vector<Item> items;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        for (int i : runs[k].negatives) items.push_back({k, i, {}, {}});
    }
    Failures failures;
    parallel_for(static_cast<int>(items.size()), config.workers, [&](int k) {
        Item& it = items[static_cast<std::size_t>(k)];
        const SeedRun& run = runs[it.run];
        const Vector x = run.test.features.row(it.individual).transpose();
        it.standard = solve(config, run, x, 0.0);
        it.robust = solve(config, run, x, config.robust_epsilon);
        const std::string where = config.objectives[it.run / n_seed].name + " seed " + fmt(run.seed) +
                                  " individual " + fmt(it.individual);
        check_action(failures, where, run, x, it.standard);
        check_action(failures, where, run, x, it.robust);
    });

    // Robust cost per (run, individual) for the common-set relative cost.
    std::vector<std::map<int, double>> robust_cost(runs.size());
    std::vector<std::size_t> n_std(runs.size(), 0), n_rob(runs.size(), 0);
    for (const Item& it : items) {
        n_std[it.run] += it.standard.found();
        n_rob[it.run] += it.robust.found();
        if (it.robust.found()) robust_cost[it.run][it.individual] = it.robust.cost;
    }
    std::vector<double> mean_cost(runs.size(), std::nan(""));
    std::vector<std::size_t> n_common(runs.size(), 0);
    for (std::size_t o = 0; o < n_obj; ++o) {
        for (std::size_t s = 0; s < n_seed; ++s) {
            const std::size_t k = o * n_seed + s;
            const auto& erm = robust_cost[s];  // erm is objective 0
            std::vector<double> costs;
            for (const auto& [ind, cost] : robust_cost[k]) {
                if (erm.count(ind)) costs.push_back(cost);
            }
            n_common[k] = costs.size();
            mean_cost[k] = mean_of(costs);
        }
    }
    const auto normalize = [](const std::vector<double>& v) {
        double mx = 0.0;
        for (double d : v) {
            if (std::isfinite(d)) mx = std::max(mx, d);
        }
        std::vector<double> out(v.size(), std::nan(""));
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (std::isfinite(v[i]) && mx > 0.0) out[i] = v[i] / mx;
        }
        return out;
    };

    Csv table({"config_hash", "seed", "objective", "accuracy", "mcc", "n_negative", "found_standard_pct",
               "found_robust_pct", "n_common", "mean_robust_cost", "relative_cost"});
    std::vector<double> relative(runs.size(), std::nan(""));
    for (std::size_t s = 0; s < n_seed; ++s) {
        std::vector<double> per_obj;
        for (std::size_t o = 0; o < n_obj; ++o) per_obj.push_back(mean_cost[o * n_seed + s]);
        const auto rel = normalize(per_obj);
        for (std::size_t o = 0; o < n_obj; ++o) relative[o * n_seed + s] = rel[o];
    }
    for (std::size_t o = 0; o < n_obj; ++o) {
        for (std::size_t s = 0; s < n_seed; ++s) {
            const std::size_t k = o * n_seed + s;
            const SeedRun& r = runs[k];
            const std::size_t n = r.negatives.size();
            table.add({hash, fmt(r.seed), config.objectives[o].name, fmt(r.model->test_metrics.accuracy),
                       fmt(r.model->test_metrics.mcc), fmt(n), fmt(pct(n_std[k], n)), fmt(pct(n_rob[k], n)),
                       fmt(n_common[k]), fmt(mean_cost[k]), fmt(relative[k])});
        }
    }
    std::vector<double> agg_cost(n_obj);
    for (std::size_t o = 0; o < n_obj; ++o) {
        std::vector<double> c;
        for (std::size_t s = 0; s < n_seed; ++s) {
            if (std::isfinite(mean_cost[o * n_seed + s])) c.push_back(mean_cost[o * n_seed + s]);
        }
        agg_cost[o] = mean_of(c);
    }
    const auto agg_rel = normalize(agg_cost);
    for (std::size_t o = 0; o < n_obj; ++o) {
        std::vector<double> acc, mccs;
        std::size_t n = 0, fs_ = 0, fr = 0, common = 0;
        for (std::size_t s = 0; s < n_seed; ++s) {
            const std::size_t k = o * n_seed + s;
            acc.push_back(runs[k].model->test_metrics.accuracy);
            mccs.push_back(runs[k].model->test_metrics.mcc);
            n += runs[k].negatives.size();
            fs_ += n_std[k];
            fr += n_rob[k];
            common += n_common[k];
        }
        table.add({hash, "all", config.objectives[o].name, fmt(mean_of(acc)), fmt(mean_of(mccs)), fmt(n),
                   fmt(pct(fs_, n)), fmt(pct(fr, n)), fmt(common), fmt(agg_cost[o]), fmt(agg_rel[o])});
    }

    Csv detail({"config_hash", "seed", "objective", "individual", "row", "standard_found", "standard_cost",
                "robust_found", "robust_cost"});
    for (const Item& it : items) {
        const SeedRun& r = runs[it.run];
        detail.add({hash, fmt(r.seed), config.objectives[it.run / n_seed].name, fmt(it.individual),
                    fmt(r.data->split.test[static_cast<std::size_t>(it.individual)]), fmt(it.standard.found()),
                    it.standard.found() ? fmt(it.standard.cost) : "", fmt(it.robust.found()),
                    it.robust.found() ? fmt(it.robust.cost) : ""});
    }

    RunResult result;
    write_text(out / "regularizers.csv", table.text());
    write_text(out / "regularizers_individuals.csv", detail.text());
    result.files = {out / "regularizers.csv", out / "regularizers_individuals.csv"};
    result.failures = failures.sorted();
    return result;
}

namespace {

struct Single {
    SeedRun run;
    Vector x;
    RecourseResult recourse;
    Json json;
};

Single single_recourse(const ExperimentConfig& config, int individual, double epsilon, Failures& failures) {
    if (!(epsilon >= 0.0)) throw Error("epsilon must be >= 0");
    Single s;
    s.run.seed = config.seeds.front();
    s.run.data = prepare_data(config, s.run.seed);
    s.run.model = train_model(config, *s.run.data, s.run.seed, configured_objective(config));
    s.run.test = s.run.data->test();
    if (individual < 0 || individual >= s.run.test.size()) {
        throw Error("individual " + std::to_string(individual) + " is outside the test split (size " +
                    std::to_string(s.run.test.size()) + ")");
    }
    s.x = s.run.test.features.row(individual).transpose();
    const Classifier& clf = s.run.model->classifier;
    s.recourse = solve(config, s.run, s.x, epsilon);
    check_action(failures, "individual " + std::to_string(individual), s.run, s.x, s.recourse);
    s.json = Json{{"config_hash", config.hash()},
                  {"seed", s.run.seed},
                  {"individual", individual},
                  {"row", s.run.data->split.test[static_cast<std::size_t>(individual)]},
                  {"epsilon", epsilon},
                  {"x", vector_json(s.x)},
                  {"classified_positive", clf.decide(s.x)},
                  {"found", s.recourse.found()},
                  {"message", s.recourse.message}};
    if (s.recourse.found()) {
        s.json["intervened"] = s.recourse.action.intervened;
        s.json["theta"] = vector_json(s.recourse.action.theta);
        s.json["cost"] = s.recourse.cost;
        s.json["counterfactual"] = vector_json(s.run.data->scm.counterfactual_hard(s.x, s.recourse.action));
    }
    return s;
}

}  // namespace

RunResult cmd_recourse(const ExperimentConfig& config, int individual, double epsilon) {
    const fs::path out = prepare_out(config);
    Failures failures;
    Single s = single_recourse(config, individual, epsilon, failures);
    const fs::path file =
        out / ("recourse_seed" + fmt(s.run.seed) + "_individual" + std::to_string(individual) + ".json");
    io::write_json(file, s.json);
    return {{file}, failures.sorted()};
}

RunResult cmd_attack(const ExperimentConfig& config, int individual, double epsilon) {
    const fs::path out = prepare_out(config);
    Failures failures;
    Single s = single_recourse(config, individual, epsilon, failures);
    if (s.recourse.found()) {
        const AttackResult a = attack_action(config, s.run.model->classifier, s.run.data->scm, s.x,
                                             s.recourse.action, mix_seed(s.run.seed, static_cast<std::uint64_t>(individual)));
        check_attack(failures, "individual " + std::to_string(individual), config, s.run, s.x, s.recourse.action, a);
        Json aj{{"method", method_name(config, s.run.model->classifier, s.run.data->scm)},
                {"success", a.success},
                {"magnitude", a.success ? Json(a.magnitude) : Json(nullptr)},
                {"delta", a.success ? vector_json(a.delta) : Json(nullptr)},
                {"certified_lower_bound",
                 a.certified_lower_bound ? Json(*a.certified_lower_bound) : Json(nullptr)},
                {"robust", survives(a, epsilon)}};
        s.json["attack"] = std::move(aj);
    }
    const fs::path file =
        out / ("attack_seed" + fmt(s.run.seed) + "_individual" + std::to_string(individual) + ".json");
    io::write_json(file, s.json);
    return {{file}, failures.sorted()};
}

}  // namespace robrec::exp
