#include "robrec/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace robrec::io {

namespace {

std::vector<double> to_vec(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    }
    return out;
}

Matrix from_vec(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
        throw Error(std::string("json: ") + what + " has " + std::to_string(v.size()) + " entries, expected " +
                    std::to_string(rows * cols));
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
    }
    return m;
}

Vector vector_from(const Json& j, const char* what) {
    const auto v = j.get<std::vector<double>>();
    return from_vec(v, static_cast<Eigen::Index>(v.size()), 1, what);
}

Json bound_to_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw Error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& value) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << value.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// SCM

Expr expr_from_json(const Json& j) {
    if (j.contains("const")) return Expr::constant(j["const"].get<double>());
    if (j.contains("var")) return Expr::feature(j["var"].get<int>());
    const std::string op = j.at("op").get<std::string>();
    if (op == "square") return Expr::square(expr_from_json(j.at("arg")));
    if (op == "tanh") return Expr::tanh(expr_from_json(j.at("arg")));
    if (op != "add" && op != "sub" && op != "mul") throw Error("scm json: unknown op '" + op + "'");
    const Json& args = j.at("args");
    if (!args.is_array() || args.size() != 2) throw Error("scm json: '" + op + "' needs two args");
    Expr a = expr_from_json(args[0]);
    Expr b = expr_from_json(args[1]);
    if (op == "add") return a + b;
    if (op == "sub") return a - b;
    return a * b;
}

Json expr_to_json(const Expr& e) {
    switch (e.kind()) {
        case Expr::Kind::Constant: return Json{{"const", e.value()}};
        case Expr::Kind::Feature: return Json{{"var", e.index()}};
        case Expr::Kind::Square: return Json{{"op", "square"}, {"arg", expr_to_json(e.args()[0])}};
        case Expr::Kind::Tanh: return Json{{"op", "tanh"}, {"arg", expr_to_json(e.args()[0])}};
        case Expr::Kind::Add:
        case Expr::Kind::Sub:
        case Expr::Kind::Mul: {
            const char* op = e.kind() == Expr::Kind::Add ? "add" : e.kind() == Expr::Kind::Sub ? "sub" : "mul";
            return Json{{"op", op}, {"args", Json::array({expr_to_json(e.args()[0]), expr_to_json(e.args()[1])})}};
        }
    }
    throw Error("scm json: unknown expression kind");
}

Scm scm_from_json(const Json& j) {
    const auto parents = j.at("parents").get<std::vector<std::vector<int>>>();
    if (j.contains("n") && j["n"].get<std::size_t>() != parents.size()) {
        throw Error("scm json: n does not match the parents list");
    }
    std::vector<std::string> names;
    if (j.contains("feature_names")) names = j["feature_names"].get<std::vector<std::string>>();
    std::vector<Mechanism> mechanisms;
    for (const Json& mj : j.at("mechanisms")) {
        Mechanism m;
        const std::string form = mj.value("form", std::string("linear"));
        if (form == "linear") {
            m.form = MechanismForm::Linear;
            m.weights = mj.value("weights", std::vector<double>{});
        } else if (form == "nonlinear") {
            m.form = MechanismForm::Nonlinear;
            m.expr = expr_from_json(mj.at("expr"));
        } else {
            throw Error("scm json: unknown mechanism form '" + form + "'");
        }
        m.bias = mj.value("bias", 0.0);
        mechanisms.push_back(std::move(m));
    }
    return Scm(std::move(names), parents, std::move(mechanisms));
}

Json scm_to_json(const Scm& scm) {
    Json mechs = Json::array();
    for (const Mechanism& m : scm.mechanisms()) {
        Json mj;
        if (m.form == MechanismForm::Linear) {
            mj["form"] = "linear";
            mj["weights"] = m.weights;
        } else {
            mj["form"] = "nonlinear";
            mj["expr"] = expr_to_json(*m.expr);
        }
        mj["bias"] = m.bias;
        mechs.push_back(std::move(mj));
    }
    return Json{{"n", scm.size()},
                {"feature_names", scm.feature_names()},
                {"parents", scm.parents()},
                {"mechanisms", std::move(mechs)}};
}

Scm load_scm(const std::filesystem::path& path) { return scm_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Classifier

Json classifier_to_json(const Classifier& c) {
    Json j;
    j["n"] = c.input_dim();
    j["threshold"] = c.threshold();
    j["mask"] = c.feature_mask() ? Json(to_vec(*c.feature_mask())) : Json(nullptr);
    switch (c.kind()) {
        case ClassifierKind::Linear:
            j["kind"] = "linear";
            j["w"] = to_vec(c.linear_params().w);
            j["c"] = c.linear_params().c;
            break;
        case ClassifierKind::Mlp: {
            j["kind"] = "mlp";
            j["activation"] = c.mlp_params().activation == Activation::Tanh ? "tanh" : "relu";
            Json layers = Json::array();
            for (const MlpLayer& l : c.mlp_params().layers) {
                layers.push_back(Json{{"rows", l.weight.rows()},
                                      {"cols", l.weight.cols()},
                                      {"weight", to_vec(l.weight)},
                                      {"bias", to_vec(l.bias)}});
            }
            j["layers"] = std::move(layers);
            break;
        }
        case ClassifierKind::Sine:
            j["kind"] = "sine";
            j["feature"] = c.sine_params().feature;
            j["gamma"] = c.sine_params().gamma;
            j["sharpness"] = c.sine_params().sharpness;
            break;
    }
    return j;
}

Classifier classifier_from_json(const Json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const double threshold = j.value("threshold", 0.5);
    std::optional<Classifier> c;
    if (kind == "linear") {
        c = Classifier::linear(vector_from(j.at("w"), "w"), j.value("c", 0.0), threshold);
    } else if (kind == "mlp") {
        MlpParams p;
        const std::string act = j.value("activation", std::string("tanh"));
        if (act != "tanh" && act != "relu") throw Error("model json: unknown activation '" + act + "'");
        p.activation = act == "tanh" ? Activation::Tanh : Activation::Relu;
        for (const Json& lj : j.at("layers")) {
            const auto rows = lj.at("rows").get<Eigen::Index>();
            const auto cols = lj.at("cols").get<Eigen::Index>();
            p.layers.push_back(MlpLayer{from_vec(lj.at("weight").get<std::vector<double>>(), rows, cols, "weight"),
                                        from_vec(lj.at("bias").get<std::vector<double>>(), rows, 1, "bias")});
        }
        c = Classifier::mlp(std::move(p), threshold);
    } else if (kind == "sine") {
        c = Classifier::sine(j.at("n").get<int>(), SineParams{j.value("feature", 0), j.value("gamma", 0.1),
                                                              j.value("sharpness", 10.0)});
    } else {
        throw Error("model json: unknown kind '" + kind + "'");
    }
    if (j.contains("mask") && !j["mask"].is_null()) c->set_feature_mask(vector_from(j["mask"], "mask"));
    if (j.contains("n") && j["n"].get<int>() != c->input_dim()) throw Error("model json: n does not match weights");
    return *c;
}

Classifier load_classifier(const std::filesystem::path& path) { return classifier_from_json(read_json(path)); }

void save_classifier(const std::filesystem::path& path, const Classifier& c) { write_json(path, classifier_to_json(c)); }

// ---------------------------------------------------------------------------
// Feasibility

Json feasibility_to_json(const FeasibilitySpec& spec) {
    Json features = Json::array();
    for (const FeatureConstraint& c : spec.features) {
        const char* dir = c.direction == Direction::Free           ? "free"
                          : c.direction == Direction::IncreaseOnly ? "increase-only"
                                                                   : "decrease-only";
        features.push_back(Json{{"name", c.name},
                                {"actionable", c.actionable},
                                {"direction", dir},
                                {"min", bound_to_json(c.min)},
                                {"max", bound_to_json(c.max)}});
    }
    return Json{{"features", std::move(features)}};
}

FeasibilitySpec feasibility_from_json(const Json& j) {
    FeasibilitySpec spec;
    for (const Json& rec : j.at("features")) {
        FeatureConstraint c;
        c.name = rec.value("name", std::string("x") + std::to_string(spec.features.size() + 1));
        c.actionable = rec.value("actionable", false);
        const std::string dir = rec.value("direction", std::string("free"));
        if (dir == "free") {
            c.direction = Direction::Free;
        } else if (dir == "increase-only" || dir == "increase") {
            c.direction = Direction::IncreaseOnly;
        } else if (dir == "decrease-only" || dir == "decrease") {
            c.direction = Direction::DecreaseOnly;
        } else {
            throw Error("feasibility json: unknown direction '" + dir + "'");
        }
        if (rec.contains("min") && !rec["min"].is_null()) c.min = rec["min"].get<double>();
        if (rec.contains("max") && !rec["max"].is_null()) c.max = rec["max"].get<double>();
        spec.features.push_back(std::move(c));
    }
    spec.validate();
    return spec;
}

FeasibilitySpec load_feasibility(const std::filesystem::path& path) { return feasibility_from_json(read_json(path)); }

}  // namespace robrec::io
