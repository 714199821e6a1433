#include "robrec/data.hpp"

#include "robrec/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace robrec {

namespace {

std::optional<double> parse_number(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    if (b == std::string::npos) return std::nullopt;
    const std::string t = s.substr(b, e - b + 1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool is_blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

}  // namespace

// ---------------------------------------------------------------------------
// Standardization

Standardization Standardization::fit(const Matrix& rows, const std::vector<std::string>& names) {
    if (rows.rows() < 2) throw Error("standardization: need at least two rows");
    Standardization s;
    s.mean = rows.colwise().mean().transpose();
    s.stddev.resize(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const double var = (rows.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(rows.rows());
        s.stddev(j) = std::sqrt(var);
        if (!(s.stddev(j) > 0.0)) {
            const std::string name = static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                                               : std::to_string(j);
            throw Error("standardization: column '" + name + "' is constant (stddev 0)");
        }
    }
    return s;
}

Matrix Standardization::apply(const Matrix& rows) const {
    if (rows.cols() != mean.size()) throw Error("standardization: column count mismatch");
    return (rows.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
}

Matrix Standardization::invert(const Matrix& rows) const {
    if (rows.cols() != mean.size()) throw Error("standardization: column count mismatch");
    return (rows.array().rowwise() * stddev.transpose().array()).rowwise() + mean.transpose().array();
}

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::subset(const std::vector<int>& rows) const {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int r = rows[k];
        if (r < 0 || r >= size()) throw Error("dataset: row index out of range");
        out.features.row(static_cast<Eigen::Index>(k)) = features.row(r);
        out.labels(static_cast<Eigen::Index>(k)) = labels(r);
    }
    out.feature_names = feature_names;
    out.standardization = standardization;
    out.scm_ref = scm_ref;
    return out;
}

void Dataset::validate() const {
    if (features.rows() != labels.size()) throw Error("dataset: feature and label counts differ");
    if (!feature_names.empty() && static_cast<int>(feature_names.size()) != dim()) {
        throw Error("dataset: one name per feature required");
    }
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels(i) != 0.0 && labels(i) != 1.0) throw Error("dataset: labels must be 0 or 1");
    }
}

Split split_indices(int n, double train_fraction, std::uint64_t seed) {
    if (n < 1) throw Error("split: need at least one row");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw Error("split: train fraction must lie in (0, 1]");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto cut = static_cast<std::size_t>(std::llround(train_fraction * n));
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') ++line;
                field += ch;
            }
            continue;
        }
        switch (ch) {
            case '"':
                if (field_started && !field.empty()) {
                    throw Error("csv: stray quote inside unquoted field on line " + std::to_string(line));
                }
                quoted = true;
                field_started = true;
                break;
            case ',':
                record.push_back(std::move(field));
                field.clear();
                field_started = false;
                break;
            case '\r':
                break;
            case '\n':
                record.push_back(std::move(field));
                field.clear();
                field_started = false;
                if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
                record.clear();
                ++line;
                break;
            default:
                field += ch;
                field_started = true;
        }
    }
    if (quoted) throw Error("csv: unterminated quoted field");
    if (field_started || !record.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    return records;
}

FeasibilitySpec feasibility_for_data(const nlohmann::json& j, const std::vector<std::string>& names,
                                     const std::optional<Standardization>& standardization, const Matrix& train_rows) {
    FeasibilitySpec spec = FeasibilitySpec::all_free(static_cast<int>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
        spec.features[i].name = names[i];
        spec.features[i].actionable = false;
    }
    if (!j.contains("features") || !j["features"].is_array()) {
        throw Error("actionability: expected a 'features' array");
    }
    for (const auto& rec : j["features"]) {
        const std::string name = rec.at("name").get<std::string>();
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw Error("actionability: unknown feature '" + name + "'");
        const auto col = static_cast<Eigen::Index>(it - names.begin());
        FeatureConstraint& c = spec.features[static_cast<std::size_t>(col)];
        c.actionable = rec.value("actionable", false);
        const std::string dir = rec.value("direction", std::string("free"));
        if (dir == "free") {
            c.direction = Direction::Free;
        } else if (dir == "increase-only" || dir == "increase") {
            c.direction = Direction::IncreaseOnly;
        } else if (dir == "decrease-only" || dir == "decrease") {
            c.direction = Direction::DecreaseOnly;
        } else {
            throw Error("actionability: unknown direction '" + dir + "' for '" + name + "'");
        }
        const auto bound = [&](const char* key, double fallback) -> double {
            if (!rec.contains(key) || rec[key].is_null()) return fallback;
            const auto& v = rec[key];
            if (v.is_string()) {
                const std::string s = v.get<std::string>();
                if (s == "train_max") return train_rows.col(col).maxCoeff();
                if (s == "train_min") return train_rows.col(col).minCoeff();
                throw Error("actionability: bad bound '" + s + "' for '" + name + "'");
            }
            const double raw = v.get<double>();
            if (!standardization) return raw;
            return (raw - standardization->mean(col)) / standardization->stddev(col);
        };
        c.min = bound("min", -std::numeric_limits<double>::infinity());
        c.max = bound("max", std::numeric_limits<double>::infinity());
    }
    spec.validate();
    return spec;
}

LoadedData load_csv(const std::filesystem::path& path, const CsvOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("csv: cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto records = parse_csv(buffer.str());
    if (records.size() < 2) throw Error("csv: need a header row and at least one data row");

    const std::vector<std::string>& header = records[0];
    const auto label_it = std::find(header.begin(), header.end(), options.label_column);
    if (label_it == header.end()) throw Error("csv: label column '" + options.label_column + "' not found");
    const auto label_col = static_cast<std::size_t>(label_it - header.begin());
    const std::size_t rows = records.size() - 1;

    std::vector<std::size_t> missing_rows;
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != header.size()) {
            throw Error("csv: row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                        " fields, expected " + std::to_string(header.size()));
        }
        if (std::any_of(records[r].begin(), records[r].end(), is_blank)) missing_rows.push_back(r);
    }
    if (!missing_rows.empty()) {
        std::string list;
        for (std::size_t k = 0; k < missing_rows.size(); ++k) {
            if (k) list += ", ";
            list += std::to_string(missing_rows[k]);
        }
        throw Error("csv: missing values in data rows " + list);
    }

    LoadedData out;
    Dataset& data = out.all;
    data.labels.resize(static_cast<Eigen::Index>(rows));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto v = parse_number(records[r + 1][label_col]);
        if (!v || (*v != 0.0 && *v != 1.0)) {
            throw Error("csv: non-binary label '" + records[r + 1][label_col] + "' in data row " + std::to_string(r + 1));
        }
        data.labels(static_cast<Eigen::Index>(r)) = *v;
    }

    std::vector<std::size_t> feature_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c != label_col) feature_cols.push_back(c);
    }
    Matrix raw(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(feature_cols.size()));
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
        const std::size_t c = feature_cols[k];
        data.feature_names.push_back(header[c]);
        bool numeric = true;
        for (std::size_t r = 0; r < rows && numeric; ++r) numeric = parse_number(records[r + 1][c]).has_value();
        if (numeric) {
            for (std::size_t r = 0; r < rows; ++r) {
                raw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = *parse_number(records[r + 1][c]);
            }
            continue;
        }
        // Categorical: code by sorted order of the distinct labels.
        std::set<std::string> distinct;
        for (std::size_t r = 0; r < rows; ++r) distinct.insert(records[r + 1][c]);
        std::vector<std::string> levels(distinct.begin(), distinct.end());
        std::map<std::string, double> code;
        for (std::size_t l = 0; l < levels.size(); ++l) code[levels[l]] = static_cast<double>(l);
        for (std::size_t r = 0; r < rows; ++r) {
            raw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = code[records[r + 1][c]];
        }
        out.categories.emplace_back(header[c], std::move(levels));
    }

    out.split = split_indices(static_cast<int>(rows), options.train_fraction, options.seed);
    Matrix train_raw(static_cast<Eigen::Index>(out.split.train.size()), raw.cols());
    for (std::size_t k = 0; k < out.split.train.size(); ++k) {
        train_raw.row(static_cast<Eigen::Index>(k)) = raw.row(out.split.train[k]);
    }
    const Standardization stdz = options.standardization ? *options.standardization
                                                         : Standardization::fit(train_raw, data.feature_names);
    data.standardization = stdz;
    data.features = stdz.apply(raw);

    if (options.actionability_path) {
        out.feasibility = feasibility_for_data(io::read_json(*options.actionability_path), data.feature_names, stdz,
                                               stdz.apply(train_raw));
    } else {
        out.feasibility = FeasibilitySpec::all_free(data.dim());
        for (std::size_t i = 0; i < data.feature_names.size(); ++i) {
            out.feasibility.features[i].name = data.feature_names[i];
        }
    }
    data.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset synthesize(const Scm& scm, int n_samples, const Labeler& labeler, std::uint64_t seed) {
    if (n_samples < 1) throw Error("synthesize: n_samples must be >= 1");
    if (labeler.weights.size() != scm.size()) throw Error("synthesize: labeler weights have wrong length");
    if (!(labeler.noise_rate >= 0.0 && labeler.noise_rate <= 1.0)) {
        throw Error("synthesize: noise_rate must lie in [0, 1]");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    Dataset data;
    data.features.resize(n_samples, scm.size());
    data.labels.resize(n_samples);
    data.feature_names = scm.feature_names();
    for (int r = 0; r < n_samples; ++r) {
        Vector u(scm.size());
        for (int i = 0; i < scm.size(); ++i) u(i) = normal(rng);
        const Vector x = scm.reconstruct(u);
        data.features.row(r) = x.transpose();
        double y = labeler.weights.dot(x) + labeler.bias >= 0.0 ? 1.0 : 0.0;
        if (uniform(rng) < labeler.noise_rate) y = 1.0 - y;
        data.labels(r) = y;
    }
    return data;
}

nlohmann::json standardization_to_json(const Standardization& s) {
    return nlohmann::json{{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                          {"stddev", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())}};
}

Standardization standardization_from_json(const nlohmann::json& j) {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto stddev = j.at("stddev").get<std::vector<double>>();
    if (mean.size() != stddev.size()) throw Error("standardization: mean and stddev lengths differ");
    Standardization s;
    s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.stddev = Eigen::Map<const Vector>(stddev.data(), static_cast<Eigen::Index>(stddev.size()));
    return s;
}

nlohmann::json manifest_to_json(const Dataset& data, const Split& split, std::uint64_t seed) {
    nlohmann::json j;
    j["rows"] = data.size();
    j["feature_names"] = data.feature_names;
    j["seed"] = seed;
    j["train_rows"] = split.train;
    j["test_rows"] = split.test;
    j["standardization"] = data.standardization ? standardization_to_json(*data.standardization) : nlohmann::json();
    if (data.scm_ref) j["scm"] = *data.scm_ref;
    return j;
}

}  // namespace robrec
