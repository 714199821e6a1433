#pragma once

// Datasets: CSV ingestion with train-split standardization, actionability
// configs, and labeled populations sampled from an SCM.

#include "robrec/recourse.hpp"
#include "robrec/scm.hpp"
#include "robrec/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace robrec {

/// Per-feature z-scoring: (raw - mean) / stddev.
struct Standardization {
    Vector mean;
    Vector stddev;

    /// Fits on the given rows; a constant column is an error naming it.
    static Standardization fit(const Matrix& rows, const std::vector<std::string>& names);
    [[nodiscard]] Matrix apply(const Matrix& rows) const;
    [[nodiscard]] Matrix invert(const Matrix& rows) const;
};

struct Dataset {
    Matrix features;  // one row per individual
    Vector labels;    // 0/1
    std::vector<std::string> feature_names;
    std::optional<Standardization> standardization;
    std::optional<std::string> scm_ref;

    [[nodiscard]] int size() const { return static_cast<int>(features.rows()); }
    [[nodiscard]] int dim() const { return static_cast<int>(features.cols()); }
    [[nodiscard]] Dataset subset(const std::vector<int>& rows) const;
    void validate() const;
};

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};

/// Seeded shuffle then the first round(fraction * n) indices train; both
/// halves are returned sorted.
Split split_indices(int n, double train_fraction, std::uint64_t seed);

/// RFC 4180 records (quoted fields, doubled quotes, CRLF or LF).
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

struct CsvOptions {
    std::string label_column;
    std::optional<std::filesystem::path> actionability_path;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    /// Reuse stored parameters instead of fitting on the train split.
    std::optional<Standardization> standardization;
};

struct LoadedData {
    Dataset all;  // standardized, original row order
    Split split;
    FeasibilitySpec feasibility;
    /// Non-numeric columns: category labels in code order.
    std::vector<std::pair<std::string, std::vector<std::string>>> categories;

    [[nodiscard]] Dataset train() const { return all.subset(split.train); }
    [[nodiscard]] Dataset test() const { return all.subset(split.test); }
};

LoadedData load_csv(const std::filesystem::path& path, const CsvOptions& options);

/// Actionability JSON ({"features": [{name, actionable, direction, min, max}]})
/// for raw-unit data; bounds are mapped through `standardization` and the
/// strings "train_min" / "train_max" resolve to the extremes of `train_rows`
/// (already in standardized units).
FeasibilitySpec feasibility_for_data(const nlohmann::json& j, const std::vector<std::string>& names,
                                     const std::optional<Standardization>& standardization, const Matrix& train_rows);

/// y = 1{<weights, x> + bias >= 0}, then flipped with probability noise_rate.
struct Labeler {
    Vector weights;
    double bias = 0.0;
    double noise_rate = 0.0;
};

/// u ~ N(0, I), x = S(u), labels from `labeler`. Deterministic given seed.
Dataset synthesize(const Scm& scm, int n_samples, const Labeler& labeler, std::uint64_t seed);

nlohmann::json manifest_to_json(const Dataset& data, const Split& split, std::uint64_t seed);
Standardization standardization_from_json(const nlohmann::json& j);
nlohmann::json standardization_to_json(const Standardization& s);

}  // namespace robrec
