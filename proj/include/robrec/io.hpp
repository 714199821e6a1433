#pragma once

// JSON (de)serialization for the on-disk formats: SCM definitions, models,
// feasibility specs and dataset manifests.

#include "robrec/model.hpp"
#include "robrec/recourse.hpp"
#include "robrec/scm.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace robrec::io {

using Json = nlohmann::json;

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);

Expr expr_from_json(const Json& j);
Json expr_to_json(const Expr& e);

Scm scm_from_json(const Json& j);
Json scm_to_json(const Scm& scm);
Scm load_scm(const std::filesystem::path& path);

Classifier classifier_from_json(const Json& j);
Json classifier_to_json(const Classifier& c);
Classifier load_classifier(const std::filesystem::path& path);
void save_classifier(const std::filesystem::path& path, const Classifier& c);

FeasibilitySpec feasibility_from_json(const Json& j);
Json feasibility_to_json(const FeasibilitySpec& spec);
FeasibilitySpec load_feasibility(const std::filesystem::path& path);

}  // namespace robrec::io
