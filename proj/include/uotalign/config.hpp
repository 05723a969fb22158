#pragma once

#include <filesystem>
#include <string_view>

#include "json.hpp"
#include "uotalign/classifier.hpp"
#include "uotalign/trainer.hpp"

namespace uotalign {

// Everything a run needs. The JSON form has the sections "train",
// "classifier", "solver" and "model", each optional, with field names equal
// to the struct members. Unknown keys are errors; rho accepts "inf".
struct RunConfig {
    TrainConfig train;
    ClassifierConfig classifier;
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config_text(std::string_view text);
RunConfig read_config(const std::filesystem::path& path);

nlohmann::json config_to_json(const RunConfig& cfg);

// Finite values as numbers, infinity as "inf".
nlohmann::json rho_to_json(double rho);
double rho_from_json(const nlohmann::json& value, std::string_view key);

std::string distance_name(DistanceKind kind);
DistanceKind parse_distance(std::string_view name);

}  // namespace uotalign
