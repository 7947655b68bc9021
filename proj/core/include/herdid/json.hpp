#pragma once

// nlohmann::json adapters for the shared domain types.

#include <nlohmann/json.hpp>

#include "herdid/types.hpp"

namespace herdid {

/// {"x":..,"y":..,"w":..,"h":..} plus "confidence" and "source".
void to_json(nlohmann::json& j, const BoundingBox& box);
/// Accepts x/y/w/h and optionally "confidence" or "score". Does not
/// validate invariants.
void from_json(const nlohmann::json& j, BoundingBox& box);

void to_json(nlohmann::json& j, const FeatureProvenance& p);
void from_json(const nlohmann::json& j, FeatureProvenance& p);

void to_json(nlohmann::json& j, const Individual& individual);
void from_json(const nlohmann::json& j, Individual& individual);

void to_json(nlohmann::json& j, const ImageRecord& record);
void from_json(const nlohmann::json& j, ImageRecord& record);

}  // namespace herdid
