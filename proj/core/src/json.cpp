#include "herdid/json.hpp"

namespace herdid {

void to_json(nlohmann::json& j, const BoundingBox& box) {
  j = nlohmann::json{{"x", box.x},
                     {"y", box.y},
                     {"w", box.w},
                     {"h", box.h},
                     {"confidence", box.confidence},
                     {"source", box.source == BoxSource::kDetector ? "detector" : "user"}};
}

void from_json(const nlohmann::json& j, BoundingBox& box) {
  box.x = j.at("x").get<double>();
  box.y = j.at("y").get<double>();
  box.w = j.at("w").get<double>();
  box.h = j.at("h").get<double>();
  if (j.contains("confidence")) {
    box.confidence = j.at("confidence").get<double>();
  } else if (j.contains("score")) {
    box.confidence = j.at("score").get<double>();
  } else {
    box.confidence = 1.0;
  }
  box.source = j.value("source", std::string("user")) == "detector" ? BoxSource::kDetector
                                                                   : BoxSource::kUser;
}

void to_json(nlohmann::json& j, const FeatureProvenance& p) {
  j = nlohmann::json{{"layer_name", p.layer_name},
                     {"input_resolution", p.input_resolution},
                     {"pool_size", p.pool_size ? nlohmann::json(*p.pool_size) : nlohmann::json()},
                     {"flipped", p.flipped},
                     {"pca_applied", p.pca_applied}};
}

void from_json(const nlohmann::json& j, FeatureProvenance& p) {
  p.layer_name = j.at("layer_name").get<std::string>();
  p.input_resolution = j.at("input_resolution").get<int>();
  if (j.contains("pool_size") && !j.at("pool_size").is_null()) {
    p.pool_size = j.at("pool_size").get<int>();
  } else {
    p.pool_size.reset();
  }
  p.flipped = j.value("flipped", false);
  p.pca_applied = j.value("pca_applied", false);
}

void to_json(nlohmann::json& j, const Individual& individual) {
  j = nlohmann::json{{"id", individual.id},
                     {"name", individual.name},
                     {"representative_image_ids", individual.representative_image_ids}};
}

void from_json(const nlohmann::json& j, Individual& individual) {
  individual.id = j.at("id").get<std::string>();
  individual.name = j.value("name", individual.id);
  individual.representative_image_ids =
      j.value("representative_image_ids", std::vector<std::string>{});
}

void to_json(nlohmann::json& j, const ImageRecord& record) {
  j = nlohmann::json{{"id", record.id}, {"uri", record.uri}};
  if (record.individual_id) j["individual_id"] = *record.individual_id;
  if (record.capture_year) j["capture_year"] = *record.capture_year;
}

void from_json(const nlohmann::json& j, ImageRecord& record) {
  record.id = j.at("id").get<std::string>();
  record.uri = j.value("uri", std::string());
  if (j.contains("individual_id")) record.individual_id = j.at("individual_id").get<std::string>();
  if (j.contains("capture_year")) record.capture_year = j.at("capture_year").get<int>();
}

}  // namespace herdid
