#include "herdid/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "herdid/error.hpp"
#include "herdid/json.hpp"
#include "herdid/random.hpp"

namespace herdid {

namespace {

std::string line_prefix(std::size_t line) { return "manifest line " + std::to_string(line) + ": "; }

ManifestEntry parse_entry(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw Error(ErrorCode::kParseError, line_prefix(line) + "expected a JSON object");
  ManifestEntry e;
  try {
    e.image_id = j.at("image_id").get<std::string>();
    e.uri = j.value("uri", std::string());
    e.individual_id = j.at("individual_id").get<std::string>();
    e.split = split_from_string(j.value("split", std::string("unassigned")));
    if (j.contains("box") && !j.at("box").is_null()) e.box = j.at("box").get<BoundingBox>();
    if (j.contains("name")) e.name = j.at("name").get<std::string>();
    if (j.contains("capture_year")) e.capture_year = j.at("capture_year").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, line_prefix(line) + ex.what());
  } catch (const Error& ex) {
    throw Error(ex.code(), line_prefix(line) + ex.what());
  }
  if (e.image_id.empty()) throw Error(ErrorCode::kParseError, line_prefix(line) + "empty image_id");
  if (e.individual_id.empty()) {
    throw Error(ErrorCode::kParseError, line_prefix(line) + "empty individual_id");
  }
  if (e.box) e.box->validate(line_prefix(line) + "box of '" + e.image_id + "'");
  return e;
}

}  // namespace

DatasetManifest::DatasetManifest(std::vector<ManifestEntry> entries, std::filesystem::path base_dir)
    : entries_(std::move(entries)), base_dir_(std::move(base_dir)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.image_id.empty() || e.individual_id.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "manifest entry with empty image or individual id");
    }
    if (!index_.emplace(e.image_id, i).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate image id '" + e.image_id + "'");
    }
    if (e.box) e.box->validate("box of '" + e.image_id + "'");
  }
}

std::filesystem::path DatasetManifest::resolve_uri(const ManifestEntry& entry) const {
  std::filesystem::path p(entry.uri);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

const ManifestEntry& DatasetManifest::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "image '" + image_id + "' not in manifest");
  return entries_[it->second];
}

std::vector<std::string> DatasetManifest::individuals() const {
  std::vector<std::string> ids;
  for (const auto& [id, count] : class_histogram()) ids.push_back(id);
  return ids;
}

std::map<std::string, int> DatasetManifest::class_histogram() const {
  std::map<std::string, int> counts;
  for (const auto& e : entries_) ++counts[e.individual_id];
  return counts;
}

std::vector<ManifestEntry> DatasetManifest::subset(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries_) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

bool DatasetManifest::fully_unassigned() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const ManifestEntry& e) { return e.split == Split::kUnassigned; });
}

DatasetManifest parse_manifest(std::istream& in, std::filesystem::path base_dir) {
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::size_t> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
      throw Error(ErrorCode::kParseError, line_prefix(line) + ex.what());
    }
    ManifestEntry e = parse_entry(j, line);
    if (auto [it, inserted] = seen.emplace(e.image_id, line); !inserted) {
      throw Error(ErrorCode::kDuplicateId, line_prefix(line) + "duplicate image id '" + e.image_id +
                                               "' (first seen on line " + std::to_string(it->second) + ")");
    }
    entries.push_back(std::move(e));
  }
  return DatasetManifest(std::move(entries), std::move(base_dir));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  for (const auto& e : manifest.entries()) {
    nlohmann::json j{{"image_id", e.image_id},
                     {"uri", e.uri},
                     {"individual_id", e.individual_id},
                     {"split", to_string(e.split)}};
    if (e.box) {
      nlohmann::json box{{"x", e.box->x}, {"y", e.box->y}, {"w", e.box->w}, {"h", e.box->h}};
      if (e.box->confidence != 1.0) box["confidence"] = e.box->confidence;
      if (e.box->source == BoxSource::kDetector) box["source"] = "detector";
      j["box"] = box;
    }
    if (e.name) j["name"] = *e.name;
    if (e.capture_year) j["capture_year"] = *e.capture_year;
    out << j.dump() << '\n';
  }
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest " + path.string());
  write_manifest(out, manifest);
}

int stratified_test_count(int class_size, double test_fraction) {
  if (class_size <= 1) return 0;
  const int rounded = static_cast<int>(std::floor(test_fraction * class_size + 0.5));
  return std::clamp(rounded, 0, class_size - 1);
}

DatasetManifest stratified_split(const DatasetManifest& manifest, double test_fraction,
                                 std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "test_fraction must lie in (0, 1)");
  }
  if (!manifest.fully_unassigned()) {
    throw Error(ErrorCode::kAlreadySplit, "manifest already has split assignments");
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    by_class[manifest.entries()[i].individual_id].push_back(i);
  }
  std::vector<ManifestEntry> entries = manifest.entries();
  for (auto& [individual, indices] : by_class) {
    // Sort by image id so the assignment does not depend on file order.
    std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
      return entries[a].image_id < entries[b].image_id;
    });
    std::mt19937_64 rng(mix_seed(seed, hash_string(individual)));
    fisher_yates(std::span<std::size_t>(indices), rng);
    const int n_test = stratified_test_count(static_cast<int>(indices.size()), test_fraction);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      entries[indices[k]].split = static_cast<int>(k) < n_test ? Split::kTest : Split::kTrain;
    }
  }
  return DatasetManifest(std::move(entries), manifest.base_dir());
}

}  // namespace herdid
