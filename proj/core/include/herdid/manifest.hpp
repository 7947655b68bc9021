#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "herdid/types.hpp"

namespace herdid {

struct ManifestEntry {
  std::string image_id;
  std::string uri;
  std::string individual_id;
  Split split = Split::kUnassigned;
  std::optional<BoundingBox> box;
  std::optional<std::string> name;
  std::optional<int> capture_year;
};

/// Labeled image inventory. Entries keep file order; image ids are unique.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  /// Validates ids and boxes; throws Error on violation.
  explicit DatasetManifest(std::vector<ManifestEntry> entries,
                           std::filesystem::path base_dir = {});

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Directory that relative uris resolve against.
  const std::filesystem::path& base_dir() const { return base_dir_; }
  std::filesystem::path resolve_uri(const ManifestEntry& entry) const;

  const ManifestEntry& find(const std::string& image_id) const;
  bool contains(const std::string& image_id) const { return index_.count(image_id) != 0; }

  /// Sorted individual ids.
  std::vector<std::string> individuals() const;
  /// Image count per individual.
  std::map<std::string, int> class_histogram() const;
  /// Entries of one split, in manifest order.
  std::vector<ManifestEntry> subset(Split split) const;

  bool fully_unassigned() const;

 private:
  std::vector<ManifestEntry> entries_;
  std::filesystem::path base_dir_;
  std::map<std::string, std::size_t> index_;
};

/// Parses the JSON-lines manifest. Parse errors carry the 1-based line.
DatasetManifest parse_manifest(std::istream& in, std::filesystem::path base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);

void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// round-half-up(test_fraction * n), clamped so that at least one image
/// remains in train.
int stratified_test_count(int class_size, double test_fraction);

/// Per-class seeded split; every entry must be unassigned.
DatasetManifest stratified_split(const DatasetManifest& manifest, double test_fraction,
                                 std::uint64_t seed);

}  // namespace herdid
