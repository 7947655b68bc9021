#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "herdid/types.hpp"

namespace herdid {

/// Cache of extracted feature vectors keyed by (image_id, flipped).
///
/// On disk a store is a directory holding `features.bin` (concatenated
/// little-endian float32 blobs) and `index.json` (key -> offset/length/dim
/// plus the store-wide provenance header). Values must be exactly
/// representable as float32 so that get() returns them bit-exactly.
///
/// Concurrent get() calls are safe alongside one writer.
class FeatureStore {
 public:
  /// In-memory store (nothing persisted).
  FeatureStore() = default;
  /// Opens or creates a store directory.
  explicit FeatureStore(std::filesystem::path dir);
  ~FeatureStore();

  FeatureStore(const FeatureStore&) = delete;
  FeatureStore& operator=(const FeatureStore&) = delete;

  /// Throws Error(kProvenanceConflict) when dim or provenance (ignoring the
  /// flip flag) disagree with existing contents.
  void put(const std::string& image_id, bool flipped, const FeatureVector& v);
  /// Throws Error(kNotFound) for a missing key.
  FeatureVector get(const std::string& image_id, bool flipped) const;
  bool contains(const std::string& image_id, bool flipped) const;
  std::size_t size() const;

  /// Provenance header (flip flag cleared) once the first vector is stored.
  std::optional<FeatureProvenance> provenance() const;
  std::optional<std::size_t> dim() const;

  /// Persists index.json atomically. No-op for in-memory stores.
  void flush();

  bool persistent() const { return !dir_.empty(); }
  const std::filesystem::path& directory() const { return dir_; }

 private:
  using Key = std::pair<std::string, bool>;
  struct Slot {
    std::uint64_t offset = 0;  // in floats
    std::uint64_t length = 0;
    std::vector<float> values;  // populated for in-memory stores only
  };

  void load_index();
  void flush_locked();

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<Key, Slot> slots_;
  std::optional<FeatureProvenance> provenance_;
  std::optional<std::size_t> dim_;
  std::uint64_t next_offset_ = 0;
  bool dirty_ = false;
};

/// Directory name for a store holding vectors of `p`, e.g.
/// "activation_40-r512-p6".
std::string feature_store_dirname(const FeatureProvenance& p);

}  // namespace herdid
