#include "herdid/feature_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>

#include "herdid/error.hpp"
#include "herdid/fs_util.hpp"
#include "herdid/json.hpp"

namespace herdid {

namespace {

constexpr const char* kIndexFile = "index.json";
constexpr const char* kBlobFile = "features.bin";

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void encode_le(const std::vector<float>& values, std::string& out) {
  out.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
}

std::vector<float> decode_le(const std::string& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

FeatureProvenance header_of(FeatureProvenance p) {
  p.flipped = false;
  return p;
}

}  // namespace

std::string feature_store_dirname(const FeatureProvenance& p) {
  std::string name = p.layer_name + "-r" + std::to_string(p.input_resolution) + "-p" +
                     (p.pool_size ? std::to_string(*p.pool_size) : std::string("none"));
  if (p.pca_applied) name += "-pca";
  return name;
}

FeatureStore::FeatureStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  load_index();
}

FeatureStore::~FeatureStore() {
  try {
    flush();
  } catch (...) {
  }
}

void FeatureStore::load_index() {
  const auto index_path = dir_ / kIndexFile;
  const auto blob_path = dir_ / kBlobFile;
  if (!std::filesystem::exists(index_path)) {
    // A blob without an index holds nothing reachable; start over.
    std::ofstream(blob_path, std::ios::binary | std::ios::trunc);
    return;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(index_path));
    if (j.contains("provenance") && !j.at("provenance").is_null()) {
      provenance_ = j.at("provenance").get<FeatureProvenance>();
      dim_ = j.at("dim").get<std::size_t>();
    }
    for (const auto& e : j.at("entries")) {
      Slot slot;
      // offset and length are byte counts in the index.
      slot.offset = e.at("offset").get<std::uint64_t>() / 4;
      slot.length = e.at("length").get<std::uint64_t>() / 4;
      slots_[{e.at("image_id").get<std::string>(), e.at("flipped").get<bool>()}] = slot;
      next_offset_ = std::max(next_offset_, slot.offset + slot.length);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kFormatError, "corrupt feature index " + index_path.string() + ": " + ex.what());
  }
  // Blobs appended after the last index flush are unreachable; drop them.
  const auto blob_size = std::filesystem::exists(blob_path) ? std::filesystem::file_size(blob_path) : 0;
  if (blob_size < next_offset_ * 4) {
    throw Error(ErrorCode::kFormatError, "feature blob shorter than its index in " + dir_.string());
  }
  if (blob_size > next_offset_ * 4) std::filesystem::resize_file(blob_path, next_offset_ * 4);
}

void FeatureStore::put(const std::string& image_id, bool flipped, const FeatureVector& v) {
  if (v.dim() == 0) throw Error(ErrorCode::kInvalidArgument, "cannot store an empty feature vector");
  v.check_finite();
  std::vector<float> values(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) {
    values[i] = static_cast<float>(v.values[i]);
    if (static_cast<double>(values[i]) != v.values[i]) {
      throw Error(ErrorCode::kInvalidArgument,
                  "feature value not representable as float32 (image '" + image_id + "')");
    }
  }

  std::unique_lock lock(mutex_);
  const FeatureProvenance header = header_of(v.provenance);
  if (provenance_) {
    if (!(header == *provenance_) || v.dim() != *dim_) {
      throw Error(ErrorCode::kProvenanceConflict,
                  "vector for '" + image_id + "' (dim " + std::to_string(v.dim()) + ", " +
                      feature_store_dirname(header) + ") conflicts with store (dim " +
                      std::to_string(*dim_) + ", " + feature_store_dirname(*provenance_) + ")");
    }
  } else {
    provenance_ = header;
    dim_ = v.dim();
  }

  Slot slot;
  slot.length = values.size();
  if (persistent()) {
    std::string bytes;
    encode_le(values, bytes);
    std::ofstream out(dir_ / kBlobFile, std::ios::binary | std::ios::app);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "cannot append to feature blob in " + dir_.string());
    slot.offset = next_offset_;
    next_offset_ += slot.length;
  } else {
    slot.values = std::move(values);
  }
  slots_[{image_id, flipped}] = std::move(slot);
  dirty_ = true;
}

FeatureVector FeatureStore::get(const std::string& image_id, bool flipped) const {
  std::shared_lock lock(mutex_);
  auto it = slots_.find({image_id, flipped});
  if (it == slots_.end()) {
    throw Error(ErrorCode::kNotFound, "no stored features for '" + image_id + "'" +
                                          (flipped ? " (flipped)" : ""));
  }
  std::vector<float> values;
  if (persistent()) {
    std::ifstream in(dir_ / kBlobFile, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(it->second.offset * 4));
    std::string bytes(it->second.length * 4, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw Error(ErrorCode::kIoError, "short read from feature blob in " + dir_.string());
    values = decode_le(bytes);
  } else {
    values = it->second.values;
  }
  FeatureVector v;
  v.values.assign(values.begin(), values.end());
  v.provenance = *provenance_;
  v.provenance.flipped = flipped;
  return v;
}

bool FeatureStore::contains(const std::string& image_id, bool flipped) const {
  std::shared_lock lock(mutex_);
  return slots_.count({image_id, flipped}) != 0;
}

std::size_t FeatureStore::size() const {
  std::shared_lock lock(mutex_);
  return slots_.size();
}

std::optional<FeatureProvenance> FeatureStore::provenance() const {
  std::shared_lock lock(mutex_);
  return provenance_;
}

std::optional<std::size_t> FeatureStore::dim() const {
  std::shared_lock lock(mutex_);
  return dim_;
}

void FeatureStore::flush() {
  std::unique_lock lock(mutex_);
  flush_locked();
}

void FeatureStore::flush_locked() {
  if (!persistent() || !dirty_) return;
  nlohmann::json j;
  j["format_version"] = 1;
  j["value_type"] = "float32-le";
  j["provenance"] = provenance_ ? nlohmann::json(*provenance_) : nlohmann::json();
  j["dim"] = dim_ ? nlohmann::json(*dim_) : nlohmann::json();
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& [key, slot] : slots_) {
    entries.push_back({{"image_id", key.first},
                       {"flipped", key.second},
                       {"offset", slot.offset * 4},
                       {"length", slot.length * 4},
                       {"dim", slot.length}});
  }
  atomic_write_file(dir_ / kIndexFile, j.dump(1));
  dirty_ = false;
}

}  // namespace herdid
