#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace herdid {

enum class BoxSource { kDetector, kUser };

/// Axis-aligned box in fractions of the image width/height.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double confidence = 1.0;
  BoxSource source = BoxSource::kUser;

  double area() const { return w * h; }
  bool valid() const;
  /// Throws Error(kInvalidBox) naming `what` when the invariants fail.
  void validate(const std::string& what = "box") const;

  bool same_geometry(const BoundingBox& other) const {
    return x == other.x && y == other.y && w == other.w && h == other.h;
  }
};

/// The whole image as a box.
inline BoundingBox full_image_box() { return {0.0, 0.0, 1.0, 1.0, 1.0, BoxSource::kUser}; }

struct Individual {
  std::string id;
  std::string name;
  std::vector<std::string> representative_image_ids;  // at most 5
};

struct ImageRecord {
  std::string id;
  std::string uri;
  std::optional<std::string> individual_id;
  std::optional<int> capture_year;
};

enum class Split { kUnassigned, kTrain, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

/// Where a feature vector came from. Vectors fed to one classifier must
/// agree on everything except `flipped`.
struct FeatureProvenance {
  std::string layer_name;
  int input_resolution = 0;
  std::optional<int> pool_size;
  bool flipped = false;
  bool pca_applied = false;

  /// Equality ignoring the flip flag.
  bool compatible_with(const FeatureProvenance& other) const {
    return layer_name == other.layer_name && input_resolution == other.input_resolution &&
           pool_size == other.pool_size && pca_applied == other.pca_applied;
  }
  bool operator==(const FeatureProvenance&) const = default;
};

struct FeatureVector {
  std::vector<double> values;
  FeatureProvenance provenance;

  std::size_t dim() const { return values.size(); }
  /// Throws Error(kNonFiniteValue) if any value is NaN or infinite.
  void check_finite() const;
};

/// C x H x W activations, channel-major then row-major spatial.
class ActivationTensor {
 public:
  ActivationTensor() = default;
  ActivationTensor(int channels, int height, int width);
  ActivationTensor(int channels, int height, int width, std::vector<float> values);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  float at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  float& at(int c, int y, int x) { return values_[index(c, y, x)]; }

  const std::vector<float>& values() const { return values_; }
  std::vector<float>& values() { return values_; }

  bool all_finite() const;
  bool operator==(const ActivationTensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

}  // namespace herdid
