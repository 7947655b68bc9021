#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "herdid/image.hpp"
#include "herdid/types.hpp"

namespace herdid {

/// Per-channel input normalization expected by a network.
struct Normalization {
  std::string name;          // "caffe", "torch" or "identity"
  bool bgr = false;          // channel order of the network input
  double scale = 1.0;        // pixel value multiplier applied first
  std::array<double, 3> mean{0.0, 0.0, 0.0};  // in network channel order
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  /// Keras ResNet50 ("caffe"): BGR, mean subtraction on the 0..255 scale.
  static Normalization caffe();
  /// torchvision: RGB, x/255 then ImageNet mean/std.
  static Normalization torch();
  static Normalization identity();
  static Normalization by_name(const std::string& name);
};

struct BackendConfig {
  std::string model_uri;
  std::string layer_name = "activation_40";
  int input_resolution = 512;
  /// Fraction of the box size added on every side before cropping.
  double crop_padding = 0.0;
  Normalization normalization = Normalization::caffe();
};

/// A preprocessed crop: 3 x R x R, network channel order.
using ImageTensor = ActivationTensor;

/// Crops `box` (expanded by `padding`, clamped to the image), stretches it
/// to resolution x resolution with bilinear interpolation, mirrors it when
/// `flipped`, and applies `norm`.
ImageTensor preprocess_crop(const RgbImage& image, const BoundingBox& box, int resolution,
                            bool flipped, double padding, const Normalization& norm);

/// Mirrors every channel left-to-right.
ImageTensor flip_horizontal(const ImageTensor& t);

struct LayerInfo {
  std::string name;
  int channels = 0;
  int height = 0;
  int width = 0;
  bool operator==(const LayerInfo&) const = default;
};

/// Produces activation tensors of one tapped layer for head crops.
/// Implementations are safe to call from multiple threads.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual const BackendConfig& config() const = 0;
  /// Layers with their shapes at the configured input resolution.
  virtual std::vector<LayerInfo> list_layers() const = 0;
  virtual ActivationTensor extract(const RgbImage& image, const BoundingBox& box,
                                   bool flipped) const = 0;
  /// Same loaded model, different tap/resolution.
  virtual std::shared_ptr<const EmbeddingBackend> with_tap(const std::string& layer_name,
                                                           int input_resolution) const = 0;
  virtual std::string kind() const = 0;

  bool has_layer(const std::string& name) const;
  LayerInfo layer_info(const std::string& name) const;
};

/// Deterministic CPU backend for tests and CI. Its two layers mimic the
/// stride-16 and stride-32 taps of the real network with few channels:
/// each output cell mixes block statistics of the preprocessed crop. The
/// block reduction is mirror-symmetric, so a flipped crop yields exactly
/// the mirrored activations whenever the resolution is a multiple of 32.
class StubBackend final : public EmbeddingBackend {
 public:
  explicit StubBackend(BackendConfig config);

  const BackendConfig& config() const override { return config_; }
  std::vector<LayerInfo> list_layers() const override;
  ActivationTensor extract(const RgbImage& image, const BoundingBox& box, bool flipped) const override;
  std::shared_ptr<const EmbeddingBackend> with_tap(const std::string& layer_name,
                                                   int input_resolution) const override;
  std::string kind() const override { return "stub"; }

  /// The activation function of the stub applied to an already
  /// preprocessed crop.
  ActivationTensor activations(const ImageTensor& crop) const;

  static constexpr int kFineStride = 16;
  static constexpr int kCoarseStride = 32;

 private:
  BackendConfig config_;
};

/// Runs a network stored in ONNX format through OpenCV's dnn module and
/// returns a named intermediate output.
class OnnxBackend final : public EmbeddingBackend {
 public:
  /// Loads config.model_uri. Throws Error(kBackendFailure) on load failure
  /// and Error(kUnknownLayer) if the configured layer is missing.
  explicit OnnxBackend(BackendConfig config);
  ~OnnxBackend() override;

  const BackendConfig& config() const override { return config_; }
  std::vector<LayerInfo> list_layers() const override;
  ActivationTensor extract(const RgbImage& image, const BoundingBox& box, bool flipped) const override;
  std::shared_ptr<const EmbeddingBackend> with_tap(const std::string& layer_name,
                                                   int input_resolution) const override;
  std::string kind() const override { return "onnx"; }

  /// Forward pass on a ready-made input tensor.
  ActivationTensor run(const ImageTensor& input) const;

  struct Net;

 private:
  OnnxBackend(BackendConfig config, std::shared_ptr<Net> net);
  void check_layer() const;

  BackendConfig config_;
  std::shared_ptr<Net> net_;
};

/// kind is "stub" or "onnx".
std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const std::string& kind,
                                                               const BackendConfig& config);

}  // namespace herdid
