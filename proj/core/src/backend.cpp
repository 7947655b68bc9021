#include "herdid/backend.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "herdid/error.hpp"
#include "herdid/random.hpp"

namespace herdid {

Normalization Normalization::caffe() {
  return {"caffe", true, 1.0, {103.939, 116.779, 123.68}, {1.0, 1.0, 1.0}};
}

Normalization Normalization::torch() {
  return {"torch", false, 1.0 / 255.0, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
}

Normalization Normalization::identity() { return {"identity", false, 1.0, {0, 0, 0}, {1, 1, 1}}; }

Normalization Normalization::by_name(const std::string& name) {
  if (name == "caffe") return caffe();
  if (name == "torch") return torch();
  if (name == "identity") return identity();
  throw Error(ErrorCode::kInvalidArgument, "unknown normalization '" + name + "'");
}

ImageTensor preprocess_crop(const RgbImage& image, const BoundingBox& box, int resolution,
                            bool flipped, double padding, const Normalization& norm) {
  if (image.empty()) throw Error(ErrorCode::kUndecodableImage, "empty image");
  box.validate();
  if (resolution <= 0) throw Error(ErrorCode::kInvalidArgument, "resolution must be positive");
  if (padding < 0.0) throw Error(ErrorCode::kInvalidArgument, "crop padding must be non-negative");

  const double x0n = std::max(0.0, box.x - padding * box.w);
  const double y0n = std::max(0.0, box.y - padding * box.h);
  const double x1n = std::min(1.0, box.x + box.w + padding * box.w);
  const double y1n = std::min(1.0, box.y + box.h + padding * box.h);
  const double left = x0n * image.width;
  const double top = y0n * image.height;
  const double step_x = (x1n - x0n) * image.width / resolution;
  const double step_y = (y1n - y0n) * image.height / resolution;

  // Precomputed source taps per output column/row.
  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](double origin, double step, int n, int limit) {
    std::vector<Tap> out(n);
    for (int u = 0; u < n; ++u) {
      double s = origin + (u + 0.5) * step - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
      const int i0 = static_cast<int>(std::floor(s));
      out[u] = {i0, std::min(i0 + 1, limit - 1), s - i0};
    }
    return out;
  };
  const auto xs = taps(left, step_x, resolution, image.width);
  const auto ys = taps(top, step_y, resolution, image.height);

  ImageTensor out(3, resolution, resolution);
  for (int v = 0; v < resolution; ++v) {
    const Tap& ty = ys[v];
    for (int u = 0; u < resolution; ++u) {
      const Tap& tx = xs[u];
      const int dst_x = flipped ? resolution - 1 - u : u;
      for (int c = 0; c < 3; ++c) {
        const double p00 = image.at(tx.i0, ty.i0, c);
        const double p01 = image.at(tx.i1, ty.i0, c);
        const double p10 = image.at(tx.i0, ty.i1, c);
        const double p11 = image.at(tx.i1, ty.i1, c);
        const double top_row = p00 + (p01 - p00) * tx.f;
        const double bottom_row = p10 + (p11 - p10) * tx.f;
        const double value = top_row + (bottom_row - top_row) * ty.f;
        const int net_c = norm.bgr ? 2 - c : c;
        out.at(net_c, v, dst_x) =
            static_cast<float>((value * norm.scale - norm.mean[net_c]) / norm.stddev[net_c]);
      }
    }
  }
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& t) {
  ImageTensor out(t.channels(), t.height(), t.width());
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < t.height(); ++y) {
      for (int x = 0; x < t.width(); ++x) out.at(c, y, t.width() - 1 - x) = t.at(c, y, x);
    }
  }
  return out;
}

bool EmbeddingBackend::has_layer(const std::string& name) const {
  const auto layers = list_layers();
  return std::any_of(layers.begin(), layers.end(), [&](const LayerInfo& l) { return l.name == name; });
}

LayerInfo EmbeddingBackend::layer_info(const std::string& name) const {
  for (const auto& l : list_layers()) {
    if (l.name == name) return l;
  }
  throw Error(ErrorCode::kUnknownLayer, "layer '" + name + "' not found in " + kind() + " backend");
}

// ---------------------------------------------------------------------------
// StubBackend

namespace {

struct StubLayerSpec {
  const char* name;
  int channels;
  int stride;
};

constexpr StubLayerSpec kStubLayers[] = {
    {"activation_40", 8, StubBackend::kFineStride},
    {"activation_43", 16, StubBackend::kCoarseStride},
};

constexpr int kStubStats = 6;  // per input channel: block mean, block mean square

const StubLayerSpec& stub_spec(const std::string& name) {
  for (const auto& spec : kStubLayers) {
    if (name == spec.name) return spec;
  }
  throw Error(ErrorCode::kUnknownLayer, "layer '" + name + "' not found in stub backend");
}

struct StubMixing {
  std::vector<double> weights;  // channels x kStubStats
  std::vector<double> bias;
};

StubMixing stub_mixing(const StubLayerSpec& spec) {
  std::mt19937_64 rng(mix_seed(0x5eed, hash_string(spec.name)));
  StubMixing m;
  m.weights.resize(static_cast<std::size_t>(spec.channels) * kStubStats);
  for (double& w : m.weights) w = 0.5 * standard_normal(rng);
  m.bias.resize(spec.channels);
  for (double& b : m.bias) b = 0.1 * standard_normal(rng);
  return m;
}

// Sum of row[0..n) pairing element k with n-1-k, so mirrored input gives a
// bit-identical result.
template <typename F>
double mirror_symmetric_sum(const float* row, int n, F&& f) {
  double total = 0.0;
  for (int k = 0; k < n / 2; ++k) total += f(row[k]) + f(row[n - 1 - k]);
  if (n % 2 == 1) total += f(row[n / 2]);
  return total;
}

}  // namespace

StubBackend::StubBackend(BackendConfig config) : config_(std::move(config)) {
  config_.normalization = Normalization::torch();
  stub_spec(config_.layer_name);
  if (config_.input_resolution < kCoarseStride) {
    throw Error(ErrorCode::kInvalidArgument, "stub backend needs input_resolution >= 32");
  }
}

std::vector<LayerInfo> StubBackend::list_layers() const {
  std::vector<LayerInfo> out;
  for (const auto& spec : kStubLayers) {
    const int cells = config_.input_resolution / spec.stride;
    out.push_back({spec.name, spec.channels, cells, cells});
  }
  return out;
}

ActivationTensor StubBackend::activations(const ImageTensor& crop) const {
  const StubLayerSpec& spec = stub_spec(config_.layer_name);
  static const StubMixing mixing_fine = stub_mixing(kStubLayers[0]);
  static const StubMixing mixing_coarse = stub_mixing(kStubLayers[1]);
  const StubMixing& mixing = spec.stride == kFineStride ? mixing_fine : mixing_coarse;

  const int cells_y = crop.height() / spec.stride;
  const int cells_x = crop.width() / spec.stride;
  const int s = spec.stride;
  ActivationTensor out(spec.channels, cells_y, cells_x);
  const double inv_area = 1.0 / (static_cast<double>(s) * s);
  std::array<double, kStubStats> stats{};
  for (int by = 0; by < cells_y; ++by) {
    for (int bx = 0; bx < cells_x; ++bx) {
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sum_sq = 0.0;
        for (int y = by * s; y < (by + 1) * s; ++y) {
          const float* row = &crop.values()[(static_cast<std::size_t>(c) * crop.height() + y) * crop.width() +
                                            static_cast<std::size_t>(bx) * s];
          sum += mirror_symmetric_sum(row, s, [](float v) { return static_cast<double>(v); });
          sum_sq += mirror_symmetric_sum(row, s, [](float v) { return static_cast<double>(v) * v; });
        }
        stats[2 * c] = sum * inv_area;
        stats[2 * c + 1] = sum_sq * inv_area;
      }
      for (int ch = 0; ch < spec.channels; ++ch) {
        double a = mixing.bias[ch];
        for (int k = 0; k < kStubStats; ++k) a += mixing.weights[ch * kStubStats + k] * stats[k];
        out.at(ch, by, bx) = static_cast<float>(std::tanh(a));
      }
    }
  }
  return out;
}

ActivationTensor StubBackend::extract(const RgbImage& image, const BoundingBox& box, bool flipped) const {
  const ImageTensor crop = preprocess_crop(image, box, config_.input_resolution, flipped,
                                           config_.crop_padding, config_.normalization);
  return activations(crop);
}

std::shared_ptr<const EmbeddingBackend> StubBackend::with_tap(const std::string& layer_name,
                                                              int input_resolution) const {
  BackendConfig c = config_;
  c.layer_name = layer_name;
  c.input_resolution = input_resolution;
  return std::make_shared<StubBackend>(std::move(c));
}

std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const std::string& kind,
                                                               const BackendConfig& config) {
  if (kind == "stub") return std::make_shared<StubBackend>(config);
  if (kind == "onnx") return std::make_shared<OnnxBackend>(config);
  throw Error(ErrorCode::kInvalidArgument, "unknown backend kind '" + kind + "'");
}

}  // namespace herdid
