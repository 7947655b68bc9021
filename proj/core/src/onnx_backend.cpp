#include <mutex>
#include <opencv2/dnn.hpp>

#include "herdid/backend.hpp"
#include "herdid/error.hpp"

namespace herdid {

struct OnnxBackend::Net {
  cv::dnn::Net net;
  std::mutex mutex;  // cv::dnn::Net is not reentrant
};

namespace {

ActivationTensor to_tensor(const cv::Mat& blob, const std::string& layer) {
  if (blob.dims != 4 || blob.size[0] != 1) {
    throw Error(ErrorCode::kBackendFailure, "layer '" + layer + "' did not produce a 1xCxHxW tensor");
  }
  const int c = blob.size[1], h = blob.size[2], w = blob.size[3];
  cv::Mat f;
  blob.convertTo(f, CV_32F);
  const float* p = f.ptr<float>();
  return ActivationTensor(c, h, w, std::vector<float>(p, p + static_cast<std::size_t>(c) * h * w));
}

cv::Mat to_blob(const ImageTensor& input) {
  const int shape[] = {1, input.channels(), input.height(), input.width()};
  cv::Mat blob(4, shape, CV_32F);
  std::copy(input.values().begin(), input.values().end(), blob.ptr<float>());
  return blob;
}

}  // namespace

OnnxBackend::OnnxBackend(BackendConfig config) : config_(std::move(config)), net_(std::make_shared<Net>()) {
  try {
    net_->net = cv::dnn::readNetFromONNX(config_.model_uri);
  } catch (const cv::Exception& ex) {
    throw Error(ErrorCode::kBackendFailure, "cannot load model '" + config_.model_uri + "': " + ex.what());
  }
  if (net_->net.empty()) throw Error(ErrorCode::kBackendFailure, "empty model '" + config_.model_uri + "'");
  net_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  net_->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
  check_layer();
}

OnnxBackend::OnnxBackend(BackendConfig config, std::shared_ptr<Net> net)
    : config_(std::move(config)), net_(std::move(net)) {
  check_layer();
}

OnnxBackend::~OnnxBackend() = default;

void OnnxBackend::check_layer() const {
  std::lock_guard lock(net_->mutex);
  if (net_->net.getLayerId(config_.layer_name) < 0) {
    throw Error(ErrorCode::kUnknownLayer,
                "layer '" + config_.layer_name + "' not found in '" + config_.model_uri + "'");
  }
}

std::vector<LayerInfo> OnnxBackend::list_layers() const {
  std::lock_guard lock(net_->mutex);
  const cv::dnn::MatShape input{1, 3, config_.input_resolution, config_.input_resolution};
  std::vector<LayerInfo> out;
  try {
    for (const auto& name : net_->net.getLayerNames()) {
      std::vector<cv::dnn::MatShape> in_shapes, out_shapes;
      net_->net.getLayerShapes(input, net_->net.getLayerId(name), in_shapes, out_shapes);
      if (out_shapes.empty() || out_shapes[0].size() != 4) continue;
      out.push_back({name, out_shapes[0][1], out_shapes[0][2], out_shapes[0][3]});
    }
  } catch (const cv::Exception& ex) {
    throw Error(ErrorCode::kBackendFailure, std::string("shape inference failed: ") + ex.what());
  }
  return out;
}

ActivationTensor OnnxBackend::run(const ImageTensor& input) const {
  std::lock_guard lock(net_->mutex);
  try {
    net_->net.setInput(to_blob(input));
    return to_tensor(net_->net.forward(config_.layer_name), config_.layer_name);
  } catch (const cv::Exception& ex) {
    throw Error(ErrorCode::kBackendFailure, std::string("inference failed: ") + ex.what());
  }
}

ActivationTensor OnnxBackend::extract(const RgbImage& image, const BoundingBox& box, bool flipped) const {
  return run(preprocess_crop(image, box, config_.input_resolution, flipped, config_.crop_padding,
                             config_.normalization));
}

std::shared_ptr<const EmbeddingBackend> OnnxBackend::with_tap(const std::string& layer_name,
                                                              int input_resolution) const {
  BackendConfig c = config_;
  c.layer_name = layer_name;
  c.input_resolution = input_resolution;
  return std::shared_ptr<const EmbeddingBackend>(new OnnxBackend(std::move(c), net_));
}

}  // namespace herdid
