#include <algorithm>
#include <mutex>
#include <opencv2/dnn.hpp>

#include "herdid/detection.hpp"
#include "herdid/error.hpp"

namespace herdid {

struct OnnxDetector::Net {
  cv::dnn::Net net;
  std::mutex mutex;
};

OnnxDetector::OnnxDetector(OnnxDetectorConfig config)
    : config_(std::move(config)), net_(std::make_unique<Net>()) {
  try {
    net_->net = cv::dnn::readNetFromONNX(config_.model_uri);
  } catch (const cv::Exception& ex) {
    throw Error(ErrorCode::kBackendFailure, "cannot load detector '" + config_.model_uri + "': " + ex.what());
  }
  for (const char* name : {"boxes", "scores"}) {
    if (net_->net.getLayerId(name) < 0) {
      throw Error(ErrorCode::kUnknownLayer, std::string("detector graph lacks output '") + name + "'");
    }
  }
}

OnnxDetector::~OnnxDetector() = default;

std::vector<Detection> OnnxDetector::run(const ImageTensor& input) const {
  const int shape[] = {1, input.channels(), input.height(), input.width()};
  cv::Mat blob(4, shape, CV_32F);
  std::copy(input.values().begin(), input.values().end(), blob.ptr<float>());
  std::vector<cv::Mat> outs;
  {
    std::lock_guard lock(net_->mutex);
    try {
      net_->net.setInput(blob);
      net_->net.forward(outs, std::vector<cv::String>{"boxes", "scores"});
    } catch (const cv::Exception& ex) {
      throw Error(ErrorCode::kBackendFailure, std::string("detector inference failed: ") + ex.what());
    }
  }
  const cv::Mat& boxes = outs[0];
  const cv::Mat& scores = outs[1];
  const std::size_t n = scores.total();
  if (boxes.total() != n * 4) throw Error(ErrorCode::kBackendFailure, "detector boxes/scores size mismatch");
  const float* b = boxes.ptr<float>();
  const float* s = scores.ptr<float>();
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    BoundingBox box;
    box.x = std::clamp(static_cast<double>(b[4 * i]), 0.0, 1.0);
    box.y = std::clamp(static_cast<double>(b[4 * i + 1]), 0.0, 1.0);
    box.w = std::min(static_cast<double>(b[4 * i + 2]), 1.0 - box.x);
    box.h = std::min(static_cast<double>(b[4 * i + 3]), 1.0 - box.y);
    box.confidence = std::clamp(static_cast<double>(s[i]), 0.0, 1.0);
    box.source = BoxSource::kDetector;
    if (!box.valid()) continue;
    out.push_back({box, box.confidence});
  }
  return out;
}

std::vector<Detection> OnnxDetector::postprocess(std::vector<Detection> raw) const {
  std::erase_if(raw, [&](const Detection& d) { return d.score < config_.score_threshold; });
  return nms(std::move(raw), config_.nms_threshold);
}

std::vector<Detection> OnnxDetector::detect_heads(const RgbImage& image) const {
  const auto input = preprocess_crop(image, full_image_box(), config_.input_resolution, false, 0.0,
                                     config_.normalization);
  return postprocess(run(input));
}

}  // namespace herdid
