#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "herdid/backend.hpp"
#include "herdid/image.hpp"
#include "herdid/types.hpp"

namespace herdid {

struct Detection {
  BoundingBox box;
  double score = 0.0;
};

/// Intersection over union; 0 for disjoint boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Greedy NMS: keep the best remaining detection, drop every other with
/// IoU > iou_threshold against it. Output sorted by score, descending;
/// equal scores keep input order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

struct DetectionEvalResult {
  double precision = 0.0;
  double recall = 0.0;
  double average_precision = 0.0;
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  /// Set when TP+FP = 0; precision is then reported as 0.
  bool precision_undefined = false;
  /// Set when there is no ground truth; recall and AP are reported as 0.
  bool recall_undefined = false;
  /// (precision, recall) after each prediction in descending score order.
  std::vector<std::pair<double, double>> pr_curve;
};

/// Single-class detection metrics. Predictions are matched greedily in
/// descending score order to the unmatched ground-truth box of highest IoU
/// in the same image, if that IoU >= iou_threshold. AP integrates the
/// precision envelope (all-point interpolation). Both maps must have the
/// same image ids.
DetectionEvalResult evaluate_detections(const std::map<std::string, std::vector<Detection>>& predictions,
                                        const std::map<std::string, std::vector<BoundingBox>>& ground_truth,
                                        double iou_threshold = 0.5);

/// Head proposals for an image: NMS applied, sorted by score descending.
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual std::vector<Detection> detect_heads(const RgbImage& image) const = 0;
  virtual std::string kind() const = 0;
};

/// Deterministic detector for tests. Treats the image as a row (or column)
/// of square tiles along its long axis, one head per tile, and proposes an
/// inset box per tile plus a near-duplicate that NMS removes. Images whose
/// short side is below kMinSide yield nothing.
class StubDetector final : public DetectorBackend {
 public:
  static constexpr int kMinSide = 16;
  static constexpr int kMaxHeads = 4;

  std::vector<Detection> detect_heads(const RgbImage& image) const override;
  std::string kind() const override { return "stub"; }

  /// Proposals before NMS.
  std::vector<Detection> raw_proposals(const RgbImage& image) const;
};

struct OnnxDetectorConfig {
  std::string model_uri;
  int input_resolution = 416;
  Normalization normalization = Normalization{"unit", false, 1.0 / 255.0, {0, 0, 0}, {1, 1, 1}};
  double score_threshold = 0.25;
  double nms_threshold = 0.45;
};

/// Runs an ONNX graph that emits "boxes" (N x 4, normalized x,y,w,h) and
/// "scores" (N) directly.
class OnnxDetector final : public DetectorBackend {
 public:
  explicit OnnxDetector(OnnxDetectorConfig config);
  ~OnnxDetector() override;

  std::vector<Detection> detect_heads(const RgbImage& image) const override;
  std::string kind() const override { return "onnx"; }

  /// Raw network output for a preprocessed input, boxes clipped to the image.
  std::vector<Detection> run(const ImageTensor& input) const;
  /// run() followed by thresholding and NMS.
  std::vector<Detection> postprocess(std::vector<Detection> raw) const;

  struct Net;

 private:
  OnnxDetectorConfig config_;
  std::unique_ptr<Net> net_;
};

/// Interchange record: {"image_id": "...", "boxes": [{"x","y","w","h","score"}]}.
struct DetectionRecord {
  std::string image_id;
  std::vector<Detection> detections;
};

std::string to_jsonl_line(const DetectionRecord& record);
std::vector<DetectionRecord> read_detection_jsonl(std::istream& in);

}  // namespace herdid
