#include "herdid/detection.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>

#include "herdid/error.hpp"
#include "herdid/json.hpp"

namespace herdid {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "NMS IoU threshold must lie in (0, 1)");
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  std::vector<bool> removed(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (!removed[j] && iou(dets[i].box, dets[j].box) > iou_threshold) removed[j] = true;
    }
  }
  return kept;
}

DetectionEvalResult evaluate_detections(const std::map<std::string, std::vector<Detection>>& predictions,
                                        const std::map<std::string, std::vector<BoundingBox>>& ground_truth,
                                        double iou_threshold) {
  if (predictions.size() != ground_truth.size() ||
      !std::equal(predictions.begin(), predictions.end(), ground_truth.begin(),
                  [](const auto& p, const auto& g) { return p.first == g.first; })) {
    throw Error(ErrorCode::kInvalidArgument, "prediction and ground-truth image ids differ");
  }

  struct Ranked {
    const std::string* image;
    const Detection* det;
  };
  std::vector<Ranked> ranked;
  std::size_t total_gt = 0;
  for (const auto& [image, dets] : predictions) {
    for (const auto& d : dets) ranked.push_back({&image, &d});
  }
  for (const auto& [image, boxes] : ground_truth) total_gt += boxes.size();
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.det->score > b.det->score; });

  std::map<std::string, std::vector<bool>> matched;
  for (const auto& [image, boxes] : ground_truth) matched[image].assign(boxes.size(), false);

  DetectionEvalResult r;
  std::vector<double> precision;
  std::vector<int> tp_at;  // true positives after each prediction
  for (const auto& p : ranked) {
    const auto& gts = ground_truth.at(*p.image);
    auto& used = matched[*p.image];
    double best = -1.0;
    std::size_t best_index = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double o = iou(p.det->box, gts[g]);
      if (o > best) {
        best = o;
        best_index = g;
      }
    }
    if (best >= iou_threshold) {
      used[best_index] = true;
      ++r.true_positives;
    } else {
      ++r.false_positives;
    }
    const double prec = static_cast<double>(r.true_positives) / (r.true_positives + r.false_positives);
    const double rec = total_gt > 0 ? static_cast<double>(r.true_positives) / total_gt : 0.0;
    precision.push_back(prec);
    tp_at.push_back(r.true_positives);
    r.pr_curve.emplace_back(prec, rec);
  }
  r.false_negatives = static_cast<int>(total_gt) - r.true_positives;

  r.precision_undefined = ranked.empty();
  r.precision = ranked.empty() ? 0.0 : precision.back();
  r.recall_undefined = total_gt == 0;
  r.recall = total_gt == 0 ? 0.0 : static_cast<double>(r.true_positives) / total_gt;

  if (total_gt > 0 && !ranked.empty()) {
    // Recall moves in steps of 1/G, one per true positive. Each step takes
    // the best precision at or after it; the sum is kept in extended
    // precision and rounded once.
    long double envelope = 0.0L, sum = 0.0L;
    for (std::size_t i = ranked.size(); i-- > 0;) {
      envelope = std::max(envelope, static_cast<long double>(tp_at[i]) / static_cast<long double>(i + 1));
      const int before = i == 0 ? 0 : tp_at[i - 1];
      if (tp_at[i] > before) sum += envelope;
    }
    r.average_precision = static_cast<double>(sum / static_cast<long double>(total_gt));
  }
  return r;
}

// ---------------------------------------------------------------------------
// StubDetector

std::vector<Detection> StubDetector::raw_proposals(const RgbImage& image) const {
  std::vector<Detection> out;
  if (image.empty() || std::min(image.width, image.height) < kMinSide) return out;
  const bool wide = image.width >= image.height;
  const double long_side = wide ? image.width : image.height;
  const double short_side = wide ? image.height : image.width;
  const int tiles = std::clamp(static_cast<int>(std::lround(long_side / short_side)), 1, kMaxHeads);
  for (int t = 0; t < tiles; ++t) {
    const double start = static_cast<double>(t) / tiles;
    const double span = 1.0 / tiles;
    auto make = [&](double inset_long, double score) {
      BoundingBox b;
      const double along = start + inset_long * span;
      const double extent = 0.7 * span;
      if (wide) {
        b = {along, 0.15, extent, 0.7, score, BoxSource::kDetector};
      } else {
        b = {0.15, along, 0.7, extent, score, BoxSource::kDetector};
      }
      return Detection{b, score};
    };
    out.push_back(make(0.15, 0.9 - 0.1 * t));
    out.push_back(make(0.18, 0.5 - 0.1 * t));
  }
  return out;
}

std::vector<Detection> StubDetector::detect_heads(const RgbImage& image) const {
  return nms(raw_proposals(image), 0.5);
}

// ---------------------------------------------------------------------------
// Interchange

std::string to_jsonl_line(const DetectionRecord& record) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& d : record.detections) {
    boxes.push_back({{"x", d.box.x}, {"y", d.box.y}, {"w", d.box.w}, {"h", d.box.h}, {"score", d.score}});
  }
  return nlohmann::json{{"image_id", record.image_id}, {"boxes", boxes}}.dump();
}

std::vector<DetectionRecord> read_detection_jsonl(std::istream& in) {
  std::vector<DetectionRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DetectionRecord r;
      r.image_id = j.at("image_id").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        Detection d;
        d.box = b.get<BoundingBox>();
        d.box.source = BoxSource::kDetector;
        d.score = b.value("score", 1.0);
        d.box.confidence = d.score;
        d.box.validate("line " + std::to_string(number) + " box");
        r.detections.push_back(d);
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParseError, "detections line " + std::to_string(number) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace herdid
