#include "herdid/types.hpp"

#include <cmath>
#include <sstream>

#include "herdid/error.hpp"

namespace herdid {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kDuplicateId: return "duplicate-id";
    case ErrorCode::kInvalidBox: return "invalid-box";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kProvenanceConflict: return "provenance-conflict";
    case ErrorCode::kProvenanceMismatch: return "provenance-mismatch";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kInvalidPoolSize: return "invalid-pool-size";
    case ErrorCode::kInsufficientSamples: return "insufficient-samples";
    case ErrorCode::kSingleClass: return "single-class";
    case ErrorCode::kNonFiniteValue: return "non-finite-value";
    case ErrorCode::kAlreadySplit: return "already-split";
    case ErrorCode::kCalibrationMissing: return "calibration-missing";
    case ErrorCode::kUndecodableImage: return "undecodable-image";
    case ErrorCode::kUnknownLayer: return "unknown-layer";
    case ErrorCode::kBackendFailure: return "backend-failure";
    case ErrorCode::kIoError: return "io-error";
    case ErrorCode::kFormatError: return "format-error";
  }
  return "unknown";
}

bool BoundingBox::valid() const {
  const bool finite = std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
                      std::isfinite(h) && std::isfinite(confidence);
  return finite && x >= 0.0 && y >= 0.0 && w > 0.0 && h > 0.0 && x + w <= 1.0 &&
         y + h <= 1.0 && confidence >= 0.0 && confidence <= 1.0;
}

void BoundingBox::validate(const std::string& what) const {
  if (!valid()) {
    std::ostringstream os;
    os << what << " violates box invariants: (" << x << ", " << y << ", " << w << ", " << h
       << ", confidence " << confidence << ")";
    throw Error(ErrorCode::kInvalidBox, os.str());
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  if (text == "unassigned") return Split::kUnassigned;
  throw Error(ErrorCode::kParseError, "unknown split '" + text + "'");
}

void FeatureVector::check_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteValue, "feature vector has non-finite value");
  }
}

ActivationTensor::ActivationTensor(int channels, int height, int width)
    : ActivationTensor(channels, height, width,
                       std::vector<float>(static_cast<std::size_t>(channels) * height * width, 0.0f)) {}

ActivationTensor::ActivationTensor(int channels, int height, int width, std::vector<float> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "activation tensor dimensions must be positive");
  }
  if (values_.size() != static_cast<std::size_t>(channels) * height * width) {
    throw Error(ErrorCode::kDimensionMismatch, "activation tensor value count does not match C*H*W");
  }
}

bool ActivationTensor::all_finite() const {
  for (float v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace herdid
