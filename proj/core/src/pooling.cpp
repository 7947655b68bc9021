#include "herdid/pooling.hpp"

#include <algorithm>

#include "herdid/error.hpp"

namespace herdid {

ActivationTensor max_pool(const ActivationTensor& t, int n) {
  if (n < 2 || n > std::min(t.height(), t.width())) {
    throw Error(ErrorCode::kInvalidPoolSize,
                "pool size " + std::to_string(n) + " invalid for " + std::to_string(t.height()) + "x" +
                    std::to_string(t.width()) + " activations");
  }
  const int out_h = t.height() / n;
  const int out_w = t.width() / n;
  ActivationTensor out(t.channels(), out_h, out_w);
  for (int c = 0; c < t.channels(); ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        float best = t.at(c, oy * n, ox * n);
        for (int dy = 0; dy < n; ++dy) {
          for (int dx = 0; dx < n; ++dx) best = std::max(best, t.at(c, oy * n + dy, ox * n + dx));
        }
        out.at(c, oy, ox) = best;
      }
    }
  }
  return out;
}

FeatureVector flatten(const ActivationTensor& t, const FeatureProvenance& provenance) {
  if (!t.all_finite()) throw Error(ErrorCode::kNonFiniteValue, "activation tensor has non-finite values");
  FeatureVector v;
  v.values.assign(t.values().begin(), t.values().end());
  v.provenance = provenance;
  return v;
}

FeatureVector pool_and_flatten(const ActivationTensor& t, std::optional<int> pool_size,
                               const std::string& layer_name, int input_resolution, bool flipped) {
  FeatureProvenance p{layer_name, input_resolution, pool_size, flipped, false};
  if (pool_size) return flatten(max_pool(t, *pool_size), p);
  return flatten(t, p);
}

}  // namespace herdid
