#pragma once

#include <optional>
#include <string>

#include "herdid/types.hpp"

namespace herdid {

/// Per-channel max over non-overlapping n x n windows with stride n.
/// Rows/columns past the last full window are dropped, so the output is
/// floor(H/n) x floor(W/n). Throws Error(kInvalidPoolSize) unless
/// 2 <= n <= min(H, W).
ActivationTensor max_pool(const ActivationTensor& t, int n);

/// Channel-major, then row-major flattening. The provenance records the
/// tap, the pool size that produced `t` and the flip flag.
FeatureVector flatten(const ActivationTensor& t, const FeatureProvenance& provenance);

/// max_pool (when pool_size is set) followed by flatten.
FeatureVector pool_and_flatten(const ActivationTensor& t, std::optional<int> pool_size,
                               const std::string& layer_name, int input_resolution, bool flipped);

}  // namespace herdid
