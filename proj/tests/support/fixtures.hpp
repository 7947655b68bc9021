#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "herdid/manifest.hpp"
#include "herdid/synthetic.hpp"
#include "herdid/types.hpp"

namespace fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "herdid");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

herdid::ActivationTensor random_tensor(std::mt19937_64& rng, int c, int h, int w);
Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols);

/// Long-tailed class-size histogram: classes[s-1] = number of classes with
/// s images. Log-normal weights with the given mode, spread chosen so the
/// mean class size is images/classes, apportioned by largest remainder,
/// both extremes populated, then nudged one class at a time until the image
/// total is exact.
std::vector<int> long_tail_histogram(int classes, int images, int min_size, int max_size, int mode);
/// Class sizes (one entry per class, descending) from a histogram.
std::vector<int> sizes_from_histogram(const std::vector<int>& histogram, int min_size);
/// One manifest entry with uri "<id>.png".
herdid::ManifestEntry entry(const std::string& image_id, const std::string& individual, herdid::Split split);
/// Unassigned manifest with the given class sizes.
herdid::DatasetManifest manifest_with_sizes(const std::vector<int>& sizes);

/// 20 well separated classes x 6 images.
herdid::SyntheticSpec separable_spec(std::uint64_t seed = 7);
/// Classes that overlap enough for single-image top-1 around one half.
herdid::SyntheticSpec noisy_spec(std::uint64_t seed);

}  // namespace fixture
