#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "herdid/image.hpp"
#include "herdid/manifest.hpp"
#include "herdid/pipeline.hpp"

namespace herdid {

/// Parameters of a generated head-crop dataset. Every class has a
/// prototype: a grid x grid mosaic of random colours. An image of the
/// class perturbs each mosaic cell by Gaussian noise of `cell_noise`
/// (fraction of full scale) and each pixel by `pixel_noise`.
struct SyntheticSpec {
  int classes = 20;
  int images_per_class = 6;
  /// Overrides images_per_class when non-empty (one entry per class).
  std::vector<int> class_sizes;
  int image_size = 64;
  int grid = 4;
  double cell_noise = 0.03;
  double pixel_noise = 0.01;
  /// Fraction 0 leaves the manifest unassigned.
  double test_fraction = 0.25;
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::map<std::string, RgbImage> images;  // by image id

  /// Loader serving the in-memory images.
  ImageLoader loader() const;
  /// Writes <id>.png files and manifest.jsonl into `dir`.
  void write(const std::filesystem::path& dir) const;
};

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Renders one image of a class prototype.
RgbImage render_synthetic_image(const std::vector<double>& prototype, int grid, int size, double cell_noise,
                                double pixel_noise, std::uint64_t seed);

}  // namespace herdid
