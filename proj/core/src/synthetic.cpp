#include "herdid/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "herdid/error.hpp"
#include "herdid/random.hpp"

namespace herdid {

RgbImage render_synthetic_image(const std::vector<double>& prototype, int grid, int size, double cell_noise,
                                double pixel_noise, std::uint64_t seed) {
  if (grid < 1 || size < grid) throw Error(ErrorCode::kInvalidArgument, "synthetic image needs size >= grid >= 1");
  if (prototype.size() != static_cast<std::size_t>(grid * grid * 3)) {
    throw Error(ErrorCode::kInvalidArgument, "prototype must hold grid*grid*3 values");
  }
  std::mt19937_64 rng(seed);
  std::vector<double> cells(prototype);
  for (double& c : cells) c += cell_noise * standard_normal(rng);

  RgbImage img(size, size);
  for (int y = 0; y < size; ++y) {
    const int gy = y * grid / size;
    for (int x = 0; x < size; ++x) {
      const int gx = x * grid / size;
      for (int c = 0; c < 3; ++c) {
        const double v = cells[(gy * grid + gx) * 3 + c] + pixel_noise * standard_normal(rng);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.classes < 1) throw Error(ErrorCode::kInvalidArgument, "synthetic dataset needs >= 1 class");
  std::vector<int> sizes = spec.class_sizes;
  if (sizes.empty()) sizes.assign(spec.classes, spec.images_per_class);
  if (static_cast<int>(sizes.size()) != spec.classes) {
    throw Error(ErrorCode::kInvalidArgument, "class_sizes must have one entry per class");
  }

  SyntheticDataset ds;
  std::vector<ManifestEntry> entries;
  char buf[32];
  for (int k = 0; k < spec.classes; ++k) {
    std::snprintf(buf, sizeof buf, "ind%03d", k);
    const std::string individual = buf;
    std::mt19937_64 proto_rng(mix_seed(spec.seed, hash_string(individual)));
    std::vector<double> prototype(static_cast<std::size_t>(spec.grid * spec.grid * 3));
    for (double& v : prototype) v = 0.15 + 0.7 * uniform_real(proto_rng);
    for (int i = 0; i < sizes[k]; ++i) {
      std::snprintf(buf, sizeof buf, "_img%02d", i);
      ManifestEntry e;
      e.image_id = individual + buf;
      e.uri = e.image_id + ".png";
      e.individual_id = individual;
      ds.images.emplace(e.image_id,
                        render_synthetic_image(prototype, spec.grid, spec.image_size, spec.cell_noise,
                                               spec.pixel_noise, mix_seed(spec.seed, hash_string(e.image_id))));
      entries.push_back(std::move(e));
    }
  }
  ds.manifest = DatasetManifest(std::move(entries));
  if (spec.test_fraction > 0.0) ds.manifest = stratified_split(ds.manifest, spec.test_fraction, spec.seed);
  return ds;
}

ImageLoader SyntheticDataset::loader() const {
  return [this](const DatasetManifest&, const ManifestEntry& e) -> RgbImage {
    auto it = images.find(e.image_id);
    if (it == images.end()) throw Error(ErrorCode::kNotFound, "no synthetic image '" + e.image_id + "'");
    return it->second;
  };
}

void SyntheticDataset::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [id, img] : images) save_png(dir / (id + ".png"), img);
  save_manifest(dir / "manifest.jsonl", DatasetManifest(manifest.entries(), dir));
}

}  // namespace herdid
