#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <unistd.h>

#include "herdid/random.hpp"

namespace fixture {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto base = std::filesystem::temp_directory_path();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto p = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    if (std::filesystem::create_directory(p)) {
      path_ = p;
      return;
    }
  }
  throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

herdid::ActivationTensor random_tensor(std::mt19937_64& rng, int c, int h, int w) {
  herdid::ActivationTensor t(c, h, w);
  for (float& v : t.values()) v = static_cast<float>(herdid::standard_normal(rng));
  return t;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = herdid::standard_normal(rng);
  return m;
}

namespace {

std::vector<double> lognormal_weights(double sigma, int mode, int lo, int hi) {
  const double mu = std::log(static_cast<double>(mode)) + sigma * sigma;
  std::vector<double> w;
  for (int s = lo; s <= hi; ++s) {
    const double z = (std::log(static_cast<double>(s)) - mu) / sigma;
    w.push_back(std::exp(-0.5 * z * z) / s);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

double weighted_mean(const std::vector<double>& w, int lo) {
  double m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) m += w[i] * (lo + static_cast<int>(i));
  return m;
}

}  // namespace

std::vector<int> long_tail_histogram(int classes, int images, int min_size, int max_size, int mode) {
  const double target = static_cast<double>(images) / classes;
  double lo = 0.05, hi = 3.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (weighted_mean(lognormal_weights(mid, mode, min_size, max_size), min_size) < target ? lo : hi) = mid;
  }
  const auto w = lognormal_weights(0.5 * (lo + hi), mode, min_size, max_size);
  const int bins = max_size - min_size + 1;

  std::vector<int> hist(bins);
  std::vector<double> rem(bins);
  int assigned = 0;
  for (int i = 0; i < bins; ++i) {
    const double q = classes * w[i];
    hist[i] = static_cast<int>(std::floor(q));
    rem[i] = q - hist[i];
    assigned += hist[i];
  }
  std::vector<int> order(bins);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int i = 0; assigned < classes; ++i, ++assigned) ++hist[order[i]];

  auto fullest = [&](auto eligible) {
    int best = -1;
    for (int i = 0; i < bins; ++i) {
      if (eligible(i) && (best < 0 || hist[i] > hist[best])) best = i;
    }
    if (best < 0) throw std::runtime_error("histogram cannot be adjusted");
    return best;
  };
  for (int edge : {0, bins - 1}) {
    if (hist[edge] == 0) {
      --hist[fullest([&](int i) { return hist[i] > 1; })];
      ++hist[edge];
    }
  }
  auto total = [&] {
    int t = 0;
    for (int i = 0; i < bins; ++i) t += hist[i] * (min_size + i);
    return t;
  };
  // Every move shifts one class by one size, changing the total by one.
  for (int diff = images - total(); diff != 0; diff = images - total()) {
    const int step = diff > 0 ? 1 : -1;
    const int from = fullest([&](int i) {
      const int to = i + step;
      if (to < 0 || to >= bins || hist[i] == 0) return false;
      return !((i == 0 || i == bins - 1) && hist[i] == 1);
    });
    --hist[from];
    ++hist[from + step];
  }
  return hist;
}

std::vector<int> sizes_from_histogram(const std::vector<int>& histogram, int min_size) {
  std::vector<int> sizes;
  for (int i = static_cast<int>(histogram.size()) - 1; i >= 0; --i) sizes.insert(sizes.end(), histogram[i], min_size + i);
  return sizes;
}

herdid::ManifestEntry entry(const std::string& image_id, const std::string& individual, herdid::Split split) {
  herdid::ManifestEntry e;
  e.image_id = image_id;
  e.uri = image_id + ".png";
  e.individual_id = individual;
  e.split = split;
  return e;
}

herdid::DatasetManifest manifest_with_sizes(const std::vector<int>& sizes) {
  std::vector<herdid::ManifestEntry> entries;
  char buf[48];
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    for (int i = 0; i < sizes[k]; ++i) {
      herdid::ManifestEntry e;
      std::snprintf(buf, sizeof buf, "c%04zu", k);
      e.individual_id = buf;
      std::snprintf(buf, sizeof buf, "c%04zu_%02d", k, i);
      e.image_id = buf;
      e.uri = e.image_id + ".jpg";
      entries.push_back(std::move(e));
    }
  }
  return herdid::DatasetManifest(std::move(entries));
}

herdid::SyntheticSpec separable_spec(std::uint64_t seed) {
  herdid::SyntheticSpec s;
  s.classes = 20;
  s.images_per_class = 6;
  s.cell_noise = 0.03;
  s.pixel_noise = 0.01;
  s.seed = seed;
  return s;
}

herdid::SyntheticSpec noisy_spec(std::uint64_t seed) {
  herdid::SyntheticSpec s;
  s.classes = 20;
  s.images_per_class = 10;
  s.image_size = 64;
  s.cell_noise = 0.23;
  s.pixel_noise = 0.02;
  s.seed = seed;
  return s;
}

}  // namespace fixture
