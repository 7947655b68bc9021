#include <random>

#include <benchmark/benchmark.h>

#include "herdid/detection.hpp"
#include "herdid/random.hpp"

namespace {

std::vector<herdid::Detection> proposals(int n) {
  std::mt19937_64 rng(4);
  std::vector<herdid::Detection> out;
  for (int i = 0; i < n; ++i) {
    const double w = 0.05 + 0.3 * herdid::uniform_real(rng);
    const double h = 0.05 + 0.3 * herdid::uniform_real(rng);
    out.push_back({{(1 - w) * herdid::uniform_real(rng), (1 - h) * herdid::uniform_real(rng), w, h},
                   herdid::uniform_real(rng)});
  }
  return out;
}

void BM_Nms(benchmark::State& state) {
  const auto dets = proposals(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(herdid::nms(dets, 0.45));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(1000)->Arg(5000);

void BM_EvaluateDetections(benchmark::State& state) {
  std::map<std::string, std::vector<herdid::Detection>> pred;
  std::map<std::string, std::vector<herdid::BoundingBox>> truth;
  const auto dets = proposals(4000);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const std::string id = "im" + std::to_string(i % 500);
    pred[id].push_back(dets[i]);
    if (i % 3 == 0) truth[id].push_back(dets[i].box);
  }
  for (const auto& [id, _] : pred) truth.try_emplace(id);
  for (auto _ : state) benchmark::DoNotOptimize(herdid::evaluate_detections(pred, truth));
}
BENCHMARK(BM_EvaluateDetections)->Unit(benchmark::kMillisecond);

}  // namespace
