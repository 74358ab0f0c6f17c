#include <benchmark/benchmark.h>

#include <random>

#include "ctt/mode_label.hpp"
#include "ctt/sm_sampling.hpp"
#include "ctt/synth.hpp"

namespace {

using namespace ctt;

MarginalDist random_marginals(int n, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 2.0);
  std::vector<double> a2l(static_cast<size_t>(n * (m + 1))), a2a(static_cast<size_t>(num_pairs(n) * 3));
  for (auto& v : a2l) v = z(rng);
  for (auto& v : a2a) v = z(rng);
  return marginals_from_logits(n, m, a2l, a2a);
}

void BM_SampleModes(benchmark::State& state) {
  ScenarioTemplate tpl = default_template(TemplateKind::StraightMultiLane);
  const int n = static_cast<int>(state.range(0));
  tpl.min_agents = tpl.max_agents = n;
  const Scene scene = gen_scene(tpl, 3);
  const MarginalDist md = random_marginals(scene.num_agents(), scene.num_lanes(), 5);
  SamplingConfig cfg;
  cfg.num_selected_factors = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(sample_scene_modes(md, scene, cfg).samples.size());
}
BENCHMARK(BM_SampleModes)->Args({3, 4})->Args({6, 4})->Args({6, 8})->Args({6, 12})->Unit(benchmark::kMicrosecond);

void BM_ExtractGTSM(benchmark::State& state) {
  ScenarioTemplate tpl = default_template(TemplateKind::StraightMultiLane);
  tpl.min_agents = tpl.max_agents = static_cast<int>(state.range(0));
  const Scene scene = gen_scene(tpl, 3);
  for (auto _ : state) benchmark::DoNotOptimize(extract_gtsm(scene, 0.5).mode.a2l.size());
}
BENCHMARK(BM_ExtractGTSM)->Arg(3)->Arg(6)->Unit(benchmark::kMicrosecond);

}  // namespace
