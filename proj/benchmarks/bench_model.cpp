#include <benchmark/benchmark.h>

#include "ctt/model.hpp"
#include "ctt/synth.hpp"
#include "ctt/trainer.hpp"

namespace {

using namespace ctt;

Scene bench_scene(int agents) {
  ScenarioTemplate tpl = default_template(TemplateKind::StraightMultiLane);
  tpl.min_agents = tpl.max_agents = agents;
  return gen_scene(tpl, 7);
}

void BM_Encode(benchmark::State& state) {
  ModelConfig cfg;
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 1);
  const Scene scene = bench_scene(static_cast<int>(state.range(0)));
  const ModelInput in = prepare_input(scene, cfg);
  for (auto _ : state) {
    nn::Scope s(ps);
    benchmark::DoNotOptimize(model.encode(s, in).agent_hist.value().data());
  }
}
BENCHMARK(BM_Encode)->Arg(2)->Arg(4)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_Decode(benchmark::State& state) {
  ModelConfig cfg;
  cfg.decode = state.range(0) == 0 ? DecodeStrategy::OneShot : DecodeStrategy::Autoregressive;
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 1);
  const Scene scene = bench_scene(3);
  const ModelInput in = prepare_input(scene, cfg);
  nn::Scope s0(ps);
  const ContextTensors ctx = model.encode(s0, in);
  const std::vector<SceneMode> modes(6, *in.gtsm);
  for (auto _ : state) {
    nn::Scope s(ps);
    benchmark::DoNotOptimize(model.decode(s, ctx, modes).poses.value().data());
  }
  state.SetLabel(state.range(0) == 0 ? "one-shot" : "autoregressive");
}
BENCHMARK(BM_Decode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  Trainer tr(cfg, {bench_scene(3)});
  for (auto _ : state) benchmark::DoNotOptimize(tr.step().total);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
