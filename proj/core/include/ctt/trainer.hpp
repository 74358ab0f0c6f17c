#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "ctt/losses.hpp"
#include "ctt/metrics.hpp"
#include "ctt/model.hpp"
#include "ctt/nn.hpp"
#include "ctt/scene.hpp"
#include "ctt/sm_sampling.hpp"

namespace ctt {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  RegWeights reg;
  nn::AdamConfig adam;
  ScoringConfig scoring;
  int steps = 2000;
  int batch_size = 1;             // scenes per optimizer step
  double lr_final_ratio = 0.1;    // cosine decay to lr * ratio
  bool diverse_lanes = true;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Sampling settings derived from the model config.
SamplingConfig sampling_config(const ModelConfig& m, const ScoringConfig& scoring, int num_samples);

/// sample_scene_modes with K lowered to the number of distinct candidates
/// when fewer exist.
SMSampleSet sample_at_most(const MarginalDist& md, const Scene& scene, SamplingConfig cfg,
                           const std::optional<SceneMode>& gtsm, bool diverse_lanes);

/// Full objective for one scene. `scene` is the unpadded source of `in`.
struct SceneLoss {
  ad::Var total;
  LossParts parts;
  LossBreakdown breakdown;
  SMSampleSet samples;
};
SceneLoss scene_loss(const CttModel& model, nn::Scope& s, const ModelInput& in, const Scene& scene,
                     const TrainConfig& cfg, bool diverse_lanes);

/// Mutable optimization state; everything needed to resume bit-exactly.
struct TrainState {
  nn::ParamStore params;
  nn::Adam adam;
  std::mt19937_64 rng;
  std::int64_t step = 0;
  std::vector<int> order;  // current epoch permutation
  int cursor = 0;          // position within `order`
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Scene> scenes);

  const TrainConfig& config() const { return cfg_; }
  const CttModel& model() const { return model_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  void set_state(TrainState st) { state_ = std::move(st); }

  /// One optimizer step over `batch_size` scenes. Throws NumericError on a
  /// non-finite loss or gradient.
  LossBreakdown step();
  /// Runs until `cfg.steps`; `on_step` sees every breakdown.
  void run(const std::function<void(std::int64_t, const LossBreakdown&)>& on_step = {});

 private:
  int next_scene();

  TrainConfig cfg_;
  CttModel model_;
  std::vector<Scene> scenes_;
  std::vector<ModelInput> inputs_;
  TrainState state_;
};

struct Prediction {
  MarginalDist marginals;
  std::vector<SceneMode> modes;     // sorted by energy, best first
  std::vector<double> energies;
  std::vector<double> probs;        // softmax of the energies
  SampleTrajectories trajectories;  // [K][N][Tf]
};

/// Top-K modes of the marginals re-ranked by the energy head, or exactly
/// `override_mode` when given.
Prediction predict(const CttModel& model, const nn::ParamStore& params, const Scene& scene, int K,
                   const std::optional<SceneMode>& override_mode = std::nullopt);

/// All metrics for one scene with futures.
SceneMetrics evaluate_scene(const CttModel& model, const nn::ParamStore& params, const Scene& scene, int K);

EvalReport evaluate(const CttModel& model, const nn::ParamStore& params, const std::vector<Scene>& scenes, int K,
                    std::vector<SceneMetrics>* per_scene = nullptr);

}  // namespace ctt
