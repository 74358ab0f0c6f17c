#include "ctt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ctt/errors.hpp"

namespace ctt {

namespace {

size_t sz(int v) { return static_cast<size_t>(v); }

bool finite(double v) { return std::isfinite(v); }

std::vector<double> softmax(const std::vector<double>& e) {
  std::vector<double> p(e.size());
  if (e.empty()) return p;
  const double mx = *std::max_element(e.begin(), e.end());
  double z = 0.0;
  for (size_t k = 0; k < e.size(); ++k) z += (p[k] = std::exp(e[k] - mx));
  for (auto& v : p) v /= z;
  return p;
}

std::vector<Pose4> current_poses(const Scene& scene) {
  std::vector<Pose4> out;
  for (const auto& a : scene.agents) out.push_back(a.current().pose);
  return out;
}

std::vector<AgentStatic> statics_of(const Scene& scene) {
  std::vector<AgentStatic> out;
  for (const auto& a : scene.agents) out.push_back(a.statics);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (steps < 0) throw Error("train config: steps must be >= 0");
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (!(adam.lr > 0.0) || !finite(adam.lr)) throw Error("train config: lr must be positive");
  if (!(lr_final_ratio >= 0.0 && lr_final_ratio <= 1.0)) throw Error("train config: lr_final_ratio must be in [0, 1]");
  for (double w : {reg.params, reg.controls, reg.collision})
    if (!(w >= 0.0) || !finite(w)) throw Error("train config: regularization weights must be finite and >= 0");
}

SamplingConfig sampling_config(const ModelConfig& m, const ScoringConfig& scoring, int num_samples) {
  SamplingConfig c;
  c.num_samples = num_samples;
  c.num_selected_factors = m.num_selected_factors;
  c.scoring = scoring;
  return c;
}

SMSampleSet sample_at_most(const MarginalDist& md, const Scene& scene, SamplingConfig cfg,
                           const std::optional<SceneMode>& gtsm, bool diverse_lanes) {
  while (true) {
    try {
      return sample_scene_modes(md, scene, cfg, gtsm, diverse_lanes);
    } catch (const InsufficientModes&) {
      if (cfg.num_samples <= 1) throw;
      --cfg.num_samples;
    }
  }
}

SceneLoss scene_loss(const CttModel& model, nn::Scope& s, const ModelInput& in, const Scene& scene,
                     const TrainConfig& cfg, bool diverse_lanes) {
  if (!in.has_future || !in.gtsm) throw GTMissing("scene_loss: scene has no ground-truth futures");
  const ModelConfig& mc = model.config();
  const SceneMode& gt = *in.gtsm;
  const int N = in.num_agents;
  const int n = in.real_agents;
  SceneLoss out;

  const ContextTensors ctx = model.encode(s, in);
  const ad::Var la = model.head_a2l(s, ctx);
  const ad::Var lh = model.head_a2a(s, ctx);

  std::vector<int> lane_t(sz(N), -1);
  for (int i = 0; i < n; ++i) lane_t[sz(i)] = gt.a2l[sz(i)];
  std::vector<int> pair_t(sz(num_pairs(N)), -1);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pair_t[sz(pair_index(i, j, N))] = static_cast<int>(gt.pair(i, j));
  out.parts.marginal_a2l = loss_marginal(la, lane_t);
  if (N > 1) out.parts.marginal_a2a = loss_marginal(lh, pair_t);

  const MarginalDist md = model.marginals(la, lh, in);
  out.samples = sample_at_most(md, scene, sampling_config(mc, cfg.scoring, mc.k_train), gt, diverse_lanes);
  const ad::Var energies = model.score_modes(s, ctx, out.samples.samples, md);
  out.parts.joint_sm = loss_joint_sm(energies, out.samples.gt_index);

  std::vector<SceneMode> dec_modes{gt};
  for (size_t k = 0; k < out.samples.samples.size() && static_cast<int>(dec_modes.size()) < mc.k_decode_train; ++k)
    if (static_cast<int>(k) != *out.samples.gt_index) dec_modes.push_back(out.samples.samples[k]);
  const DecodeResult dec = model.decode(s, ctx, dec_modes);
  const TrajLayout lay{dec.num_samples, N, in.future_len};

  const std::span<const TrackFrame> gt_fut(in.future.data(), sz(n * in.future_len));
  const std::span<const unsigned char> gt_valid(in.fut_valid.data(), sz(n * in.future_len));
  out.parts.recon = loss_recon(dec.poses, lay, 0, n, gt_fut, gt_valid);
  out.parts.consistency_a2l = loss_consistency_a2l(dec.poses, lay, dec_modes, scene.lane_graph);
  const auto cur = current_poses(scene);
  if (n > 1) out.parts.consistency_a2a = loss_consistency_a2a(dec.poses, lay, dec_modes, cur, mc.theta_hat);
  const auto st = statics_of(scene);
  const ad::Var collision = collision_penalty(dec.poses, lay, st);
  out.parts.reg = loss_reg(s.l2_of_bound(), dec.controls, collision, cfg.reg);

  out.total = total_loss(out.parts, cfg.weights, &out.breakdown);
  return out;
}

Trainer::Trainer(TrainConfig cfg, std::vector<Scene> scenes)
    : cfg_(std::move(cfg)), model_(cfg_.model), scenes_(std::move(scenes)) {
  cfg_.validate();
  if (scenes_.empty()) throw Error("trainer: no training scenes");
  inputs_.reserve(scenes_.size());
  for (const auto& s : scenes_) {
    if (!s.has_futures()) throw GTMissing("trainer: training scenes need futures");
    inputs_.push_back(prepare_input(s, cfg_.model));
  }
  model_.init_params(state_.params, cfg_.seed);
  state_.adam = nn::Adam(cfg_.adam);
  state_.rng.seed(cfg_.seed);
}

int Trainer::next_scene() {
  if (state_.cursor >= static_cast<int>(state_.order.size())) {
    state_.order.resize(scenes_.size());
    std::iota(state_.order.begin(), state_.order.end(), 0);
    std::shuffle(state_.order.begin(), state_.order.end(), state_.rng);
    state_.cursor = 0;
  }
  return state_.order[sz(state_.cursor++)];
}

LossBreakdown Trainer::step() {
  nn::GradStore grads;
  LossBreakdown sum;
  const double w = 1.0 / cfg_.batch_size;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const int idx = next_scene();
    nn::Scope s(state_.params);
    SceneLoss l = scene_loss(model_, s, inputs_[sz(idx)], scenes_[sz(idx)], cfg_, cfg_.diverse_lanes);
    if (!finite(l.total.item()))
      throw NumericError("non-finite loss at step " + std::to_string(state_.step) + " on scene " + std::to_string(idx));
    ad::backward(l.total);
    nn::accumulate(grads, s.grads(), w);
    sum += l.breakdown.scaled(w);
  }
  const double progress = cfg_.steps > 0 ? std::min(1.0, static_cast<double>(state_.step) / cfg_.steps) : 1.0;
  const double lr_scale =
      cfg_.lr_final_ratio + (1.0 - cfg_.lr_final_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  const double gnorm = state_.adam.step(state_.params, grads, lr_scale);
  if (!finite(gnorm)) throw NumericError("non-finite gradient at step " + std::to_string(state_.step));
  ++state_.step;
  return sum;
}

void Trainer::run(const std::function<void(std::int64_t, const LossBreakdown&)>& on_step) {
  while (state_.step < cfg_.steps) {
    const LossBreakdown b = step();
    if (on_step) on_step(state_.step, b);
  }
}

Prediction predict(const CttModel& model, const nn::ParamStore& params, const Scene& scene, int K,
                   const std::optional<SceneMode>& override_mode) {
  if (K < 1) throw Error("predict: K must be >= 1");
  const ModelConfig& mc = model.config();
  const ModelInput in = prepare_input(scene, mc);
  nn::Scope s(params);
  const ContextTensors ctx = model.encode(s, in);
  Prediction p;
  p.marginals = model.marginals(model.head_a2l(s, ctx), model.head_a2a(s, ctx), in);
  std::vector<SceneMode> modes;
  if (override_mode) {
    if (override_mode->num_agents() != scene.num_agents() ||
        override_mode->a2a.size() != sz(num_pairs(scene.num_agents())))
      throw Error("predict: override mode does not match the scene");
    for (int l : override_mode->a2l)
      if (l < 0 || l > scene.num_lanes()) throw Error("predict: override lane out of range");
    modes.push_back(*override_mode);
  } else {
    modes = sample_at_most(p.marginals, scene, sampling_config(mc, {}, K), std::nullopt, false).samples;
  }
  const ad::Var e = model.score_modes(s, ctx, modes, p.marginals);
  std::vector<int> order(modes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return e(a, 0) > e(b, 0); });
  for (int k : order) {
    p.modes.push_back(modes[sz(k)]);
    p.energies.push_back(e(k, 0));
  }
  p.probs = softmax(p.energies);
  const DecodeResult dec = model.decode(s, ctx, p.modes);
  p.trajectories = to_frames(dec, in);
  return p;
}

SceneMetrics evaluate_scene(const CttModel& model, const nn::ParamStore& params, const Scene& scene, int K) {
  if (!scene.has_futures()) throw GTMissing("evaluate: scene has no futures");
  const ModelConfig& mc = model.config();
  const SceneMode gt = extract_gtsm(scene, mc.theta_hat).mode;
  const Prediction p = predict(model, params, scene, K);
  SceneMetrics m;
  m.disp = ade_fde(p.trajectories, p.probs, scene);

  const ModelInput in = prepare_input(scene, mc);
  nn::Scope s(params);
  const ContextTensors ctx = model.encode(s, in);
  const SMSampleSet forced = sample_at_most(p.marginals, scene, sampling_config(mc, {}, K), gt, false);
  const ad::Var fe = model.score_modes(s, ctx, forced.samples, p.marginals);
  m.modes = mode_metrics(p.marginals, gt, forced.samples, fe.value(), p.modes, p.energies);

  m.consistency = consistency_rate(scene, p.trajectories, p.modes, mc.theta_hat);
  m.cover = cover_rates(scene, p.trajectories, p.probs, gt, mc.theta_hat);
  m.collision = collision_rate(p.trajectories, p.probs, statics_of(scene));
  return m;
}

EvalReport evaluate(const CttModel& model, const nn::ParamStore& params, const std::vector<Scene>& scenes, int K,
                    std::vector<SceneMetrics>* per_scene) {
  MetricAccumulator acc;
  if (per_scene) per_scene->clear();
  for (size_t i = 0; i < scenes.size(); ++i) {
    const SceneMetrics m = evaluate_scene(model, params, scenes[i], K);
    acc.add(static_cast<int>(i), m);
    if (per_scene) per_scene->push_back(m);
  }
  return acc.report();
}

}  // namespace ctt
