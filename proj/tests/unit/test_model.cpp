#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctt/model.hpp"
#include "ctt/synth.hpp"
#include "ctt/trainer.hpp"
#include "test_util.hpp"

using namespace ctt;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.decoder_rounds = 2;
  return c;
}

Scene synth(TemplateKind k, std::uint64_t seed) { return gen_scene(default_template(k), seed); }

void expect_all_near(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  EXPECT_LE(worst, tol);
}

SceneMode some_mode(const Scene& s, int variant) {
  SceneMode m;
  for (int i = 0; i < s.num_agents(); ++i) m.a2l.push_back((i + variant) % (s.num_lanes() + 1));
  for (int p = 0; p < num_pairs(s.num_agents()); ++p) m.a2a.push_back(static_cast<Homotopy>((p + variant) % 3));
  return m;
}

}  // namespace

TEST(Model, ShapesAndNormalization) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 1);
  const Scene s = synth(TemplateKind::StraightMultiLane, 3);
  const ModelInput in = prepare_input(s, cfg);
  const int N = s.num_agents(), M = s.num_lanes(), Th = cfg.history_len, Tf = cfg.future_len;
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  EXPECT_EQ(ctx.agent_hist.rows(), N * Th);
  EXPECT_EQ(ctx.lanes.rows(), M);
  EXPECT_EQ(ctx.a2a_edges.rows(), N * N * Th);
  EXPECT_EQ(ctx.a2l_edges.rows(), N * M * Th);
  EXPECT_EQ(ctx.agent_future.rows(), N * Tf);
  EXPECT_EQ(ctx.agent_hist.cols(), cfg.d_model);
  const auto la = model.head_a2l(sc, ctx);
  const auto lh = model.head_a2a(sc, ctx);
  EXPECT_EQ(la.rows(), N);
  EXPECT_EQ(la.cols(), M + 1);
  EXPECT_EQ(lh.rows(), num_pairs(N));
  for (int r = 0; r < la.rows(); ++r) {
    double z = 0;
    for (int c = 0; c < la.cols(); ++c) z += std::exp(la(r, c));
    EXPECT_NEAR(z, 1.0, 1e-5);
  }
  for (int r = 0; r < lh.rows(); ++r) {
    double z = 0;
    for (int c = 0; c < 3; ++c) z += std::exp(lh(r, c));
    EXPECT_NEAR(z, 1.0, 1e-5);
  }
  const std::vector<SceneMode> modes{some_mode(s, 0), some_mode(s, 1)};
  const auto dec = model.decode(sc, ctx, modes);
  EXPECT_EQ(dec.poses.rows(), 2 * N * Tf);
  EXPECT_EQ(dec.poses.cols(), 4);
  EXPECT_EQ(dec.speed.rows(), 2 * N * Tf);
}

TEST(Model, PairHeadIsSymmetric) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 2);
  const Scene s = synth(TemplateKind::Merge, 5);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  std::vector<std::pair<int, int>> fwd, bwd;
  for (int i = 0; i < s.num_agents(); ++i)
    for (int j = i + 1; j < s.num_agents(); ++j) {
      fwd.push_back({i, j});
      bwd.push_back({j, i});
    }
  const auto a = model.head_a2a_pairs(sc, ctx, fwd), b = model.head_a2a_pairs(sc, ctx, bwd);
  EXPECT_EQ(a.value(), b.value());
}

TEST(Model, SingleAgentAndNoLanes) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 3);
  Scene s;
  s.agents.push_back(test::straight_agent(0, 0, 0, 5));
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  const auto la = model.head_a2l(sc, ctx);
  ASSERT_EQ(la.cols(), 1);
  EXPECT_NEAR(la(0, 0), 0.0, 1e-12);
  EXPECT_EQ(model.head_a2a(sc, ctx).rows(), 0);
  const auto e = model.energy(sc, ctx, {SceneMode{{0}, {}}});
  EXPECT_TRUE(std::isfinite(e(0, 0)));
}

TEST(Model, ZeroEncoderRoundsEqualsEmbedding) {
  ModelConfig cfg = small_config();
  cfg.encoder_rounds = 0;
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 4);
  const Scene s = synth(TemplateKind::Intersection, 1);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope a(ps), b(ps);
  const auto e = model.embed_scene(a, in), c = model.encode(b, in);
  EXPECT_EQ(e.agent_hist.value(), c.agent_hist.value());
  EXPECT_EQ(e.a2a_edges.value(), c.a2a_edges.value());
  EXPECT_EQ(e.a2l_edges.value(), c.a2l_edges.value());
}

TEST(Model, EquivarianceUnderRigidTransforms) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-500, 500), a(-3.14, 3.14);
  for (int k = 0; k < kNumTemplates; ++k) {
    const Scene s = synth(static_cast<TemplateKind>(k), 10 + k);
    const RigidTransform T{u(rng), u(rng), a(rng)};
    const Scene t = transform_scene(s, T);
    const ModelInput i0 = prepare_input(s, cfg), i1 = prepare_input(t, cfg);
    nn::Scope s0(ps), s1(ps);
    const auto c0 = model.encode(s0, i0), c1 = model.encode(s1, i1);
    expect_all_near(c0.agent_hist.value(), c1.agent_hist.value(), 1e-9);
    expect_all_near(c0.lanes.value(), c1.lanes.value(), 1e-9);
    expect_all_near(c0.a2a_edges.value(), c1.a2a_edges.value(), 1e-9);
    expect_all_near(c0.a2l_edges.value(), c1.a2l_edges.value(), 1e-9);
    const std::vector<SceneMode> modes{some_mode(s, 0), some_mode(s, 2)};
    const auto d0 = to_frames(model.decode(s0, c0, modes), i0);
    const auto d1 = to_frames(model.decode(s1, c1, modes), i1);
    for (size_t q = 0; q < d0.size(); ++q)
      for (size_t i = 0; i < d0[q].size(); ++i)
        for (size_t tt = 0; tt < d0[q][i].size(); ++tt) {
          const Pose4 p = T.apply(d0[q][i][tt].pose);
          EXPECT_NEAR(p.x, d1[q][i][tt].pose.x, 1e-4);
          EXPECT_NEAR(p.y, d1[q][i][tt].pose.y, 1e-4);
          EXPECT_NEAR(p.sin_h, d1[q][i][tt].pose.sin_h, 1e-6);
        }
  }
}

TEST(Model, PaddingIsNeutral) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 7);
  const Scene s = synth(TemplateKind::Overtake, 4);
  const int n = s.num_agents(), m = s.num_lanes(), Th = cfg.history_len;
  const ModelInput in0 = prepare_input(s, cfg), in1 = prepare_input(s, cfg, n + 2, m + 1);
  EXPECT_EQ(in1.num_agents, n + 2);
  EXPECT_EQ(in1.real_agents, n);
  nn::Scope s0(ps), s1(ps);
  const auto c0 = model.encode(s0, in0), c1 = model.encode(s1, in1);
  const int d = cfg.d_model, N1 = n + 2, M1 = m + 1;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < Th; ++t)
      for (int c = 0; c < d; ++c) EXPECT_NEAR(c0.agent_hist(i * Th + t, c), c1.agent_hist(i * Th + t, c), 1e-6);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < Th; ++t)
        for (int c = 0; c < d; ++c)
          EXPECT_NEAR(c0.a2a_edges((i * n + j) * Th + t, c), c1.a2a_edges((i * N1 + j) * Th + t, c), 1e-6);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < m; ++l)
      for (int t = 0; t < Th; ++t)
        for (int c = 0; c < d; ++c)
          EXPECT_NEAR(c0.a2l_edges((i * m + l) * Th + t, c), c1.a2l_edges((i * M1 + l) * Th + t, c), 1e-6);
  const auto m0 = model.marginals(model.head_a2l(s0, c0), model.head_a2a(s0, c0), in0);
  const auto m1 = model.marginals(model.head_a2l(s1, c1), model.head_a2a(s1, c1), in1);
  expect_all_near(m0.a2l_logp, m1.a2l_logp, 1e-6);
  expect_all_near(m0.a2a_logp, m1.a2a_logp, 1e-6);
  const std::vector<SceneMode> modes{some_mode(s, 0), some_mode(s, 1)};
  expect_all_near(model.energy(s0, c0, modes).value(), model.energy(s1, c1, modes).value(), 1e-6);
  const auto d0 = to_frames(model.decode(s0, c0, modes), in0);
  const auto d1 = to_frames(model.decode(s1, c1, modes), in1);
  ASSERT_EQ(d1[0].size(), static_cast<size_t>(n));
  for (size_t q = 0; q < d0.size(); ++q)
    for (int i = 0; i < n; ++i)
      for (size_t t = 0; t < d0[q][static_cast<size_t>(i)].size(); ++t) {
        EXPECT_NEAR(d0[q][static_cast<size_t>(i)][t].pose.x, d1[q][static_cast<size_t>(i)][t].pose.x, 1e-6);
        EXPECT_NEAR(d0[q][static_cast<size_t>(i)][t].pose.y, d1[q][static_cast<size_t>(i)][t].pose.y, 1e-6);
      }
}

TEST(Model, DeterministicAndDuplicateModesShareEnergy) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore p1, p2;
  model.init_params(p1, 8);
  model.init_params(p2, 8);
  EXPECT_EQ(p1, p2);
  const Scene s = synth(TemplateKind::ParkedMergeIn, 2);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope a(p1), b(p2);
  const auto ca = model.encode(a, in), cb = model.encode(b, in);
  EXPECT_EQ(ca.agent_hist.value(), cb.agent_hist.value());
  const SceneMode m = some_mode(s, 1);
  const auto e = model.energy(a, ca, {m, m, some_mode(s, 2)});
  EXPECT_EQ(e(0, 0), e(1, 0));
}

TEST(Model, ZeroControlsRollStraight) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 9);
  for (auto& [name, t] : ps.all())
    if (name.rfind("dec.out.", 0) == 0 && name.find(".l2.") != std::string::npos)
      std::fill(t.data.begin(), t.data.end(), 0.0);
  const Scene s = synth(TemplateKind::StraightMultiLane, 6);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  const auto fr = to_frames(model.decode(sc, ctx, {some_mode(s, 0)}), in);
  for (int i = 0; i < s.num_agents(); ++i) {
    const TrackFrame& c = s.agents[static_cast<size_t>(i)].current();
    for (int t = 0; t < cfg.future_len; ++t) {
      const double d = c.speed * s.dt * (t + 1);
      EXPECT_NEAR(fr[0][static_cast<size_t>(i)][static_cast<size_t>(t)].pose.x, c.pose.x + d * c.pose.cos_h, 1e-9);
      EXPECT_NEAR(fr[0][static_cast<size_t>(i)][static_cast<size_t>(t)].pose.y, c.pose.y + d * c.pose.sin_h, 1e-9);
    }
  }
}

TEST(Model, ConditioningChangesOnlyThroughModes) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 10);
  const Scene s = synth(TemplateKind::StraightMultiLane, 8);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  SceneMode a = some_mode(s, 0), b = a;
  b.a2l[0] = (a.a2l[0] + 1) % (s.num_lanes() + 1);
  const auto fr = to_frames(model.decode(sc, ctx, {a, b, a}), in);
  double diff = 0;
  for (size_t t = 0; t < fr[0][0].size(); ++t) diff += std::abs(fr[0][0][t].pose.x - fr[1][0][t].pose.x);
  EXPECT_GT(diff, 0.0);
  for (size_t i = 0; i < fr[0].size(); ++i)
    for (size_t t = 0; t < fr[0][i].size(); ++t) EXPECT_EQ(fr[0][i][t], fr[2][i][t]);
}

TEST(Model, AutoregressiveDecodeShapes) {
  ModelConfig cfg = small_config();
  cfg.decode = DecodeStrategy::Autoregressive;
  cfg.future_len = 4;
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 11);
  Scene s = test::two_lane_scene(2);
  for (auto& a : s.agents) a.future->resize(4);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  const auto dec = model.decode(sc, ctx, {some_mode(s, 0)});
  EXPECT_EQ(dec.poses.rows(), 2 * 4);
}

TEST(Model, DirectEmissionWithoutDynamics) {
  ModelConfig cfg = small_config();
  cfg.use_dynamics = false;
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 12);
  const Scene s = test::two_lane_scene(2);
  const ModelInput in = prepare_input(s, cfg);
  nn::Scope sc(ps);
  const auto ctx = model.encode(sc, in);
  const auto dec = model.decode(sc, ctx, {some_mode(s, 0)});
  EXPECT_FALSE(static_cast<bool>(dec.controls) && dec.controls.rows() > 0);
  for (int r = 0; r < dec.poses.rows(); ++r)
    EXPECT_NEAR(dec.poses(r, 2) * dec.poses(r, 2) + dec.poses(r, 3) * dec.poses(r, 3), 1.0, 1e-9);
}

class ParameterGradient : public ::testing::TestWithParam<int> {};

TEST_P(ParameterGradient, MatchesFiniteDifferencesPerTerm) {
  TrainConfig tc;
  tc.model.d_model = 8;
  tc.model.heads = 2;
  tc.model.encoder_rounds = 1;
  tc.model.energy_rounds = 1;
  tc.model.decoder_rounds = 1;
  tc.model.k_train = 3;
  tc.model.k_decode_train = 2;
  double* terms[] = {&tc.weights.marginal_a2l, &tc.weights.marginal_a2a, &tc.weights.joint_sm, &tc.weights.recon,
                     &tc.weights.consistency_a2l, &tc.weights.consistency_a2a, &tc.weights.reg};
  for (double* w : terms) *w = 0.0;
  *terms[GetParam()] = 1.0;
  const CttModel model(tc.model);
  nn::ParamStore ps;
  model.init_params(ps, 13);
  Scene s = test::two_lane_scene(2);
  const ModelInput in = prepare_input(s, tc.model);
  auto loss = [&](const nn::ParamStore& p) {
    nn::Scope sc(p);
    return scene_loss(model, sc, in, s, tc, false);
  };
  nn::Scope sc(ps);
  const SceneLoss base = scene_loss(model, sc, in, s, tc, false);
  ad::backward(base.total);
  const auto grads = sc.grads();
  std::vector<std::string> probe;
  for (const auto& [name, t] : ps.all())
    if (GetParam() != 2 || name.rfind("energy.", 0) == 0) probe.push_back(name);
  std::mt19937_64 rng(14);
  int checked = 0;
  for (const auto& name : probe) {
    const auto& t = ps.at(name);
    std::uniform_int_distribution<size_t> pick(0, t.data.size() - 1);
    const size_t idx = pick(rng);
    const double h = 1e-5;
    nn::ParamStore p1 = ps, p2 = ps;
    p1.at(name).data[idx] += h;
    p2.at(name).data[idx] -= h;
    const SceneLoss l1 = loss(p1), l2 = loss(p2);
    if (l1.samples.samples != base.samples.samples || l2.samples.samples != base.samples.samples) continue;
    const double fd = (l1.total.item() - l2.total.item()) / (2 * h);
    const double an = grads.count(name) ? grads.at(name)[idx] : 0.0;
    EXPECT_NEAR(an, fd, 1e-4 * std::max(1.0, std::abs(fd))) << name << "[" << idx << "]";
    ++checked;
  }
  EXPECT_GE(checked, static_cast<int>(probe.size()) / 2);
}

INSTANTIATE_TEST_SUITE_P(Terms, ParameterGradient, ::testing::Range(0, 7));

TEST(Model, LanelessSceneMatchesAllPaddedLanes) {
  const ModelConfig cfg = small_config();
  const CttModel model(cfg);
  nn::ParamStore ps;
  model.init_params(ps, 15);
  Scene s;
  s.agents.push_back(test::straight_agent(0, 0, 0, 5));
  s.agents.push_back(test::straight_agent(10, 3, 0.1, 6));
  const ModelInput a = prepare_input(s, cfg), b = prepare_input(s, cfg, 2, 2);
  nn::Scope sa(ps), sb(ps);
  const auto ca = model.encode(sa, a), cb = model.encode(sb, b);
  expect_all_near(ca.agent_hist.value(), cb.agent_hist.value(), 1e-9);
  const auto ma = model.marginals(model.head_a2l(sa, ca), model.head_a2a(sa, ca), a);
  const auto mb = model.marginals(model.head_a2l(sb, cb), model.head_a2a(sb, cb), b);
  expect_all_near(ma.a2l_logp, mb.a2l_logp, 1e-9);
  expect_all_near(ma.a2a_logp, mb.a2a_logp, 1e-9);
}
