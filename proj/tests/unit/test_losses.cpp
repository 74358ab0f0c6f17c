#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ctt/errors.hpp"
#include "ctt/losses.hpp"
#include "ctt/trainer.hpp"
#include "test_util.hpp"

using namespace ctt;
using ad::Var;

namespace {

/// [K*N*T, 4] pose tensor from plain positions (heading along +x).
std::vector<double> pose_rows(const std::vector<Vec2>& xy) {
  std::vector<double> v;
  for (const auto& p : xy) v.insert(v.end(), {p.x, p.y, 0.0, 1.0});
  return v;
}

Var poses_var(const std::vector<Vec2>& xy) { return ad::leaf(static_cast<int>(xy.size()), 4, pose_rows(xy)); }

SceneMode mode_of(std::vector<int> a2l, std::vector<Homotopy> a2a = {}) { return SceneMode{std::move(a2l), std::move(a2a)}; }

}  // namespace

TEST(LossMarginal, AnalyticValues) {
  const double l3 = std::log(1.0 / 3.0);
  const std::vector<int> t{2};
  EXPECT_NEAR(loss_marginal(ad::constant(1, 3, {l3, l3, l3}), t).item(), std::log(3.0), 1e-12);
  EXPECT_NEAR(loss_marginal(ad::constant(1, 3, {-1e9, -1e9, 0.0}), t).item(), 0.0, 1e-12);
}

TEST(LossMarginal, MeanOverValidRowsOnly) {
  std::mt19937_64 rng(1);
  const Var logits = ad::constant(4, 3, test::random_vec(rng, 12, -2, 2));
  const Var lp = ad::log_softmax_rows(logits);
  const std::vector<int> all{0, 2, 1, -1};
  double manual = 0;
  for (int r = 0; r < 3; ++r) manual -= lp(r, all[static_cast<size_t>(r)]);
  EXPECT_NEAR(loss_marginal(lp, all).item(), manual / 3, 1e-12);
  const std::vector<int> none{-1, -1, -1, -1};
  EXPECT_EQ(loss_marginal(lp, none).item(), 0.0);
}

TEST(LossJointSM, AnalyticValuesAndShift) {
  EXPECT_NEAR(loss_joint_sm(ad::constant(1, 1, {3.7}), 0).item(), 0.0, 1e-12);
  EXPECT_NEAR(loss_joint_sm(ad::constant(4, 1, 0.5), 0).item(), std::log(4.0), 1e-12);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const auto e = test::random_vec(rng, 6, -30, 30);
    auto shifted = e;
    for (auto& x : shifted) x += 123.0;
    const int gt = rep % 6;
    const double a = loss_joint_sm(ad::constant(6, 1, e), gt).item();
    const double b = loss_joint_sm(ad::constant(6, 1, shifted), gt).item();
    EXPECT_NEAR(a, b, 1e-9);
    double mx = *std::max_element(e.begin(), e.end()), z = 0;
    for (double x : e) z += std::exp(x - mx);
    EXPECT_NEAR(a, mx + std::log(z) - e[static_cast<size_t>(gt)], 1e-9);
  }
  EXPECT_THROW(loss_joint_sm(ad::constant(2, 1, 0.0), std::nullopt), GTMissing);
}

TEST(LossJointSM, LargeEnergiesStayFinite) {
  const double v = loss_joint_sm(ad::constant(3, 1, {1e4, -1e4, 0.0}), 1).item();
  EXPECT_NEAR(v, 2e4, 1e-6);
}

TEST(LossRecon, OffsetMaskAndNonGtSamples) {
  const int K = 2, N = 2, T = 3;
  const TrajLayout lay{K, N, T};
  std::vector<TrackFrame> gt;
  std::vector<unsigned char> valid(N * T, 1);
  std::vector<Vec2> xy(K * N * T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      gt.push_back(TrackFrame{Pose4{2.0 * t, 5.0 * i, 0, 1}, 1.0, true});
      xy[static_cast<size_t>(lay.row(0, i, t))] = {2.0 * t, 5.0 * i};
      xy[static_cast<size_t>(lay.row(1, i, t))] = {-40.0, 17.0};
    }
  EXPECT_NEAR(loss_recon(poses_var(xy), lay, 0, N, gt, valid).item(), 0.0, 1e-12);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      auto& p = xy[static_cast<size_t>(lay.row(0, i, t))];
      p.x += 0.6;
      p.y -= 0.8;
    }
  const double base = loss_recon(poses_var(xy), lay, 0, N, gt, valid).item();
  EXPECT_NEAR(base, 1.0, 1e-12);
  xy[static_cast<size_t>(lay.row(0, 1, 2))].x += 30.0;
  valid[static_cast<size_t>(1 * T + 2)] = 0;
  const double masked = loss_recon(poses_var(xy), lay, 0, N, gt, valid).item();
  EXPECT_NEAR(masked, 1.0, 1e-12);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) xy[static_cast<size_t>(lay.row(1, i, t))] = {99.0 * i, -7.0 * t};
  EXPECT_EQ(loss_recon(poses_var(xy), lay, 0, N, gt, valid).item(), masked);
}

TEST(LossConsistencyA2L, MarginFormula) {
  LaneGraph g;
  g.lanes.push_back(test::straight_lane(1, 0, 0, 100, 0, 11, 1.75));
  const TrajLayout lay{1, 2, 2};
  // Agent 0 ends 1 m beyond the boundary, agent 1 ends on the centerline.
  const std::vector<Vec2> xy{{40, 0}, {50, 2.75}, {40, 0}, {50, 0}};
  EXPECT_NEAR(loss_consistency_a2l(poses_var(xy), lay, {mode_of({1, 1}, {Homotopy::S})}, g).item(), 1.0, 1e-12);
  EXPECT_NEAR(loss_consistency_a2l(poses_var(xy), lay, {mode_of({0, 1}, {Homotopy::S})}, g).item(), 0.0, 1e-12);
  const std::vector<Vec2> inside{{40, 0}, {50, 0.5}, {40, 0}, {50, -1.0}};
  EXPECT_EQ(loss_consistency_a2l(poses_var(inside), lay, {mode_of({1, 1}, {Homotopy::S})}, g).item(), 0.0);
}

TEST(LossConsistencyA2L, GradientMatchesFiniteDifferences) {
  LaneGraph g;
  g.lanes.push_back(test::straight_lane(1, 0, 0, 60, 20, 7, 1.75));
  g.lanes.push_back(test::straight_lane(2, 0, 4, 60, 24, 7, 1.75));
  const TrajLayout lay{2, 2, 3};
  const std::vector<SceneMode> modes{mode_of({1, 2}, {Homotopy::S}), mode_of({2, 0}, {Homotopy::CW})};
  std::mt19937_64 rng(3);
  auto x0 = test::random_vec(rng, 2 * 2 * 3 * 4, 0, 1);
  for (size_t r = 0; r < x0.size() / 4; ++r) {
    x0[r * 4] = 10 + 40 * x0[r * 4];
    x0[r * 4 + 1] = 10 * x0[r * 4 + 1];
    x0[r * 4 + 2] = 0.0;
    x0[r * 4 + 3] = 1.0;
  }
  EXPECT_LT(test::max_rel_grad_error([&](const Var& p) { return loss_consistency_a2l(p, lay, modes, g); }, x0, 12, 4),
            1e-5);
}

namespace {

/// Agent 0 parked at the origin; agent 1 orbits it counterclockwise by `sweep`.
std::vector<Vec2> orbit(double sweep, int T) {
  std::vector<Vec2> xy(static_cast<size_t>(2 * T));
  for (int t = 0; t < T; ++t) {
    const double a = sweep * (t + 1) / T;
    xy[static_cast<size_t>(T + t)] = {10 * std::cos(a), 10 * std::sin(a)};
  }
  return xy;
}

}  // namespace

TEST(LossConsistencyA2A, MarginFormula) {
  const double th = std::numbers::pi / 6;
  const int T = 12;
  const TrajLayout lay{1, 2, T};
  const std::vector<Pose4> cur{Pose4{0, 0, 0, 1}, Pose4{10, 0, 0, 1}};
  const auto xy = orbit(th + 0.2, T);
  EXPECT_NEAR(loss_consistency_a2a(poses_var(xy), lay, {mode_of({0, 0}, {Homotopy::S})}, cur, th).item(), 0.2, 1e-9);
  EXPECT_NEAR(loss_consistency_a2a(poses_var(xy), lay, {mode_of({0, 0}, {Homotopy::CCW})}, cur, th).item(), 0.0,
              1e-12);
  EXPECT_NEAR(loss_consistency_a2a(poses_var(xy), lay, {mode_of({0, 0}, {Homotopy::CW})}, cur, th).item(),
              2 * th + 0.2, 1e-9);
}

TEST(LossConsistencyA2A, GradientMatchesFiniteDifferences) {
  const double th = std::numbers::pi / 6;
  const int T = 6;
  const TrajLayout lay{2, 2, T};
  const std::vector<Pose4> cur{Pose4{0, 0, 0, 1}, Pose4{10, 0, 0, 1}};
  auto a = orbit(th + 0.3, T), b = orbit(-0.4, T);
  a.insert(a.end(), b.begin(), b.end());
  std::mt19937_64 rng(4);
  auto x0 = pose_rows(a);
  for (size_t r = 0; r < a.size(); ++r) {
    x0[r * 4] += 0.3 * test::random_vec(rng, 1)[0];
    x0[r * 4 + 1] += 0.3 * test::random_vec(rng, 1)[0];
  }
  const std::vector<SceneMode> modes{mode_of({0, 0}, {Homotopy::S}), mode_of({0, 0}, {Homotopy::CCW})};
  EXPECT_LT(test::max_rel_grad_error([&](const Var& p) { return loss_consistency_a2a(p, lay, modes, cur, th); }, x0,
                                     static_cast<int>(a.size()), 4),
            1e-3);
}

TEST(LossConsistencyA2A, CoincidentPredictionsStayFinite) {
  const TrajLayout lay{1, 2, 2};
  const std::vector<Pose4> cur{Pose4{0, 0, 0, 1}, Pose4{0, 0, 0, 1}};
  const Var p = poses_var({{1, 1}, {2, 2}, {1, 1}, {2, 2}});
  const Var l = loss_consistency_a2a(p, lay, {mode_of({0, 0}, {Homotopy::CCW})}, cur, 0.5);
  EXPECT_TRUE(std::isfinite(l.item()));
  ad::backward(l);
  for (double g : p.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(CollisionPenalty, DiscArithmeticAndMonotonicity) {
  const std::vector<AgentStatic> st{{AgentType::Vehicle, 4, 2}, {AgentType::Vehicle, 4, 2}};
  EXPECT_NEAR(disc_radius(st[0]), std::sqrt(5.0), 1e-12);
  const TrajLayout one{1, 2, 1};
  EXPECT_NEAR(collision_penalty(poses_var({{3, 3}, {3, 3}}), one, st).item(), 2 * std::sqrt(5.0), 1e-12);
  const TrajLayout three{1, 2, 3};
  EXPECT_NEAR(collision_penalty(poses_var({{0, 0}, {0, 0}, {0, 0}, {0, 0}, {0, 0}, {0, 0}}), three, st).item(),
              3 * 2 * std::sqrt(5.0), 1e-12);
  double prev = 1e9;
  for (double d = 0.0; d < 6.0; d += 0.25) {
    const double v = collision_penalty(poses_var({{0, 0}, {d, 0}}), one, st).item();
    EXPECT_LE(v, prev);
    prev = v;
  }
  EXPECT_EQ(collision_penalty(poses_var({{0, 0}, {20, 0}}), one, st).item(), 0.0);
}

TEST(LossReg, Formula) {
  const RegWeights w{0.5, 2.0, 3.0};
  const Var ctrl = ad::constant(2, 2, {1, 2, 3, 4});
  const double v = loss_reg(ad::scalar(4.0), ctrl, ad::scalar(1.5), w).item();
  EXPECT_NEAR(v, 0.5 * 4 + 2.0 * (1 + 4 + 9 + 16) / 4.0 + 3.0 * 1.5, 1e-12);
  EXPECT_EQ(loss_reg(ad::scalar(0), ad::constant(3, 2, 0.0), ad::scalar(0), RegWeights{}).item(), 0.0);
  EXPECT_NEAR(loss_reg(ad::scalar(4.0), Var{}, ad::scalar(0), w).item(), 2.0, 1e-12);
}

TEST(TotalLoss, LinearityAndBreakdown) {
  LossParts p;
  p.marginal_a2l = ad::scalar(1.0);
  p.marginal_a2a = ad::scalar(2.0);
  p.joint_sm = ad::scalar(3.0);
  p.recon = ad::scalar(4.0);
  p.consistency_a2l = ad::scalar(5.0);
  p.consistency_a2a = ad::scalar(6.0);
  p.reg = ad::scalar(7.0);
  LossWeights zero{0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(total_loss(p, zero).item(), 0.0);
  LossWeights w{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  LossBreakdown b;
  const double v = total_loss(p, w, &b).item();
  EXPECT_NEAR(v, 0.1 + 0.4 + 0.9 + 1.6 + 2.5 + 3.6 + 4.9, 1e-12);
  EXPECT_NEAR(b.total, v, 1e-12);
  EXPECT_NEAR(b.recon, 4.0, 1e-12);
  LossWeights w2 = w;
  w2.recon *= 3;
  EXPECT_NEAR(total_loss(p, w2).item() - v, 2 * 0.4 * 4.0, 1e-12);
  LossParts only;
  only.recon = ad::scalar(2.5);
  EXPECT_EQ(total_loss(only, LossWeights{}).item(), 2.5);
}

TEST(Losses, NonNegativeAndFiniteOnRandomInputs) {
  std::mt19937_64 rng(5);
  LaneGraph g;
  g.lanes.push_back(test::straight_lane(1, 0, 0, 100, 0));
  const std::vector<AgentStatic> st{{}, {AgentType::Cyclist, 1.8, 0.6}, {AgentType::Pedestrian, 0.5, 0.5}};
  const std::vector<Pose4> cur{Pose4{0, 0, 0, 1}, Pose4{5, 5, 0, 1}, Pose4{-5, 2, 0, 1}};
  for (int rep = 0; rep < 100; ++rep) {
    const TrajLayout lay{2, 3, 4};
    auto x = test::random_vec(rng, 24 * 4, -20, 20);
    const Var p = ad::constant(24, 4, x);
    std::vector<SceneMode> modes;
    for (int k = 0; k < 2; ++k) {
      SceneMode m;
      for (int i = 0; i < 3; ++i) m.a2l.push_back(static_cast<int>(rng() % 2));
      for (int q = 0; q < 3; ++q) m.a2a.push_back(static_cast<Homotopy>(rng() % 3));
      modes.push_back(m);
    }
    for (const Var& l : {loss_consistency_a2l(p, lay, modes, g), loss_consistency_a2a(p, lay, modes, cur, 0.5),
                         collision_penalty(p, lay, st)}) {
      EXPECT_GE(l.item(), 0.0);
      EXPECT_TRUE(std::isfinite(l.item()));
    }
    const Var lp = ad::log_softmax_rows(ad::constant(3, 4, test::random_vec(rng, 12, -5, 5)));
    const std::vector<int> t{0, 3, 1};
    EXPECT_GE(loss_marginal(lp, t).item(), 0.0);
    EXPECT_GE(loss_joint_sm(ad::constant(5, 1, test::random_vec(rng, 5, -9, 9)), 2).item(), 0.0);
  }
}

namespace {

nn::GradStore term_grads(int term) {
  TrainConfig tc;
  tc.model.d_model = 8;
  tc.model.heads = 2;
  tc.model.encoder_rounds = 1;
  tc.model.energy_rounds = 1;
  tc.model.decoder_rounds = 2;
  tc.model.k_train = 3;
  tc.model.k_decode_train = 2;
  double* terms[] = {&tc.weights.marginal_a2l, &tc.weights.marginal_a2a, &tc.weights.joint_sm, &tc.weights.recon,
                     &tc.weights.consistency_a2l, &tc.weights.consistency_a2a};
  for (double* w : terms) *w = 0.0;
  tc.weights.reg = 0.0;
  *terms[term] = 1.0;
  const CttModel model(tc.model);
  nn::ParamStore ps;
  model.init_params(ps, 21);
  const Scene s = test::two_lane_scene(3);
  const ModelInput in = prepare_input(s, tc.model);
  nn::Scope sc(ps);
  ad::backward(scene_loss(model, sc, in, s, tc, false).total);
  return sc.grads();
}

double grad_mass(const nn::GradStore& g, const std::string& prefix) {
  double m = 0;
  for (const auto& [name, v] : g)
    if (name.rfind(prefix, 0) == 0)
      for (double x : v) m += std::abs(x);
  return m;
}

}  // namespace

TEST(Losses, EncoderAndDecoderObjectivesAreDecoupled) {
  for (int term = 0; term < 3; ++term) {
    const auto g = term_grads(term);
    EXPECT_EQ(grad_mass(g, "dec."), 0.0) << term;
    EXPECT_GT(grad_mass(g, "emb."), 0.0) << term;
  }
  for (int term = 3; term < 6; ++term) {
    const auto g = term_grads(term);
    EXPECT_EQ(grad_mass(g, "head_a2l."), 0.0) << term;
    EXPECT_EQ(grad_mass(g, "head_a2a."), 0.0) << term;
    EXPECT_EQ(grad_mass(g, "energy"), 0.0) << term;
    EXPECT_GT(grad_mass(g, "dec."), 0.0) << term;
  }
}
