#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ctt/dynamics.hpp"
#include "test_util.hpp"

using namespace ctt;

TEST(Dynamics, ZeroControlsStraightLine) {
  const std::vector<Control> u(4, Control{0.0, 0.0});
  const auto tr = dynamics_rollout(Pose4::from_heading(0, 0, 0), 10.0, u, 0.5, AgentType::Vehicle);
  ASSERT_EQ(tr.size(), 4u);
  for (int t = 0; t < 4; ++t) {
    EXPECT_NEAR(tr[static_cast<size_t>(t)].pose.x, 5.0 * (t + 1), 1e-12);
    EXPECT_NEAR(tr[static_cast<size_t>(t)].pose.y, 0.0, 1e-12);
  }
}

TEST(Dynamics, ConstantYawRateTracesCircle) {
  const double r = 20.0, v = 5.0;
  double prev_err = 1e9;
  for (int refine : {1, 4, 16}) {
    const double dt = 0.1 / refine;
    const int T = static_cast<int>(std::round(2 * std::numbers::pi * r / v / dt));
    const std::vector<Control> u(static_cast<size_t>(T), Control{0.0, v / r});
    const auto tr = dynamics_rollout(Pose4::from_heading(0, 0, 0), v, u, dt, AgentType::Vehicle);
    double err = 0;
    for (const auto& f : tr) err = std::max(err, std::abs(std::hypot(f.pose.x, f.pose.y - r) - r));
    EXPECT_LT(err, prev_err);
    prev_err = err;
  }
  EXPECT_LT(prev_err, 0.05);
}

TEST(Dynamics, LimitsPerType) {
  const std::vector<Control> u(10, Control{100.0, 100.0});
  const auto veh = dynamics_rollout(Pose4::from_heading(0, 0, 0), 29.0, u, 0.5, AgentType::Vehicle);
  for (const auto& f : veh) EXPECT_LE(f.speed, 30.0);
  EXPECT_NEAR(veh[0].pose.heading(), 0.5, 1e-12);
  const auto ped = dynamics_rollout(Pose4::from_heading(0, 0, 0), 1.0, u, 0.5, AgentType::Pedestrian);
  EXPECT_NEAR(ped.back().speed, 3.0, 1e-12);
  const std::vector<Control> brake(10, Control{-100.0, 0.0});
  const auto stop = dynamics_rollout(Pose4::from_heading(0, 0, 0), 5.0, brake, 0.5, AgentType::Vehicle);
  for (const auto& f : stop) EXPECT_GE(f.speed, 0.0);
}

TEST(Dynamics, BatchedMatchesScalarAndGradients) {
  std::mt19937_64 rng(1);
  const int B = 2, T = 6;
  const std::vector<Pose4> init{Pose4::from_heading(1, 2, 0.3), Pose4::from_heading(-4, 0, 2.0)};
  const std::vector<double> speed{6.0, 9.0};
  const std::vector<AgentType> types{AgentType::Vehicle, AgentType::Cyclist};
  const auto u0 = test::random_vec(rng, B * T * 2, -0.5, 0.5);
  const auto res = dynamics_rollout(init, speed, types, ad::constant(B * T, 2, u0), T, 0.25);
  for (int b = 0; b < B; ++b) {
    std::vector<Control> u;
    for (int t = 0; t < T; ++t) u.push_back({u0[static_cast<size_t>((b * T + t) * 2)], u0[static_cast<size_t>((b * T + t) * 2 + 1)]});
    const auto tr = dynamics_rollout(init[static_cast<size_t>(b)], speed[static_cast<size_t>(b)], u, 0.25, types[static_cast<size_t>(b)]);
    for (int t = 0; t < T; ++t) {
      EXPECT_NEAR(res.poses(b * T + t, 0), tr[static_cast<size_t>(t)].pose.x, 1e-12);
      EXPECT_NEAR(res.poses(b * T + t, 1), tr[static_cast<size_t>(t)].pose.y, 1e-12);
      EXPECT_NEAR(res.speed(b * T + t, 0), tr[static_cast<size_t>(t)].speed, 1e-12);
    }
  }
  const double err = test::max_rel_grad_error(
      [&](const ad::Var& u) {
        const auto r = dynamics_rollout(init, speed, types, u, T, 0.25);
        return ad::add(ad::sum(ad::square(r.poses)), ad::sum(r.speed));
      },
      u0, B * T, 2);
  EXPECT_LT(err, 1e-4);
}
