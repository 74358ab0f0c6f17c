#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ctt/errors.hpp"
#include "ctt/geometry.hpp"
#include "test_util.hpp"

using namespace ctt;

namespace {

Pose4 random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-50, 50), a(-4, 4);
  return Pose4::from_heading(u(rng), u(rng), a(rng));
}

void expect_pose_near(const Pose4& a, const Pose4& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(a.sin_h, b.sin_h, tol);
  EXPECT_NEAR(a.cos_h, b.cos_h, tol);
}

// Curved polyline: quarter circle of radius 20 plus a straight tail.
LanePolyline curved_lane() {
  LanePolyline l;
  l.id = 1;
  l.half_width = 1.8;
  for (int k = 0; k <= 12; ++k) {
    const double a = -std::numbers::pi / 2 + (std::numbers::pi / 2) * k / 12.0;
    l.points.push_back(Pose4::from_heading(20 * std::cos(a), 20 + 20 * std::sin(a), a + std::numbers::pi / 2));
  }
  for (int k = 1; k <= 4; ++k) l.points.push_back(Pose4::from_heading(20, 20 + 5.0 * k, std::numbers::pi / 2));
  return l;
}

}  // namespace

TEST(RelativePose, IdentityCase) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const Pose4 p = random_pose(rng);
    const Pose4 r = relative_pose(p, p);
    EXPECT_NEAR(r.x, 0.0, 1e-12);
    EXPECT_NEAR(r.y, 0.0, 1e-12);
    EXPECT_NEAR(r.sin_h, 0.0, 1e-12);
    EXPECT_NEAR(r.cos_h, 1.0, 1e-12);
  }
}

TEST(RelativePose, AxisAlignedTranslation) {
  expect_pose_near(relative_pose({0, 0, 0, 1}, {5, 0, 0, 1}), {5, 0, 0, 1}, 1e-12);
}

TEST(RelativePose, RotatedFrame) {
  const double h = std::numbers::pi / 2;
  expect_pose_near(relative_pose({0, 0, std::sin(h), std::cos(h)}, {0, 5, std::sin(h), std::cos(h)}), {5, 0, 0, 1},
                   1e-12);
}

TEST(RelativePose, MatchesAngleOracleAndIsRigidInvariant) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-100, 100), a(-3.1, 3.1);
  for (int k = 0; k < 1000; ++k) {
    const Pose4 p1 = random_pose(rng), p2 = random_pose(rng);
    const double h1 = p1.heading(), h2 = p2.heading();
    const double dx = p2.x - p1.x, dy = p2.y - p1.y;
    const Pose4 oracle = Pose4::from_heading(std::cos(h1) * dx + std::sin(h1) * dy,
                                             -std::sin(h1) * dx + std::cos(h1) * dy, h2 - h1);
    const Pose4 r = relative_pose(p1, p2);
    expect_pose_near(r, oracle, 1e-9);
    EXPECT_NEAR(r.sin_h * r.sin_h + r.cos_h * r.cos_h, 1.0, 1e-12);
    const RigidTransform T{u(rng), u(rng), a(rng)};
    expect_pose_near(relative_pose(T.apply(p1), T.apply(p2)), r, 1e-9);
  }
}

TEST(Projection, OnCenterline) {
  const LanePolyline l = test::straight_lane(1, 0, 0, 50, 0);
  const FrenetProj p = project_onto_polyline(Pose4::from_heading(20, 0, 0), l);
  EXPECT_NEAR(p.lat, 0.0, 1e-12);
  EXPECT_NEAR(p.s, 0.4 * 50, 1e-12);
  EXPECT_TRUE(p.in_extent);
}

TEST(Projection, LeftIsPositive) {
  const LanePolyline l = test::straight_lane(1, 0, 0, 50, 0);
  EXPECT_NEAR(project_onto_polyline(Pose4::from_heading(20, 1, 0), l).lat, 1.0, 1e-12);
  EXPECT_NEAR(project_onto_polyline(Pose4::from_heading(20, -1, 0), l).lat, -1.0, 1e-12);
}

TEST(Projection, BeyondEndIsClamped) {
  const LanePolyline l = test::straight_lane(1, 0, 0, 50, 0);
  const FrenetProj p = project_onto_polyline(Pose4::from_heading(53, 0, 0), l);
  EXPECT_NEAR(p.s, 50.0, 1e-12);
  EXPECT_NEAR(p.s_unclamped, 53.0, 1e-9);
  EXPECT_FALSE(p.in_extent);
}

TEST(Projection, AgreesWithDenseNearestPointSearch) {
  const LanePolyline l = curved_lane();
  // Dense samples with arc length.
  std::vector<std::array<double, 3>> dense;
  double acc = 0.0;
  for (size_t k = 0; k + 1 < l.points.size(); ++k) {
    const auto& a = l.points[k];
    const auto& b = l.points[k + 1];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const int n = 1000;
    for (int j = 0; j < n; ++j) {
      const double f = static_cast<double>(j) / n;
      dense.push_back({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), acc + f * len});
    }
    acc += len;
  }
  dense.push_back({l.points.back().x, l.points.back().y, acc});
  EXPECT_NEAR(l.length(), acc, 1e-9);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-5, 30), uy(-5, 45), s(-1, 1);
  int tested = 0;
  while (tested < 200) {
    const Pose4 p = Pose4::from_heading(ux(rng), uy(rng), s(rng));
    double best = 1e18, best_s = 0;
    std::array<double, 2> bp{};
    for (const auto& d : dense) {
      const double dd = std::hypot(p.x - d[0], p.y - d[1]);
      if (dd < best) {
        best = dd;
        best_s = d[2];
        bp = {d[0], d[1]};
      }
    }
    if (best > 8.0) continue;  // far points can have ambiguous nearest segments
    const FrenetProj pr = project_onto_polyline(p, l);
    if (!pr.in_extent) continue;
    EXPECT_NEAR(pr.s, best_s, 1e-2);
    EXPECT_NEAR(std::abs(pr.lat), best, 1e-3);
    EXPECT_NEAR(pr.point.x, bp[0], 2e-2);
    ++tested;
  }
}

TEST(EdgeFeatures, A2ASelfAndAhead) {
  AgentAux a{Pose4::from_heading(3, 4, 0.3), {AgentType::Vehicle, 4.5, 1.8}, 7.0};
  const auto self = a2a_edge_feature(a, a);
  EXPECT_NEAR(self[0], 0.0, 1e-12);
  EXPECT_NEAR(self[1], 0.0, 1e-12);
  EXPECT_NEAR(self[2], 0.0, 1e-12);
  EXPECT_NEAR(self[3], 1.0, 1e-12);
  AgentAux b{Pose4::from_heading(3 + 5 * std::cos(0.3), 4 + 5 * std::sin(0.3), 0.3), {AgentType::Cyclist, 1.8, 0.6},
             4.0};
  const auto f = a2a_edge_feature(a, b);
  EXPECT_EQ(f.size(), 4u + kAgentStaticDim);
  EXPECT_NEAR(f[0], 5.0, 1e-12);
  EXPECT_NEAR(f[1], 0.0, 1e-12);
  const auto st = static_features(b.statics, b.speed);
  for (int k = 0; k < kAgentStaticDim; ++k) EXPECT_EQ(f[4 + k], st[k]);
}

TEST(EdgeFeatures, A2LOnStartAndMidpoint) {
  const LanePolyline l = test::straight_lane(1, 0, 0, 10, 0);
  const auto f = a2l_edge_feature(Pose4::from_heading(0, 0, 0), l);
  EXPECT_NEAR(f[0], 0.0, 1e-12);
  EXPECT_NEAR(f[1], 0.0, 1e-12);
  EXPECT_NEAR(f[2], 0.0, 1e-12);
  EXPECT_NEAR(f[3], 1.0, 1e-12);
  EXPECT_NEAR(f[12], 0.0, 1e-12);  // lat
  EXPECT_NEAR(f[13], 0.0, 1e-12);  // s
  const auto g = a2l_edge_feature(Pose4::from_heading(5, -2, 0), l);
  EXPECT_NEAR(g[12], -2.0, 1e-12);
  EXPECT_NEAR(g[13], 5.0, 1e-12);
  EXPECT_EQ(g[14], 1.0);
}

TEST(EdgeFeatures, RigidInvariance) {
  std::mt19937_64 rng(4);
  const LanePolyline l = curved_lane();
  const LanePolyline l2 = test::straight_lane(2, 20, 40, 40, 60);
  std::uniform_real_distribution<double> u(-100, 100), a(-3, 3);
  for (int k = 0; k < 50; ++k) {
    const RigidTransform T{u(rng), u(rng), a(rng)};
    const Pose4 p = Pose4::from_heading(10 + a(rng), 5 + a(rng), a(rng));
    LanePolyline lt = l, l2t = l2;
    for (auto& q : lt.points) q = T.apply(q);
    for (auto& q : l2t.points) q = T.apply(q);
    const auto f0 = a2l_edge_feature(p, l), f1 = a2l_edge_feature(T.apply(p), lt);
    for (size_t i = 0; i < f0.size(); ++i) EXPECT_NEAR(f0[i], f1[i], 1e-9);
    const auto g0 = l2l_edge_feature(l, l2), g1 = l2l_edge_feature(lt, l2t);
    for (size_t i = 0; i < g0.size(); ++i) EXPECT_NEAR(g0[i], g1[i], 1e-9);
  }
}

TEST(EdgeFeatures, L2LSelfAndParallel) {
  const LanePolyline a = test::straight_lane(1, 0, 0, 30, 0);
  const auto self = l2l_edge_feature(a, a);
  ASSERT_EQ(self.size(), 16u);
  // start->start and end->end blocks are identities.
  for (int blk : {0, 3}) {
    EXPECT_NEAR(self[blk * 4 + 0], 0.0, 1e-12);
    EXPECT_NEAR(self[blk * 4 + 1], 0.0, 1e-12);
    EXPECT_NEAR(self[blk * 4 + 3], 1.0, 1e-12);
  }
  const LanePolyline b = test::straight_lane(2, 0, 3.5, 30, 3.5);
  const auto par = l2l_edge_feature(a, b);
  for (int blk = 0; blk < 4; ++blk) {
    EXPECT_NEAR(std::abs(par[blk * 4 + 1]), 3.5, 1e-12);
    EXPECT_NEAR(par[blk * 4 + 2], 0.0, 1e-12);
    EXPECT_NEAR(par[blk * 4 + 3], 1.0, 1e-12);
  }
}

TEST(Scene, ValidateRejectsBrokenInvariants) {
  Scene s = test::two_lane_scene();
  EXPECT_NO_THROW(validate(s));
  Scene bad = s;
  bad.ego_index = 5;
  EXPECT_THROW(validate(bad), Error);
  bad = s;
  bad.lane_graph.links.pop_back();  // drop a mirror relation
  EXPECT_THROW(validate(bad), Error);
  bad = s;
  bad.agents[0].statics.length = 0.0;
  EXPECT_THROW(validate(bad), Error);
  bad = s;
  bad.lane_graph.lanes[0].points[1] = bad.lane_graph.lanes[0].points[0];
  EXPECT_THROW(validate(bad), Error);
}
