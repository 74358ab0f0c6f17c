#include "ctt/mode_label.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctt/errors.hpp"

namespace ctt {

std::string_view to_string(PairwiseA2L l) {
  switch (l) {
    case PairwiseA2L::NotOn: return "NOTON";
    case PairwiseA2L::On: return "ON";
    case PairwiseA2L::Ahead: return "AHEAD";
    case PairwiseA2L::Behind: return "BEHIND";
    case PairwiseA2L::LeftOf: return "LEFTOF";
    case PairwiseA2L::RightOf: return "RIGHTOF";
    case PairwiseA2L::Misalign: return "MISALIGN";
  }
  return "NOTON";
}

std::string_view to_string(Homotopy h) {
  switch (h) {
    case Homotopy::CW: return "CW";
    case Homotopy::S: return "S";
    case Homotopy::CCW: return "CCW";
  }
  return "S";
}

int pair_index(int i, int j, int n) {
  if (i > j) std::swap(i, j);
  // rows 0..i-1 contribute (n-1) + (n-2) + ... + (n-i)
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

std::pair<int, int> pair_agents(int p, int n) {
  int i = 0;
  while (p >= n - 1 - i) {
    p -= n - 1 - i;
    ++i;
  }
  return {i, i + 1 + p};
}

Homotopy SceneMode::pair(int i, int j) const {
  if (i == j) return Homotopy::S;
  return a2a.at(static_cast<size_t>(pair_index(i, j, num_agents())));
}

namespace {
constexpr double kCoincident = 1e-6;

double bearing_increment(const Vec2& a0, const Vec2& b0, const Vec2& a1, const Vec2& b1) {
  const double b_prev = std::atan2(a0.y - b0.y, a0.x - b0.x);
  const double b_next = std::atan2(a1.y - b1.y, a1.x - b1.x);
  return wrap_angle(b_next - b_prev);
}

void check_separation(const Vec2& a, const Vec2& b, int frame) {
  if (std::hypot(a.x - b.x, a.y - b.y) < kCoincident) throw CoincidentAgents(frame);
}
}  // namespace

double angular_distance(std::span<const Vec2> traj1, std::span<const Vec2> traj2) {
  if (traj1.size() != traj2.size() || traj1.size() < 2)
    throw Error("angular_distance: trajectories must have equal length >= 2");
  for (size_t t = 0; t < traj1.size(); ++t) check_separation(traj1[t], traj2[t], static_cast<int>(t));
  double sum = 0.0;
  for (size_t t = 0; t + 1 < traj1.size(); ++t)
    sum += bearing_increment(traj1[t], traj2[t], traj1[t + 1], traj2[t + 1]);
  return sum;
}

double angular_distance(std::span<const Vec2> traj1, std::span<const Vec2> traj2,
                        const std::vector<bool>& valid1, const std::vector<bool>& valid2) {
  if (traj1.size() != traj2.size() || valid1.size() != traj1.size() || valid2.size() != traj2.size())
    throw Error("angular_distance: length mismatch");
  double sum = 0.0;
  int prev = -1;
  for (size_t t = 0; t < traj1.size(); ++t) {
    if (!valid1[t] || !valid2[t]) continue;
    check_separation(traj1[t], traj2[t], static_cast<int>(t));
    if (prev >= 0) {
      const auto p = static_cast<size_t>(prev);
      sum += bearing_increment(traj1[p], traj2[p], traj1[t], traj2[t]);
    }
    prev = static_cast<int>(t);
  }
  return sum;
}

Homotopy homotopy_class(double dtheta, double theta_hat) {
  if (dtheta < -theta_hat) return Homotopy::CW;
  if (dtheta < theta_hat) return Homotopy::S;
  return Homotopy::CCW;
}

std::array<double, 3> homotopy_margin(double dtheta, double theta_hat) {
  return {-dtheta - theta_hat, theta_hat - std::abs(dtheta), dtheta - theta_hat};
}

PairwiseA2L pairwise_a2l(const Pose4& pose, const LanePolyline& lane, double align_thresh) {
  const FrenetProj pr = project_onto_polyline(pose, lane);
  if (!pr.in_extent) return pr.s_unclamped > 0.0 ? PairwiseA2L::Ahead : PairwiseA2L::Behind;
  const double hw = lane.half_width;
  const double alat = std::abs(pr.lat);
  if (alat <= hw) return std::abs(pr.dheading) <= align_thresh ? PairwiseA2L::On : PairwiseA2L::Misalign;
  if (alat <= 3.0 * hw) return pr.lat > 0.0 ? PairwiseA2L::LeftOf : PairwiseA2L::RightOf;
  return PairwiseA2L::NotOn;
}

double a2l_margin(const Pose4& pose, const LanePolyline& lane) {
  const FrenetProj pr = project_onto_polyline(pose, lane);
  const double L = lane.length();
  return std::min({lane.half_width - std::abs(pr.lat), pr.s_unclamped, L - pr.s_unclamped});
}

Vec2 a2l_margin_gradient(const Pose4& pose, const LanePolyline& lane) {
  const FrenetProj pr = project_onto_polyline(pose, lane);
  const double L = lane.length();
  const double terms[3] = {lane.half_width - std::abs(pr.lat), pr.s_unclamped, L - pr.s_unclamped};
  const int which = static_cast<int>(std::min_element(terms, terms + 3) - terms);

  const auto& a = lane.points[static_cast<size_t>(pr.segment)];
  const auto& b = lane.points[static_cast<size_t>(pr.segment) + 1];
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const double ux = (b.x - a.x) / len, uy = (b.y - a.y) / len;
  const double t = ((pose.x - a.x) * ux + (pose.y - a.y) * uy) / len;
  const bool at_vertex = pr.in_extent && (t <= 0.0 || t >= 1.0);

  if (which == 0) {
    if (!pr.in_extent) {
      const double sg = pr.lat >= 0.0 ? 1.0 : -1.0;
      return {sg * uy, -sg * ux};  // -d|lat|/dp
    }
    const double dx = pose.x - pr.point.x, dy = pose.y - pr.point.y;
    const double d = std::hypot(dx, dy);
    if (d == 0.0) return {0.0, 0.0};
    return {-dx / d, -dy / d};
  }
  const double sgn = which == 1 ? 1.0 : -1.0;
  if (at_vertex) return {0.0, 0.0};
  return {sgn * ux, sgn * uy};
}

UnitaryA2L unitary_a2l(const Pose4& pose, const LaneGraph& graph) {
  UnitaryA2L best{0, -std::numeric_limits<double>::infinity()};
  double best_lat = std::numeric_limits<double>::infinity();
  int pos_lane = 0;
  double pos_margin = 0.0;
  for (const auto& lane : graph.lanes) {
    const FrenetProj pr = project_onto_polyline(pose, lane);
    const double m = std::min({lane.half_width - std::abs(pr.lat), pr.s_unclamped, lane.length() - pr.s_unclamped});
    best.margin = std::max(best.margin, m);
    if (m <= 0.0) continue;
    const double alat = std::abs(pr.lat);
    if (pos_lane == 0 || m > pos_margin || (m == pos_margin && alat < best_lat)) {
      pos_lane = lane.id;
      pos_margin = m;
      best_lat = alat;
    }
  }
  if (pos_lane != 0) return {pos_lane, pos_margin};
  return {0, best.margin};
}

std::vector<Vec2> future_window(const AgentTrack& agent) {
  std::vector<Vec2> w;
  w.reserve(1 + (agent.future ? agent.future->size() : 0));
  w.push_back({agent.current().pose.x, agent.current().pose.y});
  if (agent.future)
    for (const auto& f : *agent.future) w.push_back({f.pose.x, f.pose.y});
  return w;
}

std::vector<bool> future_window_valid(const AgentTrack& agent) {
  std::vector<bool> v;
  v.push_back(agent.current().valid);
  if (agent.future)
    for (const auto& f : *agent.future) v.push_back(f.valid);
  return v;
}

namespace {
const TrackFrame& last_valid_future(const AgentTrack& a) {
  const auto& fut = *a.future;
  for (auto it = fut.rbegin(); it != fut.rend(); ++it)
    if (it->valid) return *it;
  return a.current();
}
}  // namespace

GroundTruthModes extract_gtsm(const Scene& scene, double theta_hat) {
  if (!scene.has_futures()) throw Error("extract_gtsm: scene has no futures");
  const int n = scene.num_agents();
  const int m = scene.num_lanes();
  GroundTruthModes gt;
  gt.mode.a2l.resize(static_cast<size_t>(n));
  gt.margins.m_l.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(m)));
  for (int i = 0; i < n; ++i) {
    const Pose4& end = last_valid_future(scene.agents[static_cast<size_t>(i)]).pose;
    gt.mode.a2l[static_cast<size_t>(i)] = unitary_a2l(end, scene.lane_graph).lane;
    for (int j = 0; j < m; ++j)
      gt.margins.m_l[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          a2l_margin(end, scene.lane_graph.lanes[static_cast<size_t>(j)]);
  }
  std::vector<std::vector<Vec2>> win(static_cast<size_t>(n));
  std::vector<std::vector<bool>> val(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    win[static_cast<size_t>(i)] = future_window(scene.agents[static_cast<size_t>(i)]);
    val[static_cast<size_t>(i)] = future_window_valid(scene.agents[static_cast<size_t>(i)]);
  }
  gt.mode.a2a.resize(static_cast<size_t>(num_pairs(n)));
  gt.margins.m_h.resize(static_cast<size_t>(num_pairs(n)));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dth = angular_distance(win[static_cast<size_t>(i)], win[static_cast<size_t>(j)],
                                          val[static_cast<size_t>(i)], val[static_cast<size_t>(j)]);
      const auto p = static_cast<size_t>(pair_index(i, j, n));
      gt.mode.a2a[p] = homotopy_class(dth, theta_hat);
      gt.margins.m_h[p] = homotopy_margin(dth, theta_hat);
    }
  return gt;
}

std::uint64_t sm_cardinality(int n, int m) {
  if (n < 1 || m < 0) throw Error("sm_cardinality: need N >= 1, M >= 0");
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t count = 1;
  auto mul = [&](std::uint64_t f) {
    if (f != 0 && count > kMax / f) throw OverflowError("scene-mode cardinality overflows 64 bits");
    count *= f;
  };
  for (int i = 0; i < n; ++i) mul(static_cast<std::uint64_t>(m) + 1);
  for (int p = 0; p < num_pairs(n); ++p) mul(3);
  return count;
}

}  // namespace ctt
