#include "ctt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ctt/errors.hpp"

namespace ctt {

// ---------------------------------------------------------------------------
// scene.hpp

std::string_view to_string(AgentType t) {
  switch (t) {
    case AgentType::Vehicle: return "vehicle";
    case AgentType::Pedestrian: return "pedestrian";
    case AgentType::Cyclist: return "cyclist";
  }
  return "vehicle";
}

std::optional<AgentType> agent_type_from_string(std::string_view s) {
  if (s == "vehicle") return AgentType::Vehicle;
  if (s == "pedestrian") return AgentType::Pedestrian;
  if (s == "cyclist") return AgentType::Cyclist;
  return std::nullopt;
}

std::string_view to_string(LaneRelation r) {
  switch (r) {
    case LaneRelation::Next: return "next";
    case LaneRelation::Prev: return "prev";
    case LaneRelation::LeftAdj: return "left";
    case LaneRelation::RightAdj: return "right";
  }
  return "next";
}

std::optional<LaneRelation> lane_relation_from_string(std::string_view s) {
  if (s == "next") return LaneRelation::Next;
  if (s == "prev") return LaneRelation::Prev;
  if (s == "left") return LaneRelation::LeftAdj;
  if (s == "right") return LaneRelation::RightAdj;
  return std::nullopt;
}

double LanePolyline::length() const {
  double L = 0.0;
  for (size_t i = 1; i < points.size(); ++i)
    L += std::hypot(points[i].x - points[i - 1].x, points[i].y - points[i - 1].y);
  return L;
}

namespace {
LaneRelation mirror(LaneRelation r) {
  switch (r) {
    case LaneRelation::Next: return LaneRelation::Prev;
    case LaneRelation::Prev: return LaneRelation::Next;
    case LaneRelation::LeftAdj: return LaneRelation::RightAdj;
    case LaneRelation::RightAdj: return LaneRelation::LeftAdj;
  }
  return r;
}
}  // namespace

void LaneGraph::link(int from, int to, LaneRelation r) {
  auto add = [this](LaneLink l) {
    if (std::find(links.begin(), links.end(), l) == links.end()) links.push_back(l);
  };
  add({from, to, r});
  add({to, from, mirror(r)});
}

std::optional<LaneRelation> LaneGraph::relation(int from, int to) const {
  for (const auto& l : links)
    if (l.from == from && l.to == to) return l.relation;
  return std::nullopt;
}

std::vector<int> LaneGraph::neighbors(int id, LaneRelation r) const {
  std::vector<int> out;
  for (const auto& l : links)
    if (l.from == id && l.relation == r) out.push_back(l.to);
  std::sort(out.begin(), out.end());
  return out;
}

int Scene::future_len() const {
  for (const auto& a : agents)
    if (a.future) return static_cast<int>(a.future->size());
  return 0;
}

bool Scene::has_futures() const {
  return !agents.empty() &&
         std::all_of(agents.begin(), agents.end(), [](const AgentTrack& a) { return a.future.has_value(); });
}

namespace {
void check_pose(const Pose4& p, const std::string& where) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.sin_h) || !std::isfinite(p.cos_h))
    throw Error(where + ": non-finite pose");
  if (std::abs(p.sin_h * p.sin_h + p.cos_h * p.cos_h - 1.0) > 1e-6)
    throw Error(where + ": sin^2 + cos^2 != 1");
}
}  // namespace

void validate(const LanePolyline& lane) {
  const std::string where = "lane " + std::to_string(lane.id);
  if (lane.points.size() < 2) throw Error(where + ": fewer than 2 points");
  if (!(lane.half_width > 0.0)) throw Error(where + ": half_width must be positive");
  for (size_t i = 0; i < lane.points.size(); ++i) {
    check_pose(lane.points[i], where);
    if (i > 0 && lane.points[i].x == lane.points[i - 1].x && lane.points[i].y == lane.points[i - 1].y)
      throw Error(where + ": consecutive duplicate points");
  }
  if (!(lane.length() > 0.0)) throw Error(where + ": zero arc length");
}

void validate(const Scene& scene) {
  if (scene.agents.empty()) throw Error("scene has no agents");
  if (scene.ego_index < 0 || scene.ego_index >= scene.num_agents()) throw Error("ego_index out of range");
  if (!(scene.dt > 0.0) || !(scene.dt_history > 0.0)) throw Error("dt must be positive");
  const size_t th = scene.agents.front().history.size();
  const int tf = scene.future_len();
  for (size_t i = 0; i < scene.agents.size(); ++i) {
    const auto& a = scene.agents[i];
    const std::string where = "agent " + std::to_string(i);
    if (a.history.empty()) throw Error(where + ": empty history");
    if (a.history.size() != th) throw Error(where + ": history length mismatch");
    if (!(a.statics.length > 0.0) || !(a.statics.width > 0.0)) throw Error(where + ": non-positive size");
    for (const auto& f : a.history) check_pose(f.pose, where);
    if (a.future) {
      if (static_cast<int>(a.future->size()) != tf) throw Error(where + ": future length mismatch");
      for (const auto& f : *a.future) check_pose(f.pose, where);
    }
  }
  const int M = scene.num_lanes();
  for (int j = 0; j < M; ++j) {
    if (scene.lane_graph.lanes[static_cast<size_t>(j)].id != j + 1)
      throw Error("lane ids must be 1..M in order");
    validate(scene.lane_graph.lanes[static_cast<size_t>(j)]);
  }
  for (const auto& l : scene.lane_graph.links) {
    if (l.from < 1 || l.from > M || l.to < 1 || l.to > M) throw Error("lane link references invalid lane");
    if (scene.lane_graph.relation(l.to, l.from) != mirror(l.relation)) throw Error("lane link without mirror");
  }
}

Pose4 RigidTransform::apply(const Pose4& p) const {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, s * p.cos_h + c * p.sin_h, c * p.cos_h - s * p.sin_h};
}

Vec2 RigidTransform::apply(const Vec2& p) const {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty};
}

Scene transform_scene(const Scene& scene, const RigidTransform& T) {
  Scene out = scene;
  for (auto& a : out.agents) {
    for (auto& f : a.history) f.pose = T.apply(f.pose);
    if (a.future)
      for (auto& f : *a.future) f.pose = T.apply(f.pose);
  }
  for (auto& l : out.lane_graph.lanes)
    for (auto& p : l.points) p = T.apply(p);
  return out;
}

// ---------------------------------------------------------------------------
// geometry.hpp

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::remainder(a, 2.0 * pi);  // [-pi, pi]
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

Pose4 relative_pose(const Pose4& x1, const Pose4& x2) {
  const double dx = x2.x - x1.x;
  const double dy = x2.y - x1.y;
  return {
      x1.cos_h * dx + x1.sin_h * dy,
      -x1.sin_h * dx + x1.cos_h * dy,
      x1.cos_h * x2.sin_h - x1.sin_h * x2.cos_h,
      x1.cos_h * x2.cos_h + x1.sin_h * x2.sin_h,
  };
}

FrenetProj project_onto_polyline(const Pose4& p, const LanePolyline& lane) {
  const auto& pts = lane.points;
  const size_t nseg = pts.size() - 1;

  size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_t = 0.0;
  double cum = 0.0, best_cum = 0.0;
  for (size_t k = 0; k < nseg; ++k) {
    const double ax = pts[k].x, ay = pts[k].y;
    const double ex = pts[k + 1].x - ax, ey = pts[k + 1].y - ay;
    const double len2 = ex * ex + ey * ey;
    const double t = ((p.x - ax) * ex + (p.y - ay) * ey) / len2;
    const double tc = std::clamp(t, 0.0, 1.0);
    const double cx = ax + tc * ex - p.x, cy = ay + tc * ey - p.y;
    const double d2 = cx * cx + cy * cy;
    // At a shared vertex the following segment wins.
    const bool take = d2 < best_d2 || (tc == 0.0 && d2 <= best_d2);
    if (take) {
      best = k;
      best_d2 = d2;
      best_t = t;
      best_cum = cum;
    }
    cum += std::sqrt(len2);
  }
  const double total = cum;

  const double ax = pts[best].x, ay = pts[best].y;
  const double ex = pts[best + 1].x - ax, ey = pts[best + 1].y - ay;
  const double len = std::hypot(ex, ey);
  const double ux = ex / len, uy = ey / len;
  const bool before = best == 0 && best_t < 0.0;
  const bool after = best == nseg - 1 && best_t > 1.0;
  const double tc = std::clamp(best_t, 0.0, 1.0);

  FrenetProj out;
  out.segment = static_cast<int>(best);
  out.in_extent = !before && !after;
  out.point = {ax + tc * ex, ay + tc * ey};
  out.segment_heading = std::atan2(uy, ux);
  const double cross = ux * (p.y - ay) - uy * (p.x - ax);
  if (out.in_extent) {
    out.s_unclamped = best_cum + tc * len;
    const double dist = std::sqrt(best_d2);
    out.lat = cross >= 0.0 ? dist : -dist;
  } else {
    out.s_unclamped = best_cum + best_t * len;
    out.lat = cross;
  }
  out.s = std::clamp(out.s_unclamped, 0.0, total);
  double dh = std::atan2(p.sin_h * ux - p.cos_h * uy, p.cos_h * ux + p.sin_h * uy);
  if (dh <= -std::numbers::pi) dh = std::numbers::pi;
  out.dheading = dh;
  return out;
}

std::array<double, kAgentStaticDim> static_features(const AgentStatic& s, double speed) {
  std::array<double, kAgentStaticDim> f{};
  f[static_cast<size_t>(s.type)] = 1.0;
  f[kNumAgentTypes + 0] = s.length;
  f[kNumAgentTypes + 1] = s.width;
  f[kNumAgentTypes + 2] = speed;
  return f;
}

std::array<double, kA2AEdgeDim> a2a_edge_feature(const AgentAux& a1, const AgentAux& a2) {
  std::array<double, kA2AEdgeDim> f{};
  const Pose4 r = relative_pose(a1.pose, a2.pose);
  f[0] = r.x;
  f[1] = r.y;
  f[2] = r.sin_h;
  f[3] = r.cos_h;
  const auto st = static_features(a2.statics, a2.speed);
  std::copy(st.begin(), st.end(), f.begin() + 4);
  return f;
}

std::array<double, kA2LEdgeDim> a2l_edge_feature(const Pose4& agent, const LanePolyline& lane) {
  const FrenetProj pr = project_onto_polyline(agent, lane);
  const Pose4 proj = Pose4::from_heading(pr.point.x, pr.point.y, pr.segment_heading);
  const Pose4 blocks[3] = {relative_pose(agent, proj), relative_pose(agent, lane.points.front()),
                           relative_pose(agent, lane.points.back())};
  std::array<double, kA2LEdgeDim> f{};
  for (int b = 0; b < 3; ++b) {
    f[static_cast<size_t>(4 * b + 0)] = blocks[b].x;
    f[static_cast<size_t>(4 * b + 1)] = blocks[b].y;
    f[static_cast<size_t>(4 * b + 2)] = blocks[b].sin_h;
    f[static_cast<size_t>(4 * b + 3)] = blocks[b].cos_h;
  }
  f[12] = pr.lat;
  f[13] = pr.s;
  f[14] = pr.in_extent ? 1.0 : 0.0;
  return f;
}

std::array<double, kL2LEdgeDim> l2l_edge_feature(const LanePolyline& l1, const LanePolyline& l2) {
  const Pose4* a[2] = {&l1.points.front(), &l1.points.back()};
  const Pose4* b[2] = {&l2.points.front(), &l2.points.back()};
  std::array<double, kL2LEdgeDim> f{};
  size_t k = 0;
  for (const Pose4* from : a)
    for (const Pose4* to : b) {
      const Pose4 r = relative_pose(*from, *to);
      f[k++] = r.x;
      f[k++] = r.y;
      f[k++] = r.sin_h;
      f[k++] = r.cos_h;
    }
  return f;
}

std::vector<Pose4> resample_local(const LanePolyline& lane, int count) {
  const auto& pts = lane.points;
  std::vector<double> cum(pts.size(), 0.0);
  for (size_t i = 1; i < pts.size(); ++i)
    cum[i] = cum[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  const double L = cum.back();
  std::vector<Pose4> out;
  out.reserve(static_cast<size_t>(count));
  size_t seg = 0;
  for (int k = 0; k < count; ++k) {
    const double s = count == 1 ? 0.0 : L * k / (count - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = std::clamp((s - cum[seg]) / len, 0.0, 1.0);
    const double ex = pts[seg + 1].x - pts[seg].x, ey = pts[seg + 1].y - pts[seg].y;
    const Pose4 g = Pose4::from_heading(pts[seg].x + t * ex, pts[seg].y + t * ey, std::atan2(ey, ex));
    out.push_back(relative_pose(pts.front(), g));
  }
  return out;
}

}  // namespace ctt
