#include "ctt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ctt/dynamics.hpp"
#include "ctt/errors.hpp"
#include "ctt/geometry.hpp"
#include "ctt/losses.hpp"
#include "ctt/mode_label.hpp"

namespace ctt {

namespace {

constexpr double kPathStep = 0.5;
constexpr double kHalfWidth = 1.8;
constexpr double kClearance = 0.3;

size_t sz(int v) { return static_cast<size_t>(v); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }
  double sign() { return chance(0.5) ? 1.0 : -1.0; }

 private:
  std::mt19937_64 gen_;
};

LanePolyline straight_lane(int id, double x0, double y0, double heading, double length) {
  LanePolyline l;
  l.id = id;
  l.half_width = kHalfWidth;
  const int n = std::max(2, static_cast<int>(std::ceil(length / 10.0)) + 1);
  const double c = std::cos(heading), s = std::sin(heading);
  for (int k = 0; k < n; ++k) {
    const double d = length * k / (n - 1);
    l.points.push_back(Pose4{x0 + c * d, y0 + s * d, s, c});
  }
  return l;
}

Vec2 point_at(const LanePolyline& lane, double s) {
  const auto& p = lane.points;
  double cum = 0.0;
  for (size_t k = 0; k + 1 < p.size(); ++k) {
    const double len = std::hypot(p[k + 1].x - p[k].x, p[k + 1].y - p[k].y);
    const bool last = k + 2 == p.size();
    if (s <= cum + len || last || (k == 0 && s < 0.0)) {
      const double t = (s - cum) / len;
      return {p[k].x + t * (p[k + 1].x - p[k].x), p[k].y + t * (p[k + 1].y - p[k].y)};
    }
    cum += len;
  }
  return {p.back().x, p.back().y};
}

struct Path {
  std::vector<Vec2> pts;
};

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

/// Follows `from`, blending laterally onto `to` between stations
/// [change_at, change_at + change_len]. Without `to` the lane is followed.
Path make_path(const LanePolyline& from, const LanePolyline* to, double change_at, double change_len) {
  Path path;
  const double L = from.length();
  for (double s = -60.0; s <= L + 80.0; s += kPathStep) {
    const Vec2 a = point_at(from, s);
    if (!to) {
      path.pts.push_back(a);
      continue;
    }
    const double w = smoothstep((s - change_at) / change_len);
    const FrenetProj pr = project_onto_polyline(Pose4{a.x, a.y, 0.0, 1.0}, *to);
    const double nx = -std::sin(pr.segment_heading), ny = std::cos(pr.segment_heading);
    const Vec2 b{a.x - pr.lat * nx, a.y - pr.lat * ny};
    path.pts.push_back({a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)});
  }
  return path;
}

double station_on(const LanePolyline& lane, double x, double y) {
  return project_onto_polyline(Pose4{x, y, 0.0, 1.0}, lane).s_unclamped;
}

struct SpeedPlan {
  std::vector<std::pair<double, double>> steps;  // (from time, desired speed), sorted
  double at(double t) const {
    double v = steps.front().second;
    for (const auto& [t0, vd] : steps)
      if (t >= t0) v = vd;
    return v;
  }
};

struct Script {
  AgentStatic statics;
  Path path;
  Vec2 start;   // position at the first simulated frame
  double v0 = 0.0;
  SpeedPlan plan;
};

AgentStatic random_vehicle(Rng& rng) {
  return AgentStatic{AgentType::Vehicle, rng.uniform(4.2, 4.8), rng.uniform(1.7, 1.9)};
}

size_t nearest_index(const Path& p, double x, double y) {
  size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < p.pts.size(); ++k) {
    const double d = (p.pts[k].x - x) * (p.pts[k].x - x) + (p.pts[k].y - y) * (p.pts[k].y - y);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

double path_heading(const Path& p, size_t k) {
  const size_t a = std::min(k, p.pts.size() - 2);
  return std::atan2(p.pts[a + 1].y - p.pts[a].y, p.pts[a + 1].x - p.pts[a].x);
}

struct Timing {
  int steps = 0;
  int hist_stride = 1;
  double t_start = 0.0;
};

Timing timing_of(const ScenarioTemplate& tpl) {
  Timing t;
  t.hist_stride = static_cast<int>(std::lround(tpl.dt_history / tpl.dt));
  if (t.hist_stride < 1 || std::abs(t.hist_stride * tpl.dt - tpl.dt_history) > 1e-9)
    throw Error("template: dt_history must be a positive multiple of dt");
  t.steps = (tpl.history_len - 1) * t.hist_stride + tpl.future_len;
  t.t_start = -(tpl.history_len - 1) * tpl.dt_history;
  return t;
}

AgentTrack simulate(const Script& sc, const ScenarioTemplate& tpl, const Timing& tm) {
  const DynamicsLimits lim = limits_for(sc.statics.type);
  const size_t k0 = nearest_index(sc.path, sc.start.x, sc.start.y);
  Pose4 pose = Pose4::from_heading(sc.start.x, sc.start.y, path_heading(sc.path, k0));
  double v = sc.v0;
  std::vector<TrackFrame> frames{{pose, v, true}};
  for (int n = 0; n < tm.steps; ++n) {
    const double t = tm.t_start + n * tpl.dt;
    const size_t k = nearest_index(sc.path, pose.x, pose.y);
    const double look = std::max(4.0, 0.8 * v + 2.0);
    const size_t tk = std::min(sc.path.pts.size() - 1, k + static_cast<size_t>(look / kPathStep));
    const Pose4 target = relative_pose(pose, Pose4{sc.path.pts[tk].x, sc.path.pts[tk].y, 0.0, 1.0});
    const double alpha = std::atan2(target.y, target.x);
    const double w = 2.0 * v * std::sin(alpha) / look;
    const double a = std::clamp(1.5 * (sc.plan.at(t) - v), -0.7 * lim.a_max, 0.7 * lim.a_max);
    const Control u{a, w};
    const auto step = dynamics_rollout(pose, v, std::span<const Control>(&u, 1), tpl.dt, sc.statics.type);
    pose = step.front().pose;
    v = step.front().speed;
    frames.push_back(step.front());
  }
  AgentTrack track;
  track.statics = sc.statics;
  for (int q = 0; q < tpl.history_len; ++q) track.history.push_back(frames[sz(q * tm.hist_stride)]);
  std::vector<TrackFrame> fut;
  const int cur = (tpl.history_len - 1) * tm.hist_stride;
  for (int q = 1; q <= tpl.future_len; ++q) fut.push_back(frames[sz(cur + q)]);
  track.future = std::move(fut);
  return track;
}

struct Layout {
  LaneGraph graph;
  std::vector<Script> agents;
  int ego = 0;
};

// Positions below are given at the current time (t = 0) and moved back to the
// first simulated frame with the initial speed.
Vec2 back_along(const LanePolyline& lane, double x, double y, double v, double t_start) {
  return point_at(lane, station_on(lane, x, y) + v * t_start);
}

Layout straight_multi_lane(const ScenarioTemplate& tpl, Rng& rng, const Timing& tm) {
  Layout lay;
  const int nl = tpl.lanes >= 2 ? rng.integer(2, std::min(tpl.lanes, 4)) : 1;
  for (int k = 0; k < nl; ++k)
    lay.graph.lanes.push_back(straight_lane(k + 1, -80.0, k * tpl.lane_spacing, 0.0, tpl.lane_length));
  for (int k = 1; k < nl; ++k) lay.graph.link(k, k + 1, LaneRelation::LeftAdj);
  const int n = rng.integer(tpl.min_agents, tpl.max_agents);
  const double v = rng.uniform(tpl.min_speed, tpl.max_speed);
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) {
    double x = 0.0;
    for (int tries = 0; tries < 100; ++tries) {
      x = rng.uniform(-30.0, 30.0);
      bool ok = true;
      for (double o : xs) ok = ok && std::abs(o - x) >= 9.0;
      if (ok) break;
    }
    xs.push_back(x);
    const int lane = rng.integer(1, nl);
    const LanePolyline& from = lay.graph.lane(lane);
    Script sc;
    sc.statics = random_vehicle(rng);
    sc.v0 = v;
    sc.plan.steps = {{-1e9, v}};
    const double s_now = station_on(from, x, from.points.front().y);
    int target = 0;
    if (nl > 1 && rng.chance(tpl.lane_change_prob)) target = lane == 1 ? 2 : (lane == nl ? nl - 1 : lane + (rng.chance(0.5) ? 1 : -1));
    if (target) {
      const double t_lc = rng.uniform(-1.0, 1.0);
      sc.path = make_path(from, &lay.graph.lane(target), s_now + v * t_lc, v * 3.0);
    } else {
      sc.path = make_path(from, nullptr, 0.0, 1.0);
    }
    sc.start = point_at(from, s_now + v * tm.t_start);
    lay.agents.push_back(std::move(sc));
  }
  return lay;
}

Layout overtake(const ScenarioTemplate& tpl, Rng& rng, const Timing& tm) {
  Layout lay;
  lay.graph.lanes.push_back(straight_lane(1, -80.0, 0.0, 0.0, tpl.lane_length));
  lay.graph.lanes.push_back(straight_lane(2, -80.0, tpl.lane_spacing, 0.0, tpl.lane_length));
  lay.graph.link(1, 2, LaneRelation::LeftAdj);
  const LanePolyline& l1 = lay.graph.lane(1);
  const LanePolyline& l2 = lay.graph.lane(2);
  const double vs = rng.uniform(5.0, 7.0), vf = rng.uniform(13.0, 16.0);
  const double xs = rng.uniform(-10.0, 0.0), gap = rng.uniform(5.0, 10.0);
  const double xf = xs - gap;

  Script fast;
  fast.statics = random_vehicle(rng);
  fast.v0 = vf;
  fast.plan.steps = {{-1e9, vf}};
  if (rng.chance(0.5)) {
    fast.path = make_path(l1, &l2, station_on(l1, xf, 0.0) + vf * tm.t_start, vf * 1.2);
    fast.start = back_along(l1, xf, 0.0, vf, tm.t_start);
  } else {
    fast.path = make_path(l2, nullptr, 0.0, 1.0);
    fast.start = back_along(l2, xf, tpl.lane_spacing, vf, tm.t_start);
  }
  lay.agents.push_back(std::move(fast));

  Script slow;
  slow.statics = random_vehicle(rng);
  slow.v0 = vs;
  slow.plan.steps = {{-1e9, vs}};
  slow.path = make_path(l1, nullptr, 0.0, 1.0);
  slow.start = back_along(l1, xs, 0.0, vs, tm.t_start);
  lay.agents.push_back(std::move(slow));

  if (rng.chance(0.5)) {
    Script lead;
    lead.statics = random_vehicle(rng);
    lead.v0 = vf;
    lead.plan.steps = {{-1e9, vf}};
    lead.path = make_path(l2, nullptr, 0.0, 1.0);
    lead.start = back_along(l2, xf + rng.uniform(35.0, 50.0), tpl.lane_spacing, vf, tm.t_start);
    lay.agents.push_back(std::move(lead));
  }
  if (rng.chance(0.5)) {
    Script tail;
    tail.statics = random_vehicle(rng);
    tail.v0 = vs;
    tail.plan.steps = {{-1e9, vs}};
    tail.path = make_path(l1, nullptr, 0.0, 1.0);
    tail.start = back_along(l1, xs - rng.uniform(20.0, 30.0), 0.0, vs, tm.t_start);
    lay.agents.push_back(std::move(tail));
  }
  return lay;
}

Layout merge(const ScenarioTemplate& tpl, Rng& rng, const Timing& tm) {
  Layout lay;
  lay.graph.lanes.push_back(straight_lane(1, -80.0, 0.0, 0.0, tpl.lane_length));
  lay.graph.lanes.push_back(straight_lane(2, -80.0, -tpl.lane_spacing, 0.0, 110.0));
  lay.graph.link(2, 1, LaneRelation::LeftAdj);
  const LanePolyline& main = lay.graph.lane(1);
  const LanePolyline& ramp = lay.graph.lane(2);
  const double va = rng.uniform(10.0, 13.0), vm = rng.uniform(10.0, 13.0);
  const double xa = rng.uniform(-30.0, -10.0);
  const bool merger_ahead = rng.chance(0.5);
  const double xm = xa + (merger_ahead ? 1.0 : -1.0) * rng.uniform(9.0, 14.0);

  Script a;
  a.statics = random_vehicle(rng);
  a.v0 = va;
  a.plan.steps = {{-1e9, va}};
  if (merger_ahead) a.plan.steps.push_back({0.0, va - 2.0});
  a.path = make_path(main, nullptr, 0.0, 1.0);
  a.start = back_along(main, xa, 0.0, va, tm.t_start);

  Script m;
  m.statics = random_vehicle(rng);
  m.v0 = vm;
  m.plan.steps = {{-1e9, vm}};
  if (!merger_ahead) m.plan.steps.push_back({0.0, vm - 2.5});
  const double t_lc = rng.uniform(-0.5, 0.5);
  m.path = make_path(ramp, &main, station_on(ramp, xm, -tpl.lane_spacing) + vm * t_lc, vm * 2.5);
  m.start = back_along(ramp, xm, -tpl.lane_spacing, vm, tm.t_start);

  lay.agents.push_back(std::move(m));
  lay.agents.push_back(std::move(a));
  if (rng.chance(0.5)) {
    Script lead;
    lead.statics = random_vehicle(rng);
    lead.v0 = 12.0;
    lead.plan.steps = {{-1e9, 12.0}};
    lead.path = make_path(main, nullptr, 0.0, 1.0);
    lead.start = back_along(main, std::max(xa, xm) + rng.uniform(30.0, 45.0), 0.0, 12.0, tm.t_start);
    lay.agents.push_back(std::move(lead));
  }
  return lay;
}

Layout intersection(const ScenarioTemplate& tpl, Rng& rng, const Timing& tm) {
  (void)tpl;
  Layout lay;
  lay.graph.lanes.push_back(straight_lane(1, -60.0, -kHalfWidth, 0.0, 120.0));
  lay.graph.lanes.push_back(straight_lane(2, kHalfWidth, -60.0, std::numbers::pi / 2.0, 120.0));
  const bool with_c = rng.chance(0.5);
  if (with_c) lay.graph.lanes.push_back(straight_lane(3, 60.0, kHalfWidth, std::numbers::pi, 120.0));
  const LanePolyline& l1 = lay.graph.lane(1);
  const LanePolyline& l2 = lay.graph.lane(2);
  // Conflict stations: lane 1 meets lane 2 at x = 1.8; lane 2 meets lane 1 at y = -1.8.
  const double s1c = station_on(l1, kHalfWidth, -kHalfWidth);
  const double s2c = station_on(l2, kHalfWidth, -kHalfWidth);
  const bool b_yields = with_c || rng.chance(0.5);

  auto passer = [&](const LanePolyline& lane, double s_conflict) {
    Script sc;
    sc.statics = random_vehicle(rng);
    sc.v0 = rng.uniform(9.0, 12.0);
    sc.plan.steps = {{-1e9, sc.v0}};
    sc.path = make_path(lane, nullptr, 0.0, 1.0);
    const double d0 = rng.uniform(4.0, 14.0);
    sc.start = point_at(lane, s_conflict - d0 + sc.v0 * tm.t_start);
    return sc;
  };
  auto yielder = [&](const LanePolyline& lane, double s_conflict) {
    Script sc;
    sc.statics = random_vehicle(rng);
    sc.v0 = rng.uniform(7.0, 10.0);
    const double resume = rng.uniform(1.6, 2.2);
    sc.plan.steps = {{-1e9, 1.0}, {resume, 9.0}};
    sc.path = make_path(lane, nullptr, 0.0, 1.0);
    sc.start = point_at(lane, s_conflict - rng.uniform(22.0, 30.0));
    return sc;
  };
  if (b_yields) {
    lay.agents.push_back(passer(l1, s1c));
    lay.agents.push_back(yielder(l2, s2c));
  } else {
    lay.agents.push_back(yielder(l1, s1c));
    lay.agents.push_back(passer(l2, s2c));
  }
  if (with_c) {
    const LanePolyline& l3 = lay.graph.lane(3);
    lay.agents.push_back(passer(l3, station_on(l3, kHalfWidth, kHalfWidth)));
  }
  return lay;
}

Layout parked_merge_in(const ScenarioTemplate& tpl, Rng& rng, const Timing& tm) {
  Layout lay;
  lay.graph.lanes.push_back(straight_lane(1, -80.0, 0.0, 0.0, tpl.lane_length));
  lay.graph.lanes.push_back(straight_lane(2, -30.0, -tpl.lane_spacing, 0.0, 80.0));
  lay.graph.link(2, 1, LaneRelation::LeftAdj);
  const LanePolyline& main = lay.graph.lane(1);
  const LanePolyline& park = lay.graph.lane(2);
  const double xp = rng.uniform(0.0, 10.0);

  Script p;
  p.statics = random_vehicle(rng);
  p.v0 = 0.0;
  p.plan.steps = {{-1e9, 0.0}, {rng.uniform(0.0, 0.5), 8.0}};
  p.path = make_path(park, &main, station_on(park, xp, -tpl.lane_spacing) + 3.0, 20.0);
  p.start = point_at(park, station_on(park, xp, -tpl.lane_spacing));

  Script t;
  t.statics = random_vehicle(rng);
  t.v0 = rng.uniform(10.0, 14.0);
  const double gap = rng.uniform(6.0, 25.0);
  t.plan.steps = {{-1e9, t.v0}};
  if (gap > 15.0) t.plan.steps.push_back({0.5, 6.0});
  t.path = make_path(main, nullptr, 0.0, 1.0);
  t.start = back_along(main, xp - gap, 0.0, t.v0, tm.t_start);

  lay.agents.push_back(std::move(p));
  lay.agents.push_back(std::move(t));
  return lay;
}

double clearance_over(const Scene& scene, bool history_only) {
  double best = std::numeric_limits<double>::infinity();
  const int n = scene.num_agents();
  auto frames = [&](const AgentTrack& a) {
    std::vector<TrackFrame> f = a.history;
    if (!history_only && a.future) f.insert(f.end(), a.future->begin(), a.future->end());
    return f;
  };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto fi = frames(scene.agents[sz(i)]);
      const auto fj = frames(scene.agents[sz(j)]);
      const double reach = disc_radius(scene.agents[sz(i)].statics) + disc_radius(scene.agents[sz(j)].statics);
      for (size_t t = 0; t < std::min(fi.size(), fj.size()); ++t) {
        if (!fi[t].valid || !fj[t].valid) continue;
        const double d = std::hypot(fi[t].pose.x - fj[t].pose.x, fi[t].pose.y - fj[t].pose.y);
        best = std::min(best, d - reach);
      }
    }
  return best;
}

}  // namespace

std::string_view to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::StraightMultiLane: return "straight";
    case TemplateKind::Merge: return "merge";
    case TemplateKind::Intersection: return "intersection";
    case TemplateKind::Overtake: return "overtake";
    case TemplateKind::ParkedMergeIn: return "parked-merge-in";
  }
  return "?";
}

std::optional<TemplateKind> template_from_string(std::string_view s) {
  for (int k = 0; k < kNumTemplates; ++k) {
    const auto kind = static_cast<TemplateKind>(k);
    if (to_string(kind) == s) return kind;
  }
  return std::nullopt;
}

bool is_adversarial(TemplateKind k) { return k == TemplateKind::Overtake || k == TemplateKind::ParkedMergeIn; }

ScenarioTemplate default_template(TemplateKind k) {
  ScenarioTemplate t;
  t.kind = k;
  switch (k) {
    case TemplateKind::StraightMultiLane: break;
    case TemplateKind::Merge: t.lanes = 2; t.min_agents = 2; t.max_agents = 3; break;
    case TemplateKind::Intersection: t.lanes = 3; t.min_agents = 2; t.max_agents = 3; break;
    case TemplateKind::Overtake: t.lanes = 2; t.min_agents = 2; t.max_agents = 4; break;
    case TemplateKind::ParkedMergeIn: t.lanes = 2; t.min_agents = 2; t.max_agents = 2; break;
  }
  return t;
}

double min_clearance(const Scene& scene) { return clearance_over(scene, false); }

Scene gen_scene(const ScenarioTemplate& tpl, std::uint64_t seed) {
  if (tpl.history_len < 1 || tpl.future_len < 1 || !(tpl.dt > 0.0)) throw Error("template: invalid horizons");
  if (tpl.min_agents < 1 || tpl.max_agents < tpl.min_agents) throw Error("template: invalid agent count range");
  const Timing tm = timing_of(tpl);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(tpl.kind) + 1);
  for (int attempt = 0; attempt < tpl.max_retries; ++attempt) {
    Layout lay;
    switch (tpl.kind) {
      case TemplateKind::StraightMultiLane: lay = straight_multi_lane(tpl, rng, tm); break;
      case TemplateKind::Overtake: lay = overtake(tpl, rng, tm); break;
      case TemplateKind::Merge: lay = merge(tpl, rng, tm); break;
      case TemplateKind::Intersection: lay = intersection(tpl, rng, tm); break;
      case TemplateKind::ParkedMergeIn: lay = parked_merge_in(tpl, rng, tm); break;
    }
    Scene scene;
    scene.dt = tpl.dt;
    scene.dt_history = tpl.dt_history;
    scene.lane_graph = lay.graph;
    scene.ego_index = lay.ego;
    for (const auto& sc : lay.agents) scene.agents.push_back(simulate(sc, tpl, tm));

    const bool adversarial = is_adversarial(tpl.kind);
    if (clearance_over(scene, adversarial) < (adversarial ? 0.0 : kClearance)) continue;
    if (tpl.random_transform) {
      RigidTransform T{rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0),
                       rng.uniform(-std::numbers::pi, std::numbers::pi)};
      scene = transform_scene(scene, T);
    }
    try {
      validate(scene);
      (void)extract_gtsm(scene, LabelConfig{}.theta_hat);
    } catch (const Error&) {
      continue;
    }
    return scene;
  }
  throw GenerationFailed("template '" + std::string(to_string(tpl.kind)) + "' seed " + std::to_string(seed) +
                         ": constraints unmet after " + std::to_string(tpl.max_retries) + " attempts");
}

}  // namespace ctt
