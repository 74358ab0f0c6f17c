#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ctt {

/// Planar pose with heading stored as a (sin, cos) pair; no angle wrapping is
/// ever needed to compare two poses.
struct Pose4 {
  double x = 0.0;
  double y = 0.0;
  double sin_h = 0.0;
  double cos_h = 1.0;

  static Pose4 from_heading(double x, double y, double heading) {
    return {x, y, std::sin(heading), std::cos(heading)};
  }
  double heading() const { return std::atan2(sin_h, cos_h); }
  bool operator==(const Pose4&) const = default;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

enum class AgentType : std::uint8_t { Vehicle = 0, Pedestrian = 1, Cyclist = 2 };
inline constexpr int kNumAgentTypes = 3;

std::string_view to_string(AgentType t);
std::optional<AgentType> agent_type_from_string(std::string_view s);

struct AgentStatic {
  AgentType type = AgentType::Vehicle;
  double length = 4.5;
  double width = 1.8;
  bool operator==(const AgentStatic&) const = default;
};

struct TrackFrame {
  Pose4 pose;
  double speed = 0.0;
  bool valid = true;
  bool operator==(const TrackFrame&) const = default;
};

struct AgentTrack {
  AgentStatic statics;
  std::vector<TrackFrame> history;
  std::optional<std::vector<TrackFrame>> future;

  const TrackFrame& current() const { return history.back(); }
  bool operator==(const AgentTrack&) const = default;
};

struct LanePolyline {
  int id = 0;  // 1-based lane index
  double half_width = 1.75;
  std::vector<Pose4> points;

  double length() const;
  bool operator==(const LanePolyline&) const = default;
};

enum class LaneRelation : std::uint8_t { Next = 0, Prev = 1, LeftAdj = 2, RightAdj = 3 };
inline constexpr int kNumLaneRelations = 4;

std::string_view to_string(LaneRelation r);
std::optional<LaneRelation> lane_relation_from_string(std::string_view s);

struct LaneLink {
  int from = 0;
  int to = 0;
  LaneRelation relation = LaneRelation::Next;
  bool operator==(const LaneLink&) const = default;
};

struct LaneGraph {
  std::vector<LanePolyline> lanes;
  std::vector<LaneLink> links;

  int num_lanes() const { return static_cast<int>(lanes.size()); }
  const LanePolyline& lane(int id) const { return lanes.at(static_cast<size_t>(id - 1)); }
  /// Adds the relation and its mirror (Next/Prev, LeftAdj/RightAdj).
  void link(int from, int to, LaneRelation r);
  std::optional<LaneRelation> relation(int from, int to) const;
  std::vector<int> neighbors(int id, LaneRelation r) const;
  bool operator==(const LaneGraph&) const = default;
};

struct Scene {
  std::vector<AgentTrack> agents;
  LaneGraph lane_graph;
  int ego_index = 0;
  double dt = 0.25;          // future step, seconds
  double dt_history = 0.5;   // history step, seconds

  int num_agents() const { return static_cast<int>(agents.size()); }
  int num_lanes() const { return lane_graph.num_lanes(); }
  int history_len() const { return agents.empty() ? 0 : static_cast<int>(agents.front().history.size()); }
  int future_len() const;
  bool has_futures() const;
  bool operator==(const Scene&) const = default;
};

/// Throws ctt::Error with a description of the first violated invariant.
void validate(const LanePolyline& lane);
void validate(const Scene& scene);

/// Rigid transform (rotation about the origin followed by translation).
struct RigidTransform {
  double tx = 0.0;
  double ty = 0.0;
  double angle = 0.0;

  Pose4 apply(const Pose4& p) const;
  Vec2 apply(const Vec2& p) const;
};

Scene transform_scene(const Scene& scene, const RigidTransform& T);

}  // namespace ctt
