#pragma once

#include <array>
#include <vector>

#include "ctt/scene.hpp"

namespace ctt {

/// Pose of `x2` expressed in the frame of `x1`.
Pose4 relative_pose(const Pose4& x1, const Pose4& x2);

/// Projection of a point onto a lane centerline.
struct FrenetProj {
  double s = 0.0;            // clamped to [0, L]
  double s_unclamped = 0.0;  // negative before the start, > L past the end
  double lat = 0.0;          // signed, left of travel direction positive
  double dheading = 0.0;     // (-pi, pi]
  bool in_extent = true;
  int segment = 0;           // index of the segment the projection landed on
  Vec2 point;                // closest point on the (clamped) polyline
  double segment_heading = 0.0;
};

FrenetProj project_onto_polyline(const Pose4& p, const LanePolyline& lane);

/// Auxiliary payload carried by agent blocks.
struct AgentAux {
  Pose4 pose;
  AgentStatic statics;
  double speed = 0.0;
};

inline constexpr int kAgentStaticDim = kNumAgentTypes + 3;  // type one-hot, length, width, speed
inline constexpr int kA2AEdgeDim = 4 + kAgentStaticDim;
inline constexpr int kA2LEdgeDim = 15;
inline constexpr int kL2LEdgeDim = 16;

std::array<double, kAgentStaticDim> static_features(const AgentStatic& s, double speed);

/// Concat[relative_pose(x1, x2), statics of agent 2].
std::array<double, kA2AEdgeDim> a2a_edge_feature(const AgentAux& a1, const AgentAux& a2);

/// Concat[projection point, lane start, lane end (each relative to the agent), lat, s, in_extent].
std::array<double, kA2LEdgeDim> a2l_edge_feature(const Pose4& agent, const LanePolyline& lane);

/// Relative poses between {start1, end1} and {start2, end2}.
std::array<double, kL2LEdgeDim> l2l_edge_feature(const LanePolyline& l1, const LanePolyline& l2);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Points resampled at `count` equal arc-length stations, expressed in the
/// frame of the first lane point.
std::vector<Pose4> resample_local(const LanePolyline& lane, int count);

}  // namespace ctt
