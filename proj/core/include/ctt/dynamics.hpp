#pragma once

#include <array>
#include <limits>
#include <span>
#include <vector>

#include "ctt/autodiff.hpp"
#include "ctt/scene.hpp"

namespace ctt {

struct DynamicsLimits {
  double v_max = 30.0;                                      // m/s
  double a_max = 6.0;                                       // |accel|, m/s^2
  double w_max = 1.0;                                       // |yaw rate|, rad/s
};

/// Unicycle bounds: vehicles and cyclists are yaw-rate limited; pedestrians
/// have a small speed bound, a large acceleration bound, no yaw-rate bound.
DynamicsLimits limits_for(AgentType type);

using Control = std::array<double, 2>;  // (accel m/s^2, yaw rate rad/s)

/// Forward-Euler unicycle rollout. Returns one frame per control.
std::vector<TrackFrame> dynamics_rollout(const Pose4& init, double speed, std::span<const Control> controls, double dt,
                                         AgentType type);

/// Differentiable batched rollout. `controls` is [B*T, 2] with row b*T + t.
struct RolloutResult {
  ad::Var poses;  // [B*T, 4] (x, y, sin, cos)
  ad::Var speed;  // [B*T, 1]
};
RolloutResult dynamics_rollout(std::span<const Pose4> init, std::span<const double> speed,
                               std::span<const AgentType> types, const ad::Var& controls, int horizon, double dt);

}  // namespace ctt
