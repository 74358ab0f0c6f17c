#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "ctt/geometry.hpp"
#include "ctt/scene.hpp"

namespace ctt {

enum class PairwiseA2L : std::uint8_t { NotOn = 0, On, Ahead, Behind, LeftOf, RightOf, Misalign };
inline constexpr int kNumPairwiseA2L = 7;
std::string_view to_string(PairwiseA2L l);

/// Free-end homotopy class; the numeric order matches the margin vector layout.
enum class Homotopy : std::uint8_t { CW = 0, S = 1, CCW = 2 };
inline constexpr int kNumHomotopy = 3;
std::string_view to_string(Homotopy h);

/// Number of unordered agent pairs.
constexpr int num_pairs(int n) { return n * (n - 1) / 2; }
/// Row-major index of the unordered pair (i, j), i != j.
int pair_index(int i, int j, int n);
std::pair<int, int> pair_agents(int p, int n);

struct SceneMode {
  std::vector<int> a2l;       // per agent: 0 = no lane, 1..M = lane id
  std::vector<Homotopy> a2a;  // per unordered pair (i < j), row-major

  int num_agents() const { return static_cast<int>(a2l.size()); }
  Homotopy pair(int i, int j) const;
  bool operator==(const SceneMode&) const = default;
  auto operator<=>(const SceneMode&) const = default;
};

struct ModeMargins {
  std::vector<std::vector<double>> m_l;     // [agent][lane]
  std::vector<std::array<double, 3>> m_h;   // [pair] (CW, S, CCW)
};

struct LabelConfig {
  double theta_hat = std::numbers::pi / 6.0;
  double align_thresh = std::numbers::pi / 4.0;
};

/// Accumulated wrapped change of the bearing of (traj1 - traj2). Throws
/// CoincidentAgents if the agents are closer than 1e-6 m at any frame.
double angular_distance(std::span<const Vec2> traj1, std::span<const Vec2> traj2);

/// Same as above, but increments are taken between consecutive frames valid
/// in both trajectories.
double angular_distance(std::span<const Vec2> traj1, std::span<const Vec2> traj2,
                        const std::vector<bool>& valid1, const std::vector<bool>& valid2);

Homotopy homotopy_class(double dtheta, double theta_hat);
std::array<double, 3> homotopy_margin(double dtheta, double theta_hat);

PairwiseA2L pairwise_a2l(const Pose4& pose, const LanePolyline& lane, double align_thresh);

/// min(half_width - |lat|, s, L - s) with the unclamped arc length.
double a2l_margin(const Pose4& pose, const LanePolyline& lane);
/// Analytic gradient of a2l_margin w.r.t. the pose position.
Vec2 a2l_margin_gradient(const Pose4& pose, const LanePolyline& lane);

struct UnitaryA2L {
  int lane = 0;
  double margin = 0.0;
};
UnitaryA2L unitary_a2l(const Pose4& pose, const LaneGraph& graph);

/// Positions of the labeling window for agent `i`: the current frame followed
/// by the future frames.
std::vector<Vec2> future_window(const AgentTrack& agent);
std::vector<bool> future_window_valid(const AgentTrack& agent);

struct GroundTruthModes {
  SceneMode mode;
  ModeMargins margins;
};
GroundTruthModes extract_gtsm(const Scene& scene, double theta_hat);

/// (M+1)^N * 3^(N(N-1)/2); throws OverflowError past 2^64-1.
std::uint64_t sm_cardinality(int n, int m);

}  // namespace ctt
