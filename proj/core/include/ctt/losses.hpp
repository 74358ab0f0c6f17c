#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ctt/autodiff.hpp"
#include "ctt/mode_label.hpp"
#include "ctt/scene.hpp"

namespace ctt {

struct LossWeights {
  double marginal_a2l = 1.0;
  double marginal_a2a = 1.0;
  double joint_sm = 1.0;
  double recon = 1.0;
  double consistency_a2l = 1.0;
  double consistency_a2a = 1.0;
  double reg = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct RegWeights {
  double params = 1e-6;
  double controls = 1e-2;
  double collision = 0.1;
  bool operator==(const RegWeights&) const = default;
};

/// Mean negative log-probability of the target column over rows whose target
/// is >= 0.
ad::Var loss_marginal(const ad::Var& logp, std::span<const int> targets);

/// Cross-entropy of the ground-truth sample against the energies [K, 1].
/// Throws GTMissing without a ground-truth index.
ad::Var loss_joint_sm(const ad::Var& energies, std::optional<int> gt_index);

/// Trajectory tensors use rows (k, i, t) -> (k * layout_agents + i) * horizon + t.
struct TrajLayout {
  int samples = 0;
  int layout_agents = 0;
  int horizon = 0;
  int row(int k, int i, int t) const { return (k * layout_agents + i) * horizon + t; }
};

/// Mean XY distance to ground truth over valid (agent, step) of sample `k`.
/// `gt` and `valid` are [agents][horizon] flattened for the real agents.
ad::Var loss_recon(const ad::Var& poses, const TrajLayout& lay, int k, int agents, std::span<const TrackFrame> gt,
                   std::span<const unsigned char> valid);

/// Sum over samples and agents with a lane mode of relu(-margin(end pose, lane)).
ad::Var loss_consistency_a2l(const ad::Var& poses, const TrajLayout& lay, const std::vector<SceneMode>& modes,
                             const LaneGraph& lanes);

/// Sum over samples and pairs of relu(-margin of the conditioned homotopy class)
/// on the window (current pose, predicted steps).
ad::Var loss_consistency_a2a(const ad::Var& poses, const TrajLayout& lay, const std::vector<SceneMode>& modes,
                             std::span<const Pose4> current, double theta_hat);

/// Bearing clamp used by the differentiable winding angle.
inline constexpr double kBearingEps = 1e-3;

/// Footprint disc radius: half the rectangle diagonal.
double disc_radius(const AgentStatic& s);

/// Sum over samples, pairs and steps of relu(r_i + r_j - dist).
ad::Var collision_penalty(const ad::Var& poses, const TrajLayout& lay, std::span<const AgentStatic> statics);

/// w_p * param_sq + w_u * mean(controls^2) + w_c * collision. `controls` may be empty.
ad::Var loss_reg(const ad::Var& param_sq, const ad::Var& controls, const ad::Var& collision, const RegWeights& w);

struct LossParts {
  ad::Var marginal_a2l, marginal_a2a, joint_sm, recon, consistency_a2l, consistency_a2a, reg;
};

struct LossBreakdown {
  double marginal_a2l = 0.0;
  double marginal_a2a = 0.0;
  double joint_sm = 0.0;
  double recon = 0.0;
  double consistency_a2l = 0.0;
  double consistency_a2a = 0.0;
  double reg = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double s) const;
};

/// Weighted sum of the parts; missing parts count as zero.
ad::Var total_loss(const LossParts& parts, const LossWeights& w, LossBreakdown* breakdown = nullptr);

}  // namespace ctt
