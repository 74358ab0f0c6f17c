#pragma once

#include <optional>
#include <vector>

#include "ctt/mode_label.hpp"
#include "ctt/scene.hpp"

namespace ctt {

/// Marginal log-probabilities of the scene-mode factors. Rows are
/// log-normalized: a2l rows have M+1 entries (column 0 = no lane), a2a rows 3.
struct MarginalDist {
  int num_agents = 0;
  int num_lanes = 0;
  std::vector<double> a2l_logp;  // [N][M+1]
  std::vector<double> a2a_logp;  // [P][3]

  double a2l(int agent, int lane) const {
    return a2l_logp[static_cast<size_t>(agent * (num_lanes + 1) + lane)];
  }
  double a2a(int pair, Homotopy h) const {
    return a2a_logp[static_cast<size_t>(pair * 3 + static_cast<int>(h))];
  }
  int num_factors() const { return num_agents + num_pairs(num_agents); }
  bool operator==(const MarginalDist&) const = default;
};

/// Builds a normalized distribution from raw (unnormalized) scores.
MarginalDist marginals_from_logits(int n, int m, const std::vector<double>& a2l_logits,
                                   const std::vector<double>& a2a_logits);

/// Factor ids: 0..N-1 are a2l factors (agent i); N..N+P-1 are a2a factors.
struct FactorScore {
  int factor = 0;
  double score = 0.0;
};

struct ScoringConfig {
  double w_av = 1.0;
  double w_lane = 1.0;
  double w_entropy = 1.0;
  double sigma_av = 20.0;    // meters
  double sigma_lane = 5.0;   // meters
  bool operator==(const ScoringConfig&) const = default;
};

/// Scores sorted by descending importance, factor id ascending on ties.
std::vector<FactorScore> score_factors(const MarginalDist& marginals, const Scene& scene,
                                       const ScoringConfig& cfg = {});

struct SMSampleSet {
  std::vector<SceneMode> samples;
  std::vector<double> approx_logp;
  std::optional<int> gt_index;
};

struct SamplingConfig {
  int num_samples = 6;           // K
  int num_selected_factors = 4;  // F
  double prob_floor = 1e-6;
  std::size_t max_candidates = 10000;
  ScoringConfig scoring;
};

/// Log-probability of a scene mode under the product of marginals. Factors are
/// accumulated in factor-id order.
double product_logp(const MarginalDist& marginals, const SceneMode& mode);

/// Strict total order used for ranking: higher logp first, then lexicographic
/// order of (a2l, a2a).
bool ranks_before(double logp_a, const SceneMode& a, double logp_b, const SceneMode& b);

/// Two-stage importance sampling: select the F most important factors, fix the
/// rest to their argmax, and return the K best joint modes of the product of
/// marginals over the selected factors. When `gtsm` is given it is always part
/// of the result. With `diverse_lanes` (training only) the lane neighbours of
/// the ground-truth lanes are boosted first, see diverse_lane_augment.
/// Throws InsufficientModes if fewer than K candidates exist.
SMSampleSet sample_scene_modes(const MarginalDist& marginals, const Scene& scene, const SamplingConfig& cfg,
                               const std::optional<SceneMode>& gtsm = std::nullopt, bool diverse_lanes = false);

/// Lane-neighbor augmentation used only for sampling: the left and right
/// neighbours of each agent's ground-truth lane receive that lane's
/// probability before renormalization. Returns a modified copy.
MarginalDist diverse_lane_augment(const MarginalDist& marginals, const SceneMode& gtsm, const LaneGraph& graph);

/// Mode with each factor at its argmax (lowest index on ties).
SceneMode argmax_mode(const MarginalDist& marginals);

}  // namespace ctt
