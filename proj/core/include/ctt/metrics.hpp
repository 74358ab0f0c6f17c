#pragma once

#include <map>
#include <span>
#include <vector>

#include "ctt/mode_label.hpp"
#include "ctt/scene.hpp"
#include "ctt/sm_sampling.hpp"

namespace ctt {

/// Decoded futures per sample: [K][N][Tf].
using SampleTrajectories = std::vector<std::vector<std::vector<TrackFrame>>>;

/// Index of the most probable sample (lowest index on ties).
int most_likely(std::span<const double> probs);

struct Rate {
  double hits = 0.0;
  double total = 0.0;

  double value() const { return total > 0.0 ? hits / total : 0.0; }
  void add(bool hit) {
    hits += hit ? 1.0 : 0.0;
    total += 1.0;
  }
  Rate& operator+=(const Rate& o) {
    hits += o.hits;
    total += o.total;
    return *this;
  }
};

struct DisplacementMetrics {
  double ml_ade = 0.0;
  double min_ade = 0.0;
  double ml_fde = 0.0;
  double min_fde = 0.0;
};

/// Joint (scene-level) metrics against the futures of `gt`. FDE uses each
/// agent's last valid future step.
DisplacementMetrics ade_fde(const SampleTrajectories& preds, std::span<const double> probs, const Scene& gt);

struct ModeMetrics {
  Rate a2l;           // per-factor top-1 of the marginals
  Rate a2a;
  bool sm_top1 = false;     // GT ranked first by energy within the GT-forced sample set
  bool sm_ml = false;       // energy argmax of the unforced sample set equals GT
};

/// `forced`: sample set containing the GT with its energies; `unforced`: the
/// evaluation sample set with its energies.
ModeMetrics mode_metrics(const MarginalDist& marginals, const SceneMode& gtsm, const std::vector<SceneMode>& forced,
                         std::span<const double> forced_energy, const std::vector<SceneMode>& unforced,
                         std::span<const double> unforced_energy);

/// Modes realized by each decoded sample: a2l from the end pose, a2a from the
/// winding of (current, predicted) windows. Pairs that coincide at some frame
/// get no class (`pair_ok` false).
struct RealizedModes {
  SceneMode mode;
  std::vector<bool> pair_ok;
};
RealizedModes realize_modes(const Scene& scene, const std::vector<std::vector<TrackFrame>>& pred, double theta_hat);

struct ConsistencyMetrics {
  Rate a2l;
  Rate a2a;
};

/// Lane factors count as realized when the end pose has a positive margin on
/// the conditioned lane (no lane: when no lane has one); pair factors when the
/// relabeled class equals the conditioned one.
ConsistencyMetrics consistency_rate(const Scene& scene, const SampleTrajectories& preds,
                                    const std::vector<SceneMode>& conditioned, double theta_hat);

struct CoverMetrics {
  bool a2l_correct = false;
  bool a2l_cover = false;
  bool a2a_correct = false;
  bool a2a_cover = false;
  bool sm_correct = false;
  bool sm_cover = false;
};

CoverMetrics cover_rates(const Scene& scene, const SampleTrajectories& preds, std::span<const double> probs,
                         const SceneMode& gtsm, double theta_hat);

struct CollisionMetrics {
  Rate ml;
  Rate all;
};

/// Overlap of footprint discs per agent pair and step.
CollisionMetrics collision_rate(const SampleTrajectories& preds, std::span<const double> probs,
                                std::span<const AgentStatic> statics);
/// Same test applied to the logged futures.
Rate gt_collision_rate(const Scene& scene);

struct SceneMetrics {
  DisplacementMetrics disp;
  ModeMetrics modes;
  ConsistencyMetrics consistency;
  CoverMetrics cover;
  CollisionMetrics collision;
};

struct EvalReport {
  int scenes = 0;
  double ml_ade = 0.0, min_ade = 0.0, ml_fde = 0.0, min_fde = 0.0;
  double a2l_accuracy = 0.0, a2a_accuracy = 0.0, sm_accuracy = 0.0;
  double a2l_ml_correct = 0.0, a2a_ml_correct = 0.0, sm_ml_correct = 0.0;
  double a2l_consistency = 0.0, a2a_consistency = 0.0;
  double a2l_correct = 0.0, a2l_cover = 0.0, a2a_correct = 0.0, a2a_cover = 0.0, sm_correct = 0.0, sm_cover = 0.0;
  double collision_ml = 0.0, collision_all = 0.0;
};

/// Collects per-scene results keyed by scene index; the reduction runs in key
/// order, so the report does not depend on insertion order.
class MetricAccumulator {
 public:
  void add(int scene_index, const SceneMetrics& m);
  int size() const { return static_cast<int>(scenes_.size()); }
  EvalReport report() const;

 private:
  std::map<int, SceneMetrics> scenes_;
};

}  // namespace ctt
