#include "ctt/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ctt/errors.hpp"
#include "ctt/losses.hpp"

namespace ctt {

namespace {

size_t sz(int v) { return static_cast<size_t>(v); }

double dist(const Pose4& a, const Pose4& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void check_shape(const SampleTrajectories& preds, std::span<const double> probs, int n) {
  if (preds.empty()) throw Error("metrics: no samples");
  if (probs.size() != preds.size()) throw Error("metrics: probability count does not match samples");
  for (const auto& s : preds)
    if (static_cast<int>(s.size()) != n) throw Error("metrics: sample agent count mismatch");
}

int best_index(std::span<const double> e) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(e.size()); ++k)
    if (e[sz(k)] > e[sz(best)]) best = k;
  return best;
}

}  // namespace

int most_likely(std::span<const double> probs) {
  if (probs.empty()) throw Error("most_likely: empty");
  return best_index(probs);
}

DisplacementMetrics ade_fde(const SampleTrajectories& preds, std::span<const double> probs, const Scene& gt) {
  const int n = gt.num_agents();
  check_shape(preds, probs, n);
  const int K = static_cast<int>(preds.size());
  std::vector<double> ade(sz(K), 0.0), fde(sz(K), 0.0);
  for (int k = 0; k < K; ++k) {
    double sum = 0.0, fsum = 0.0;
    int cnt = 0, fcnt = 0;
    for (int i = 0; i < n; ++i) {
      const auto& fut = *gt.agents[sz(i)].future;
      const auto& p = preds[sz(k)][sz(i)];
      int last = -1;
      for (int t = 0; t < static_cast<int>(fut.size()); ++t) {
        if (!fut[sz(t)].valid) continue;
        sum += dist(p.at(sz(t)).pose, fut[sz(t)].pose);
        ++cnt;
        last = t;
      }
      if (last >= 0) {
        fsum += dist(p[sz(last)].pose, fut[sz(last)].pose);
        ++fcnt;
      }
    }
    ade[sz(k)] = cnt ? sum / cnt : 0.0;
    fde[sz(k)] = fcnt ? fsum / fcnt : 0.0;
  }
  const int ml = most_likely(probs);
  DisplacementMetrics m;
  m.ml_ade = ade[sz(ml)];
  m.ml_fde = fde[sz(ml)];
  const int best = static_cast<int>(std::min_element(ade.begin(), ade.end()) - ade.begin());
  m.min_ade = ade[sz(best)];
  m.min_fde = *std::min_element(fde.begin(), fde.end());
  return m;
}

ModeMetrics mode_metrics(const MarginalDist& marginals, const SceneMode& gtsm, const std::vector<SceneMode>& forced,
                         std::span<const double> forced_energy, const std::vector<SceneMode>& unforced,
                         std::span<const double> unforced_energy) {
  if (forced.size() != forced_energy.size() || unforced.size() != unforced_energy.size())
    throw Error("mode_metrics: energy count does not match samples");
  ModeMetrics m;
  const SceneMode am = argmax_mode(marginals);
  for (int i = 0; i < gtsm.num_agents(); ++i) m.a2l.add(am.a2l[sz(i)] == gtsm.a2l[sz(i)]);
  for (size_t p = 0; p < gtsm.a2a.size(); ++p) m.a2a.add(am.a2a[p] == gtsm.a2a[p]);
  if (!forced.empty()) m.sm_top1 = forced[sz(best_index(forced_energy))] == gtsm;
  if (!unforced.empty()) m.sm_ml = unforced[sz(best_index(unforced_energy))] == gtsm;
  return m;
}

RealizedModes realize_modes(const Scene& scene, const std::vector<std::vector<TrackFrame>>& pred, double theta_hat) {
  const int n = scene.num_agents();
  if (static_cast<int>(pred.size()) != n) throw Error("realize_modes: agent count mismatch");
  RealizedModes r;
  r.mode.a2l.resize(sz(n));
  std::vector<std::vector<Vec2>> win(sz(n));
  for (int i = 0; i < n; ++i) {
    const auto& p = pred[sz(i)];
    const Pose4 end = p.empty() ? scene.agents[sz(i)].current().pose : p.back().pose;
    r.mode.a2l[sz(i)] = unitary_a2l(end, scene.lane_graph).lane;
    const Pose4& c = scene.agents[sz(i)].current().pose;
    win[sz(i)].push_back({c.x, c.y});
    for (const auto& f : p) win[sz(i)].push_back({f.pose.x, f.pose.y});
  }
  r.mode.a2a.assign(sz(num_pairs(n)), Homotopy::S);
  r.pair_ok.assign(sz(num_pairs(n)), true);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto p = sz(pair_index(i, j, n));
      try {
        r.mode.a2a[p] = homotopy_class(angular_distance(win[sz(i)], win[sz(j)]), theta_hat);
      } catch (const CoincidentAgents&) {
        r.pair_ok[p] = false;
      }
    }
  return r;
}

ConsistencyMetrics consistency_rate(const Scene& scene, const SampleTrajectories& preds,
                                    const std::vector<SceneMode>& conditioned, double theta_hat) {
  if (preds.size() != conditioned.size()) throw Error("consistency_rate: sample count mismatch");
  ConsistencyMetrics c;
  for (size_t k = 0; k < preds.size(); ++k) {
    const RealizedModes r = realize_modes(scene, preds[k], theta_hat);
    const SceneMode& m = conditioned[k];
    for (int i = 0; i < scene.num_agents(); ++i) {
      const int lane = m.a2l[sz(i)];
      if (lane == 0) {
        c.a2l.add(r.mode.a2l[sz(i)] == 0);
      } else {
        const auto& p = preds[k][sz(i)];
        const Pose4 end = p.empty() ? scene.agents[sz(i)].current().pose : p.back().pose;
        c.a2l.add(a2l_margin(end, scene.lane_graph.lane(lane)) > 0.0);
      }
    }
    for (size_t p = 0; p < m.a2a.size(); ++p) c.a2a.add(r.pair_ok[p] && r.mode.a2a[p] == m.a2a[p]);
  }
  return c;
}

CoverMetrics cover_rates(const Scene& scene, const SampleTrajectories& preds, std::span<const double> probs,
                         const SceneMode& gtsm, double theta_hat) {
  check_shape(preds, probs, scene.num_agents());
  const int ml = most_likely(probs);
  CoverMetrics c;
  for (int k = 0; k < static_cast<int>(preds.size()); ++k) {
    const RealizedModes r = realize_modes(scene, preds[sz(k)], theta_hat);
    const bool pairs_ok = std::all_of(r.pair_ok.begin(), r.pair_ok.end(), [](bool b) { return b; });
    const bool l = r.mode.a2l == gtsm.a2l;
    const bool h = pairs_ok && r.mode.a2a == gtsm.a2a;
    c.a2l_cover |= l;
    c.a2a_cover |= h;
    c.sm_cover |= l && h;
    if (k == ml) {
      c.a2l_correct = l;
      c.a2a_correct = h;
      c.sm_correct = l && h;
    }
  }
  return c;
}

namespace {

Rate sample_collisions(const std::vector<std::vector<TrackFrame>>& s, std::span<const AgentStatic> statics) {
  Rate r;
  const int n = static_cast<int>(s.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double rr = disc_radius(statics[sz(i)]) + disc_radius(statics[sz(j)]);
      const size_t T = std::min(s[sz(i)].size(), s[sz(j)].size());
      for (size_t t = 0; t < T; ++t) {
        if (!s[sz(i)][t].valid || !s[sz(j)][t].valid) continue;
        r.add(dist(s[sz(i)][t].pose, s[sz(j)][t].pose) < rr);
      }
    }
  return r;
}

}  // namespace

CollisionMetrics collision_rate(const SampleTrajectories& preds, std::span<const double> probs,
                                std::span<const AgentStatic> statics) {
  check_shape(preds, probs, static_cast<int>(statics.size()));
  CollisionMetrics c;
  for (size_t k = 0; k < preds.size(); ++k) {
    const Rate r = sample_collisions(preds[k], statics);
    c.all += r;
    if (static_cast<int>(k) == most_likely(probs)) c.ml = r;
  }
  return c;
}

Rate gt_collision_rate(const Scene& scene) {
  std::vector<std::vector<TrackFrame>> fut;
  std::vector<AgentStatic> st;
  for (const auto& a : scene.agents) {
    if (!a.future) throw Error("gt_collision_rate: scene has no futures");
    fut.push_back(*a.future);
    st.push_back(a.statics);
  }
  return sample_collisions(fut, st);
}

void MetricAccumulator::add(int scene_index, const SceneMetrics& m) { scenes_[scene_index] = m; }

EvalReport MetricAccumulator::report() const {
  EvalReport r;
  r.scenes = size();
  if (scenes_.empty()) return r;
  Rate a2l_acc, a2a_acc, cons_l, cons_h, col_ml, col_all;
  double a2l_ml = 0.0, a2a_ml = 0.0;
  int a2l_ml_n = 0, a2a_ml_n = 0;
  for (const auto& [idx, m] : scenes_) {
    r.ml_ade += m.disp.ml_ade;
    r.min_ade += m.disp.min_ade;
    r.ml_fde += m.disp.ml_fde;
    r.min_fde += m.disp.min_fde;
    a2l_acc += m.modes.a2l;
    a2a_acc += m.modes.a2a;
    if (m.modes.a2l.total > 0) {
      a2l_ml += m.modes.a2l.value();
      ++a2l_ml_n;
    }
    if (m.modes.a2a.total > 0) {
      a2a_ml += m.modes.a2a.value();
      ++a2a_ml_n;
    }
    r.sm_accuracy += m.modes.sm_top1;
    r.sm_ml_correct += m.modes.sm_ml;
    cons_l += m.consistency.a2l;
    cons_h += m.consistency.a2a;
    r.a2l_correct += m.cover.a2l_correct;
    r.a2l_cover += m.cover.a2l_cover;
    r.a2a_correct += m.cover.a2a_correct;
    r.a2a_cover += m.cover.a2a_cover;
    r.sm_correct += m.cover.sm_correct;
    r.sm_cover += m.cover.sm_cover;
    col_ml += m.collision.ml;
    col_all += m.collision.all;
  }
  const double n = r.scenes;
  for (double* v : {&r.ml_ade, &r.min_ade, &r.ml_fde, &r.min_fde, &r.sm_accuracy, &r.sm_ml_correct, &r.a2l_correct,
                    &r.a2l_cover, &r.a2a_correct, &r.a2a_cover, &r.sm_correct, &r.sm_cover})
    *v /= n;
  r.a2l_accuracy = a2l_acc.value();
  r.a2a_accuracy = a2a_acc.value();
  r.a2l_ml_correct = a2l_ml_n ? a2l_ml / a2l_ml_n : 0.0;
  r.a2a_ml_correct = a2a_ml_n ? a2a_ml / a2a_ml_n : 0.0;
  r.a2l_consistency = cons_l.value();
  r.a2a_consistency = cons_h.value();
  r.collision_ml = col_ml.value();
  r.collision_all = col_all.value();
  return r;
}

}  // namespace ctt
