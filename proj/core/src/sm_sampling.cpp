#include "ctt/sm_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "ctt/errors.hpp"
#include "ctt/geometry.hpp"

namespace ctt {

namespace {

void log_normalize_rows(std::vector<double>& v, int cols) {
  for (size_t r = 0; r + static_cast<size_t>(cols) <= v.size(); r += static_cast<size_t>(cols)) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c) mx = std::max(mx, v[r + static_cast<size_t>(c)]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += std::exp(v[r + static_cast<size_t>(c)] - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < cols; ++c) v[r + static_cast<size_t>(c)] -= lse;
  }
}

double normalized_entropy(const double* logp, int cols) {
  if (cols <= 1) return 0.0;
  double h = 0.0;
  for (int c = 0; c < cols; ++c) {
    const double p = std::exp(logp[c]);
    if (p > 0.0) h -= p * logp[c];
  }
  return h / std::log(static_cast<double>(cols));
}

int factor_cardinality(const MarginalDist& md, int factor) {
  return factor < md.num_agents ? md.num_lanes + 1 : kNumHomotopy;
}

double factor_logp(const MarginalDist& md, int factor, int value) {
  if (factor < md.num_agents) return md.a2l(factor, value);
  return md.a2a(factor - md.num_agents, static_cast<Homotopy>(value));
}

void set_factor(SceneMode& sm, int n, int factor, int value) {
  if (factor < n)
    sm.a2l[static_cast<size_t>(factor)] = value;
  else
    sm.a2a[static_cast<size_t>(factor - n)] = static_cast<Homotopy>(value);
}

struct Candidate {
  double logp;
  SceneMode mode;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
  return ranks_before(a.logp, a.mode, b.logp, b.mode);
}

}  // namespace

MarginalDist marginals_from_logits(int n, int m, const std::vector<double>& a2l_logits,
                                   const std::vector<double>& a2a_logits) {
  MarginalDist md;
  md.num_agents = n;
  md.num_lanes = m;
  md.a2l_logp = a2l_logits;
  md.a2a_logp = a2a_logits;
  if (md.a2l_logp.size() != static_cast<size_t>(n * (m + 1)) || md.a2a_logp.size() != static_cast<size_t>(num_pairs(n) * 3))
    throw ShapeError("marginals_from_logits: shape mismatch");
  log_normalize_rows(md.a2l_logp, m + 1);
  log_normalize_rows(md.a2a_logp, 3);
  return md;
}

std::vector<FactorScore> score_factors(const MarginalDist& md, const Scene& scene, const ScoringConfig& cfg) {
  const int n = md.num_agents;
  std::vector<double> d_av(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  const Pose4& ego = scene.agents.at(static_cast<size_t>(scene.ego_index)).current().pose;
  for (int i = 0; i < n && i < scene.num_agents(); ++i) {
    const Pose4& p = scene.agents[static_cast<size_t>(i)].current().pose;
    d_av[static_cast<size_t>(i)] = std::hypot(p.x - ego.x, p.y - ego.y);
  }

  std::vector<FactorScore> out;
  out.reserve(static_cast<size_t>(md.num_factors()));
  for (int i = 0; i < n; ++i) {
    double d_lane = std::numeric_limits<double>::infinity();
    const Pose4& p = scene.agents.at(static_cast<size_t>(i)).current().pose;
    for (const auto& lane : scene.lane_graph.lanes) {
      const FrenetProj pr = project_onto_polyline(p, lane);
      d_lane = std::min(d_lane, std::hypot(p.x - pr.point.x, p.y - pr.point.y));
    }
    const double* row = &md.a2l_logp[static_cast<size_t>(i * (md.num_lanes + 1))];
    const double s = cfg.w_av * std::exp(-d_av[static_cast<size_t>(i)] / cfg.sigma_av) +
                     cfg.w_lane * std::exp(-d_lane / cfg.sigma_lane) +
                     cfg.w_entropy * normalized_entropy(row, md.num_lanes + 1);
    out.push_back({i, s});
  }
  for (int p = 0; p < num_pairs(n); ++p) {
    const auto [i, j] = pair_agents(p, n);
    const double d = std::min(d_av[static_cast<size_t>(i)], d_av[static_cast<size_t>(j)]);
    const double s = cfg.w_av * std::exp(-d / cfg.sigma_av) +
                     cfg.w_entropy * normalized_entropy(&md.a2a_logp[static_cast<size_t>(p * 3)], 3);
    out.push_back({n + p, s});
  }
  std::stable_sort(out.begin(), out.end(), [](const FactorScore& a, const FactorScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.factor < b.factor;
  });
  return out;
}

double product_logp(const MarginalDist& md, const SceneMode& mode) {
  double lp = 0.0;
  for (int i = 0; i < md.num_agents; ++i) lp += md.a2l(i, mode.a2l[static_cast<size_t>(i)]);
  for (int p = 0; p < num_pairs(md.num_agents); ++p) lp += md.a2a(p, mode.a2a[static_cast<size_t>(p)]);
  return lp;
}

bool ranks_before(double logp_a, const SceneMode& a, double logp_b, const SceneMode& b) {
  if (logp_a != logp_b) return logp_a > logp_b;
  if (a.a2l != b.a2l) return a.a2l < b.a2l;
  return a.a2a < b.a2a;
}

SceneMode argmax_mode(const MarginalDist& md) {
  SceneMode sm;
  sm.a2l.resize(static_cast<size_t>(md.num_agents));
  sm.a2a.resize(static_cast<size_t>(num_pairs(md.num_agents)));
  for (int f = 0; f < md.num_factors(); ++f) {
    int best = 0;
    for (int v = 1; v < factor_cardinality(md, f); ++v)
      if (factor_logp(md, f, v) > factor_logp(md, f, best)) best = v;
    set_factor(sm, md.num_agents, f, best);
  }
  return sm;
}

MarginalDist diverse_lane_augment(const MarginalDist& marginals, const SceneMode& gtsm, const LaneGraph& graph) {
  MarginalDist out = marginals;
  const int cols = out.num_lanes + 1;
  bool changed = false;
  for (int i = 0; i < out.num_agents; ++i) {
    const int gt_lane = gtsm.a2l.at(static_cast<size_t>(i));
    if (gt_lane <= 0) continue;
    std::vector<int> nbrs = graph.neighbors(gt_lane, LaneRelation::LeftAdj);
    const auto right = graph.neighbors(gt_lane, LaneRelation::RightAdj);
    nbrs.insert(nbrs.end(), right.begin(), right.end());
    if (nbrs.empty()) continue;
    double* row = &out.a2l_logp[static_cast<size_t>(i * cols)];
    for (int l : nbrs)
      if (l >= 1 && l <= out.num_lanes) row[l] = row[gt_lane];
    changed = true;
  }
  if (changed) log_normalize_rows(out.a2l_logp, cols);
  return out;
}

SMSampleSet sample_scene_modes(const MarginalDist& marginals, const Scene& scene, const SamplingConfig& cfg,
                               const std::optional<SceneMode>& gtsm, bool diverse_lanes) {
  if (cfg.num_samples < 1) throw Error("sample_scene_modes: K must be >= 1");
  if (cfg.num_selected_factors < 1) throw Error("sample_scene_modes: F must be >= 1");
  const MarginalDist md = (diverse_lanes && gtsm) ? diverse_lane_augment(marginals, *gtsm, scene.lane_graph) : marginals;
  const int n = md.num_agents;
  const auto K = static_cast<size_t>(cfg.num_samples);

  const auto scores = score_factors(md, scene, cfg.scoring);
  const int F = std::min(cfg.num_selected_factors, md.num_factors());
  std::vector<int> selected;
  for (int k = 0; k < F; ++k) selected.push_back(scores[static_cast<size_t>(k)].factor);
  std::sort(selected.begin(), selected.end());

  // Per selected factor: admissible values sorted by descending probability.
  const double log_floor = std::log(cfg.prob_floor);
  std::vector<std::vector<int>> choices;
  for (int f : selected) {
    std::vector<int> vals;
    for (int v = 0; v < factor_cardinality(md, f); ++v)
      if (factor_logp(md, f, v) >= log_floor) vals.push_back(v);
    std::stable_sort(vals.begin(), vals.end(),
                     [&](int a, int b) { return factor_logp(md, f, a) > factor_logp(md, f, b); });
    choices.push_back(std::move(vals));
  }
  const SceneMode base = argmax_mode(md);

  double total = 1.0;
  for (const auto& c : choices) total *= static_cast<double>(c.size());

  std::vector<Candidate> cands;
  if (total <= static_cast<double>(cfg.max_candidates)) {
    std::vector<size_t> idx(choices.size(), 0);
    while (true) {
      SceneMode sm = base;
      for (size_t s = 0; s < selected.size(); ++s) set_factor(sm, n, selected[s], choices[s][idx[s]]);
      cands.push_back({product_logp(md, sm), std::move(sm)});
      size_t s = 0;
      for (; s < idx.size(); ++s) {
        if (++idx[s] < choices[s].size()) break;
        idx[s] = 0;
      }
      if (s == idx.size()) break;
    }
    const size_t keep = std::min(K, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(), candidate_before);
    cands.resize(keep);
  } else {
    // Best-first expansion over the sorted choice lists.
    using Key = std::vector<size_t>;
    auto key_logp = [&](const Key& key) {
      double lp = 0.0;
      for (size_t s = 0; s < key.size(); ++s) lp += factor_logp(md, selected[s], choices[s][key[s]]);
      return lp;
    };
    auto cmp = [](const std::pair<double, Key>& a, const std::pair<double, Key>& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second > b.second;
    };
    std::priority_queue<std::pair<double, Key>, std::vector<std::pair<double, Key>>, decltype(cmp)> heap(cmp);
    std::set<Key> seen;
    Key start(choices.size(), 0);
    heap.push({key_logp(start), start});
    seen.insert(start);
    double kth = std::numeric_limits<double>::infinity();
    while (!heap.empty()) {
      auto [lp, key] = heap.top();
      if (cands.size() >= K && lp < kth - 1e-9) break;
      heap.pop();
      SceneMode sm = base;
      for (size_t s = 0; s < selected.size(); ++s) set_factor(sm, n, selected[s], choices[s][key[s]]);
      cands.push_back({product_logp(md, sm), std::move(sm)});
      if (cands.size() == K) kth = lp;
      for (size_t s = 0; s < key.size(); ++s) {
        if (key[s] + 1 >= choices[s].size()) continue;
        Key next = key;
        ++next[s];
        if (seen.insert(next).second) heap.push({key_logp(next), next});
      }
    }
    std::sort(cands.begin(), cands.end(), candidate_before);
    if (cands.size() > K) cands.resize(K);
  }

  SMSampleSet out;
  for (auto& c : cands) {
    out.samples.push_back(std::move(c.mode));
    out.approx_logp.push_back(c.logp);
  }
  if (gtsm) {
    const auto it = std::find(out.samples.begin(), out.samples.end(), *gtsm);
    if (it != out.samples.end()) {
      out.gt_index = static_cast<int>(it - out.samples.begin());
    } else if (out.samples.size() < K) {
      out.samples.push_back(*gtsm);
      out.approx_logp.push_back(product_logp(md, *gtsm));
      out.gt_index = static_cast<int>(out.samples.size()) - 1;
    } else {
      out.samples.back() = *gtsm;
      out.approx_logp.back() = product_logp(md, *gtsm);
      out.gt_index = static_cast<int>(out.samples.size()) - 1;
    }
  }
  if (out.samples.size() < K)
    throw InsufficientModes("only " + std::to_string(out.samples.size()) + " distinct scene modes for K = " +
                            std::to_string(K));
  return out;
}

}  // namespace ctt
