#include "ctt/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "ctt/errors.hpp"
#include "ctt/geometry.hpp"

namespace ctt {

namespace {

size_t sz(int v) { return static_cast<size_t>(v); }

ad::Var column(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return ad::constant(n, 1, std::move(v));
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {marginal_a2l, marginal_a2a, joint_sm, recon, consistency_a2l, consistency_a2a, reg})
    if (!std::isfinite(w) || w < 0.0) throw Error("loss weights must be finite and non-negative");
}

ad::Var loss_marginal(const ad::Var& logp, std::span<const int> targets) {
  if (targets.size() != sz(logp.rows())) throw ShapeError("loss_marginal: one target per row required");
  std::vector<int> idx;
  for (int r = 0; r < logp.rows(); ++r) {
    const int c = targets[sz(r)];
    if (c < 0) continue;
    if (c >= logp.cols()) throw ShapeError("loss_marginal: target out of range");
    idx.push_back(r * logp.cols() + c);
  }
  if (idx.empty()) return ad::scalar(0.0);
  return ad::neg(ad::mean(ad::pick(logp, idx)));
}

ad::Var loss_joint_sm(const ad::Var& energies, std::optional<int> gt_index) {
  if (!gt_index) throw GTMissing("joint scene-mode loss needs the ground-truth sample");
  const int K = static_cast<int>(energies.size());
  if (*gt_index < 0 || *gt_index >= K) throw GTMissing("ground-truth sample index out of range");
  const ad::Var lsm = ad::log_softmax_rows(ad::reshape(energies, 1, K));
  const int idx[1] = {*gt_index};
  return ad::neg(ad::sum(ad::pick(lsm, idx)));
}

ad::Var loss_recon(const ad::Var& poses, const TrajLayout& lay, int k, int agents, std::span<const TrackFrame> gt,
                   std::span<const unsigned char> valid) {
  const int T = lay.horizon;
  if (gt.size() != sz(agents * T) || valid.size() != sz(agents * T)) throw ShapeError("loss_recon: ground truth size");
  std::vector<int> rows;
  std::vector<double> target;
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < T; ++t) {
      if (!valid[sz(i * T + t)]) continue;
      rows.push_back(lay.row(k, i, t));
      target.push_back(gt[sz(i * T + t)].pose.x);
      target.push_back(gt[sz(i * T + t)].pose.y);
    }
  if (rows.empty()) return ad::scalar(0.0);
  const int R = static_cast<int>(rows.size());
  const ad::Var xy = ad::slice_cols(ad::gather_rows(poses, rows), 0, 2);
  const ad::Var d = ad::sub(xy, ad::constant(R, 2, std::move(target)));
  return ad::mean(ad::sqrt(ad::sum_cols(ad::square(d))));
}

ad::Var loss_consistency_a2l(const ad::Var& poses, const TrajLayout& lay, const std::vector<SceneMode>& modes,
                             const LaneGraph& lanes) {
  std::vector<int> rows;
  std::vector<double> lin_x, lin_y, lin_c, lin_on, vx, vy, dist_on, s_x, s_y, s_c, hw, len;
  for (int k = 0; k < static_cast<int>(modes.size()); ++k) {
    const SceneMode& m = modes[sz(k)];
    for (int i = 0; i < m.num_agents(); ++i) {
      const int lid = m.a2l[sz(i)];
      if (lid == 0) continue;
      const LanePolyline& lane = lanes.lane(lid);
      const int r = lay.row(k, i, lay.horizon - 1);
      const Pose4 p{poses(r, 0), poses(r, 1), poses(r, 2), poses(r, 3)};
      const FrenetProj pr = project_onto_polyline(p, lane);
      const auto& a = lane.points[sz(pr.segment)];
      const auto& b = lane.points[sz(pr.segment) + 1];
      const double L = std::hypot(b.x - a.x, b.y - a.y);
      const double ux = (b.x - a.x) / L, uy = (b.y - a.y) / L;
      const double t = ((p.x - a.x) * ux + (p.y - a.y) * uy) / L;
      const bool at_vertex = pr.in_extent && (t <= 0.0 || t >= 1.0);
      const double cum = pr.s_unclamped - (pr.in_extent ? std::clamp(t, 0.0, 1.0) : t) * L;
      rows.push_back(r);
      // lat = ux (y - ay) - uy (x - ax) on the segment interior or outside the extent.
      lin_x.push_back(-uy);
      lin_y.push_back(ux);
      lin_c.push_back(uy * a.x - ux * a.y);
      lin_on.push_back(at_vertex ? 0.0 : 1.0);
      vx.push_back(pr.point.x);
      vy.push_back(pr.point.y);
      dist_on.push_back(at_vertex ? 1.0 : 0.0);
      // s = cum + u . (p - a), constant at a vertex.
      s_x.push_back(at_vertex ? 0.0 : ux);
      s_y.push_back(at_vertex ? 0.0 : uy);
      s_c.push_back(at_vertex ? pr.s_unclamped : cum - ux * a.x - uy * a.y);
      hw.push_back(lane.half_width);
      len.push_back(lane.length());
    }
  }
  if (rows.empty()) return ad::scalar(0.0);
  const ad::Var g = ad::gather_rows(poses, rows);
  const ad::Var x = ad::slice_cols(g, 0, 1), y = ad::slice_cols(g, 1, 1);
  const ad::Var lin = ad::add(ad::add(ad::mul(x, column(lin_x)), ad::mul(y, column(lin_y))), column(lin_c));
  const ad::Var dx = ad::sub(x, column(vx)), dy = ad::sub(y, column(vy));
  const ad::Var dist = ad::sqrt(ad::add(ad::square(dx), ad::square(dy)));
  const ad::Var abs_lat = ad::add(ad::mul(ad::abs(lin), column(lin_on)), ad::mul(dist, column(dist_on)));
  const ad::Var s = ad::add(ad::add(ad::mul(x, column(s_x)), ad::mul(y, column(s_y))), column(s_c));
  const ad::Var m_lat = ad::sub(column(hw), abs_lat);
  const ad::Var m_end = ad::sub(column(len), s);
  const ad::Var margin = ad::minimum(ad::minimum(m_lat, s), m_end);
  return ad::sum(ad::relu(ad::neg(margin)));
}

ad::Var loss_consistency_a2a(const ad::Var& poses, const TrajLayout& lay, const std::vector<SceneMode>& modes,
                             std::span<const Pose4> current, double theta_hat) {
  const int T = lay.horizon;
  const int R = poses.rows();
  std::vector<int> ri, rj;
  std::vector<double> onehot;
  for (int k = 0; k < static_cast<int>(modes.size()); ++k) {
    const SceneMode& m = modes[sz(k)];
    const int n = m.num_agents();
    if (current.size() < sz(n)) throw ShapeError("loss_consistency_a2a: missing current poses");
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        for (int t = 0; t <= T; ++t) {
          ri.push_back(t == 0 ? R + i : lay.row(k, i, t - 1));
          rj.push_back(t == 0 ? R + j : lay.row(k, j, t - 1));
        }
        std::array<double, 3> h{};
        h[static_cast<size_t>(m.pair(i, j))] = 1.0;
        onehot.insert(onehot.end(), h.begin(), h.end());
      }
  }
  if (ri.empty()) return ad::scalar(0.0);
  const int Q = static_cast<int>(onehot.size() / 3);
  std::vector<double> cur;
  for (const auto& p : current) {
    cur.push_back(p.x);
    cur.push_back(p.y);
  }
  const ad::Var src =
      ad::concat_rows({ad::slice_cols(poses, 0, 2), ad::constant(static_cast<int>(current.size()), 2, std::move(cur))});
  const ad::Var rel = ad::sub(ad::gather_rows(src, ri), ad::gather_rows(src, rj));
  const ad::Var phi = ad::atan2(ad::slice_cols(rel, 1, 1), ad::slice_cols(rel, 0, 1), kBearingEps * kBearingEps);

  std::vector<int> next, prev;
  std::vector<double> wrap;
  for (int q = 0; q < Q; ++q)
    for (int t = 0; t < T; ++t) {
      const int a = q * (T + 1) + t;
      prev.push_back(a);
      next.push_back(a + 1);
      const double raw = phi(a + 1, 0) - phi(a, 0);
      wrap.push_back(wrap_angle(raw) - raw);
    }
  const ad::Var inc = ad::add(ad::sub(ad::gather_rows(phi, next), ad::gather_rows(phi, prev)), column(std::move(wrap)));
  const ad::Var dtheta = ad::sum_cols(ad::reshape(inc, Q, T));
  const ad::Var m_cw = ad::add_scalar(ad::neg(dtheta), -theta_hat);
  const ad::Var m_s = ad::add_scalar(ad::neg(ad::abs(dtheta)), theta_hat);
  const ad::Var m_ccw = ad::add_scalar(dtheta, -theta_hat);
  const ad::Var sel = ad::sum_cols(ad::mul(ad::concat_cols({m_cw, m_s, m_ccw}), ad::constant(Q, 3, std::move(onehot))));
  return ad::sum(ad::relu(ad::neg(sel)));
}

double disc_radius(const AgentStatic& s) { return 0.5 * std::hypot(s.length, s.width); }

ad::Var collision_penalty(const ad::Var& poses, const TrajLayout& lay, std::span<const AgentStatic> statics) {
  const int n = static_cast<int>(statics.size());
  std::vector<int> ri, rj;
  std::vector<double> reach;
  for (int k = 0; k < lay.samples; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        for (int t = 0; t < lay.horizon; ++t) {
          ri.push_back(lay.row(k, i, t));
          rj.push_back(lay.row(k, j, t));
          reach.push_back(disc_radius(statics[sz(i)]) + disc_radius(statics[sz(j)]));
        }
  if (ri.empty()) return ad::scalar(0.0);
  const ad::Var d = ad::sub(ad::slice_cols(ad::gather_rows(poses, ri), 0, 2), ad::slice_cols(ad::gather_rows(poses, rj), 0, 2));
  const ad::Var dist = ad::sqrt(ad::sum_cols(ad::square(d)));
  return ad::sum(ad::relu(ad::sub(column(std::move(reach)), dist)));
}

ad::Var loss_reg(const ad::Var& param_sq, const ad::Var& controls, const ad::Var& collision, const RegWeights& w) {
  ad::Var total = ad::scale(param_sq, w.params);
  if (controls && controls.size() > 0) total = ad::add(total, ad::scale(ad::mean(ad::square(controls)), w.controls));
  if (collision) total = ad::add(total, ad::scale(collision, w.collision));
  return total;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  marginal_a2l += o.marginal_a2l;
  marginal_a2a += o.marginal_a2a;
  joint_sm += o.joint_sm;
  recon += o.recon;
  consistency_a2l += o.consistency_a2l;
  consistency_a2a += o.consistency_a2a;
  reg += o.reg;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const {
  LossBreakdown b = *this;
  for (double* v : {&b.marginal_a2l, &b.marginal_a2a, &b.joint_sm, &b.recon, &b.consistency_a2l, &b.consistency_a2a,
                    &b.reg, &b.total})
    *v *= s;
  return b;
}

ad::Var total_loss(const LossParts& parts, const LossWeights& w, LossBreakdown* breakdown) {
  w.validate();
  const std::pair<const ad::Var*, double> terms[] = {
      {&parts.marginal_a2l, w.marginal_a2l}, {&parts.marginal_a2a, w.marginal_a2a},
      {&parts.joint_sm, w.joint_sm},         {&parts.recon, w.recon},
      {&parts.consistency_a2l, w.consistency_a2l}, {&parts.consistency_a2a, w.consistency_a2a},
      {&parts.reg, w.reg}};
  double* slots[7] = {nullptr};
  if (breakdown) {
    *breakdown = {};
    double* b[7] = {&breakdown->marginal_a2l, &breakdown->marginal_a2a, &breakdown->joint_sm, &breakdown->recon,
                    &breakdown->consistency_a2l, &breakdown->consistency_a2a, &breakdown->reg};
    std::copy(b, b + 7, slots);
  }
  ad::Var total = ad::scalar(0.0);
  for (int q = 0; q < 7; ++q) {
    const auto& [v, weight] = terms[q];
    if (!*v) continue;
    if (slots[q]) *slots[q] = v->item();
    if (weight == 0.0) continue;
    total = ad::add(total, ad::scale(*v, weight));
  }
  if (breakdown) breakdown->total = total.item();
  return total;
}

}  // namespace ctt
