#include "ctt/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "ctt/errors.hpp"

namespace ctt {

DynamicsLimits limits_for(AgentType type) {
  switch (type) {
    case AgentType::Vehicle: return {30.0, 6.0, 1.0};
    case AgentType::Cyclist: return {15.0, 4.0, 1.5};
    case AgentType::Pedestrian: return {3.0, 10.0, std::numeric_limits<double>::infinity()};
  }
  return {};
}

std::vector<TrackFrame> dynamics_rollout(const Pose4& init, double speed, std::span<const Control> controls, double dt,
                                         AgentType type) {
  if (!(dt > 0.0)) throw Error("dynamics_rollout: dt must be positive");
  const DynamicsLimits lim = limits_for(type);
  double x = init.x, y = init.y, th = init.heading(), v = speed;
  std::vector<TrackFrame> out;
  out.reserve(controls.size());
  for (const auto& u : controls) {
    const double a = std::clamp(u[0], -lim.a_max, lim.a_max);
    const double w = std::clamp(u[1], -lim.w_max, lim.w_max);
    v = std::clamp(v + a * dt, 0.0, lim.v_max);
    th = th + w * dt;
    x = x + v * std::cos(th) * dt;
    y = y + v * std::sin(th) * dt;
    out.push_back({Pose4::from_heading(x, y, th), v, true});
  }
  return out;
}

RolloutResult dynamics_rollout(std::span<const Pose4> init, std::span<const double> speed,
                               std::span<const AgentType> types, const ad::Var& controls, int horizon, double dt) {
  const auto B = static_cast<int>(init.size());
  if (controls.rows() != B * horizon || controls.cols() != 2) throw ShapeError("dynamics_rollout: control shape");
  std::vector<double> a_lo(static_cast<size_t>(B)), a_hi(static_cast<size_t>(B)), w_lo(static_cast<size_t>(B)),
      w_hi(static_cast<size_t>(B)), v_lo(static_cast<size_t>(B), 0.0), v_hi(static_cast<size_t>(B));
  std::vector<double> x0(static_cast<size_t>(B)), y0(static_cast<size_t>(B)), th0(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto lim = limits_for(types[static_cast<size_t>(b)]);
    a_lo[static_cast<size_t>(b)] = -lim.a_max;
    a_hi[static_cast<size_t>(b)] = lim.a_max;
    w_lo[static_cast<size_t>(b)] = -lim.w_max;
    w_hi[static_cast<size_t>(b)] = lim.w_max;
    v_hi[static_cast<size_t>(b)] = lim.v_max;
    x0[static_cast<size_t>(b)] = init[static_cast<size_t>(b)].x;
    y0[static_cast<size_t>(b)] = init[static_cast<size_t>(b)].y;
    th0[static_cast<size_t>(b)] = init[static_cast<size_t>(b)].heading();
  }
  ad::Var x = ad::constant(B, 1, x0);
  ad::Var y = ad::constant(B, 1, y0);
  ad::Var th = ad::constant(B, 1, th0);
  ad::Var v = ad::constant(B, 1, std::vector<double>(speed.begin(), speed.end()));

  std::vector<ad::Var> xs, ys, ss, cs, vs;
  std::vector<int> rows(static_cast<size_t>(B));
  for (int t = 0; t < horizon; ++t) {
    for (int b = 0; b < B; ++b) rows[static_cast<size_t>(b)] = b * horizon + t;
    const ad::Var u = ad::gather_rows(controls, rows);
    const ad::Var a = ad::clamp(ad::slice_cols(u, 0, 1), a_lo, a_hi);
    const ad::Var w = ad::clamp(ad::slice_cols(u, 1, 1), w_lo, w_hi);
    v = ad::clamp(ad::add(v, ad::scale(a, dt)), v_lo, v_hi);
    th = ad::add(th, ad::scale(w, dt));
    const ad::Var s = ad::sin(th), c = ad::cos(th);
    x = ad::add(x, ad::scale(ad::mul(v, c), dt));
    y = ad::add(y, ad::scale(ad::mul(v, s), dt));
    xs.push_back(x);
    ys.push_back(y);
    ss.push_back(s);
    cs.push_back(c);
    vs.push_back(v);
  }
  auto stack = [&](const std::vector<ad::Var>& parts) { return ad::reshape(ad::concat_cols(parts), B * horizon, 1); };
  RolloutResult r;
  r.poses = ad::concat_cols({stack(xs), stack(ys), stack(ss), stack(cs)});
  r.speed = stack(vs);
  return r;
}

}  // namespace ctt
