#include "ctt/nn.hpp"

#include <cmath>

#include "ctt/errors.hpp"

namespace ctt::nn {

Tensor& ParamStore::declare(const std::string& name, int rows, int cols, Init init, std::mt19937_64& rng) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (it->second.rows != rows || it->second.cols != cols) throw ShapeError("parameter '" + name + "' redeclared");
    return it->second;
  }
  Tensor t{rows, cols, std::vector<double>(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0)};
  switch (init) {
    case Init::Zeros: break;
    case Init::Ones: std::fill(t.data.begin(), t.data.end(), 1.0); break;
    case Init::Xavier: {
      const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-a, a);
      for (double& x : t.data) x = u(rng);
      break;
    }
    case Init::Normal: {
      std::normal_distribution<double> nd(0.0, 0.1);
      for (double& x : t.data) x = nd(rng);
      break;
    }
  }
  return params_.emplace(name, std::move(t)).first->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.data.size();
  return n;
}

double ParamStore::squared_norm() const {
  double s = 0.0;
  for (const auto& [_, t] : params_)
    for (double x : t.data) s += x * x;
  return s;
}

ad::Var Scope::p(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& t = params_->at(name);
  ad::Var v = ad::leaf(t.rows, t.cols, t.data);
  bound_.emplace(name, v);
  return v;
}

GradStore Scope::grads() const {
  GradStore g;
  for (const auto& [name, v] : bound_) {
    if (v.grad().empty()) continue;
    g.emplace(name, v.grad());
  }
  return g;
}

ad::Var Scope::l2_of_bound() const {
  std::vector<ad::Var> parts;
  for (const auto& [_, v] : bound_) parts.push_back(ad::sum(ad::square(v)));
  if (parts.empty()) return ad::scalar(0.0);
  ad::Var total = parts.front();
  for (size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  return total;
}

void accumulate(GradStore& into, const GradStore& g, double weight) {
  for (const auto& [name, v] : g) {
    auto& dst = into[name];
    if (dst.empty()) dst.assign(v.size(), 0.0);
    for (size_t i = 0; i < v.size(); ++i) dst[i] += weight * v[i];
  }
}

void declare_linear(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int in, int out,
                    bool zero_init) {
  ps.declare(prefix + ".w", in, out, zero_init ? ParamStore::Init::Zeros : ParamStore::Init::Xavier, rng);
  ps.declare(prefix + ".b", 1, out, ParamStore::Init::Zeros, rng);
}

ad::Var apply_linear(Scope& s, const std::string& prefix, const ad::Var& x) {
  return ad::linear(x, s.p(prefix + ".w"), s.p(prefix + ".b"));
}

void declare_mlp(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int in, int hidden, int out,
                 bool zero_last) {
  declare_linear(ps, rng, prefix + ".l1", in, hidden);
  declare_linear(ps, rng, prefix + ".l2", hidden, out, zero_last);
}

ad::Var apply_mlp(Scope& s, const std::string& prefix, const ad::Var& x) {
  return apply_linear(s, prefix + ".l2", ad::relu(apply_linear(s, prefix + ".l1", x)));
}

void declare_layer_norm(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int dim) {
  ps.declare(prefix + ".g", 1, dim, ParamStore::Init::Ones, rng);
  ps.declare(prefix + ".b", 1, dim, ParamStore::Init::Zeros, rng);
}

ad::Var apply_layer_norm(Scope& s, const std::string& prefix, const ad::Var& x) {
  return ad::layer_norm(x, s.p(prefix + ".g"), s.p(prefix + ".b"));
}

double Adam::step(ParamStore& params, const GradStore& grads, double lr_scale) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.lr * lr_scale;
  for (auto& [name, t] : params.all()) {
    auto git = grads.find(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(t.data.size(), 0.0);
      v.assign(t.data.size(), 0.0);
    }
    for (size_t i = 0; i < t.data.size(); ++i) {
      const double g = git == grads.end() ? 0.0 : git->second[i] * clip;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      t.data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

void Adam::restore(std::int64_t t, std::map<std::string, std::vector<double>> m,
                   std::map<std::string, std::vector<double>> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace ctt::nn
