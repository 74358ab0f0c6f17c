#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ctt/autodiff.hpp"

namespace ctt::nn {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  bool operator==(const Tensor&) const = default;
};

/// Named trainable tensors. Ordered by name so every traversal (init, I/O,
/// gradient reduction) is deterministic.
class ParamStore {
 public:
  enum class Init { Xavier, Zeros, Ones, Normal };

  /// Registers a tensor if absent; returns the existing one otherwise.
  Tensor& declare(const std::string& name, int rows, int cols, Init init, std::mt19937_64& rng);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }
  std::size_t num_scalars() const;
  double squared_norm() const;
  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Tensor> params_;
};

using GradStore = std::map<std::string, std::vector<double>>;

/// One forward pass: binds parameters to fresh differentiable leaves so that
/// independent passes never share gradient buffers.
class Scope {
 public:
  explicit Scope(const ParamStore& params) : params_(&params) {}

  ad::Var p(const std::string& name);
  const ParamStore& params() const { return *params_; }
  /// Gradients of every parameter touched in this pass.
  GradStore grads() const;
  /// Sum of squared values of the bound parameters, differentiable.
  ad::Var l2_of_bound() const;

 private:
  const ParamStore* params_;
  std::map<std::string, ad::Var> bound_;
};

void accumulate(GradStore& into, const GradStore& g, double weight = 1.0);

// Layers. Each `declare_*` registers parameters under `prefix`; the matching
// call evaluates it.
void declare_linear(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int in, int out,
                    bool zero_init = false);
ad::Var apply_linear(Scope& s, const std::string& prefix, const ad::Var& x);

void declare_mlp(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int in, int hidden, int out,
                 bool zero_last = false);
/// Linear -> ReLU -> Linear.
ad::Var apply_mlp(Scope& s, const std::string& prefix, const ad::Var& x);

void declare_layer_norm(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int dim);
ad::Var apply_layer_norm(Scope& s, const std::string& prefix, const ad::Var& x);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables
  bool operator==(const AdamConfig&) const = default;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  /// Returns the pre-clipping global gradient norm.
  double step(ParamStore& params, const GradStore& grads, double lr_scale = 1.0);

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  std::int64_t steps() const { return t_; }
  const std::map<std::string, std::vector<double>>& first_moment() const { return m_; }
  const std::map<std::string, std::vector<double>>& second_moment() const { return v_; }
  void restore(std::int64_t t, std::map<std::string, std::vector<double>> m, std::map<std::string, std::vector<double>> v);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

}  // namespace ctt::nn
