#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ctt::ad {

/// A node of the reverse-mode tape. Every value is a dense row-major matrix;
/// higher-rank blocks are flattened into rows with the feature axis last.
struct Node {
  std::vector<double> value;
  std::vector<double> grad;
  int rows = 0;
  int cols = 0;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  size_t size() const { return value.size(); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  size_t size() const { return node_->value.size(); }
  const std::vector<double>& value() const { return node_->value; }
  double operator()(int r, int c) const { return node_->value[static_cast<size_t>(r * node_->cols + c)]; }
  double item() const { return node_->value.at(0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(int rows, int cols, std::vector<double> values);
Var constant(int rows, int cols, double fill);
Var scalar(double v);
/// Differentiable leaf.
Var leaf(int rows, int cols, std::vector<double> values);

/// Propagates d(root)/d(node) into every reachable node's grad. `root` must be 1x1.
void backward(const Var& root);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// x W + b with b broadcast over rows; `b` may be empty.
Var linear(const Var& x, const Var& w, const Var& b);
Var add_row(const Var& x, const Var& row);

// Elementwise (shapes must match).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a, double eps = 0.0);
/// atan2 with the squared radius clamped from below by eps2 in the gradient.
Var atan2(const Var& y, const Var& x, double eps2 = 0.0);
/// Elementwise clamp to constant bounds; zero gradient outside.
Var clamp(const Var& a, std::span<const double> lo, std::span<const double> hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// Shape manipulation.
Var reshape(const Var& a, int rows, int cols);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int start, int count);
/// Row gather; index -1 yields a zero row.
Var gather_rows(const Var& a, std::span<const int> index);
/// Flat element gather into a column vector.
Var pick(const Var& a, std::span<const int> flat_index);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_cols(const Var& a);  // [R, C] -> [R, 1]

Var log_softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Multi-head attention where every query owns its own key/value set.
/// q: [G, D]; k, v: [G*S, D] (keys of query g are rows g*S..g*S+S-1);
/// mask: G*S bytes, nonzero = attend. Queries with no valid key output zero.
/// If `weights` is given it receives the attention weights laid out [G, heads, S].
Var attention(const Var& q, const Var& k, const Var& v, std::span<const unsigned char> mask, int heads,
              std::vector<double>* weights = nullptr);

}  // namespace ctt::ad
