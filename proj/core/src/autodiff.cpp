#include "ctt/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "ctt/errors.hpp"

namespace ctt::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;

MapC view(const Node& n) { return MapC(n.value.data(), n.rows, n.cols); }

std::shared_ptr<Node> make(int rows, int cols, std::vector<double> value,
                           std::vector<std::shared_ptr<Node>> parents = {}) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) n->parents = std::move(parents);
  return n;
}

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

template <class F, class G>
Var unary(const Var& a, F f, G dfdx) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto n = make(a.rows(), a.cols(), std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [dfdx](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      auto& g = p.ensure_grad();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    };
  }
  return Var(n);
}

}  // namespace

Var constant(int rows, int cols, std::vector<double> values) {
  if (values.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols)) throw ShapeError("constant: size mismatch");
  return Var(make(rows, cols, std::move(values)));
}

Var constant(int rows, int cols, double fill) {
  return constant(rows, cols, std::vector<double>(static_cast<size_t>(rows) * static_cast<size_t>(cols), fill));
}

Var scalar(double v) { return constant(1, 1, std::vector<double>{v}); }

Var leaf(int rows, int cols, std::vector<double> values) {
  Var v = constant(rows, cols, std::move(values));
  v.node()->requires_grad = true;
  return v;
}

void backward(const Var& root) {
  if (root.size() != 1) throw ShapeError("backward: root must be scalar");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var matmul(const Var& a, const Var& b) { return linear(a, b, Var()); }

// Eigen picks its vectorized peeling from the operand addresses, so products
// run on Eigen-owned (aligned) copies to keep results independent of where
// the heap placed a buffer.
Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) throw ShapeError("linear: inner dimension mismatch");
  if (b && (b.size() != static_cast<size_t>(w.cols()))) throw ShapeError("linear: bias size mismatch");
  const int R = x.rows(), C = w.cols();
  RowMat o = RowMat(view(*x.node())) * RowMat(view(*w.node()));
  std::vector<double> out(o.data(), o.data() + o.size());
  if (b) {
    const std::vector<double>& bv = b.value();
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) out[static_cast<size_t>(r * C + c)] += bv[static_cast<size_t>(c)];
  }
  std::vector<std::shared_ptr<Node>> parents{x.node(), w.node()};
  if (b) parents.push_back(b.node());
  auto n = make(R, C, std::move(out), parents);
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      const RowMat g = MapC(self.grad.data(), self.rows, self.cols);
      Node& xn = *self.parents[0];
      Node& wn = *self.parents[1];
      auto accumulate = [](Node& into, const RowMat& d) {
        std::vector<double>& gr = into.ensure_grad();
        for (size_t i = 0; i < gr.size(); ++i) gr[i] += d.data()[i];
      };
      if (xn.requires_grad) accumulate(xn, RowMat(g * RowMat(view(wn)).transpose()));
      if (wn.requires_grad) accumulate(wn, RowMat(RowMat(view(xn)).transpose() * g));
      if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
        std::vector<double>& gb = self.parents[2]->ensure_grad();
        for (int r = 0; r < self.rows; ++r)
          for (int c = 0; c < self.cols; ++c) gb[static_cast<size_t>(c)] += g(r, c);
      }
    };
  }
  return Var(n);
}

Var add_row(const Var& x, const Var& row) {
  if (row.size() != static_cast<size_t>(x.cols())) throw ShapeError("add_row: size mismatch");
  std::vector<double> out(x.value());
  const int C = x.cols();
  for (size_t i = 0; i < out.size(); ++i) out[i] += row.value()[i % static_cast<size_t>(C)];
  auto n = make(x.rows(), C, std::move(out), {x.node(), row.node()});
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      Node& xn = *self.parents[0];
      Node& rn = *self.parents[1];
      if (xn.requires_grad) {
        auto& g = xn.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (rn.requires_grad) {
        auto& g = rn.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i % static_cast<size_t>(self.cols)] += self.grad[i];
      }
    };
  }
  return Var(n);
}

namespace {
template <class F, class GA, class GB>
Var binary(const Var& a, const Var& b, const char* name, F f, GA dfa, GB dfb) {
  check_same(a, b, name);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  auto n = make(a.rows(), a.cols(), std::move(out), {a.node(), b.node()});
  if (n->requires_grad) {
    n->backward = [dfa, dfb](Node& self) {
      Node& an = *self.parents[0];
      Node& bn = *self.parents[1];
      if (an.requires_grad) {
        auto& g = an.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfa(an.value[i], bn.value[i]);
      }
      if (bn.requires_grad) {
        auto& g = bn.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfb(an.value[i], bn.value[i]);
      }
    };
  }
  return Var(n);
}
}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var minimum(const Var& a, const Var& b) {
  // Ties route the gradient to the first argument.
  return binary(
      a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sin(const Var& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::abs(x); }, [](double x, double) { return x >= 0.0 ? 1.0 : -1.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a, double eps) {
  return unary(
      a, [eps](double x) { return std::sqrt(x + eps); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var atan2(const Var& y, const Var& x, double eps2) {
  return binary(
      y, x, "atan2", [](double yy, double xx) { return std::atan2(yy, xx); },
      [eps2](double yy, double xx) { return xx / std::max(xx * xx + yy * yy, eps2); },
      [eps2](double yy, double xx) { return -yy / std::max(xx * xx + yy * yy, eps2); });
}

Var clamp(const Var& a, std::span<const double> lo, std::span<const double> hi) {
  if (lo.size() != a.size() || hi.size() != a.size()) throw ShapeError("clamp: bound size mismatch");
  std::vector<double> out(a.size());
  std::vector<unsigned char> pass(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = a.value()[i];
    out[i] = std::clamp(x, lo[i], hi[i]);
    pass[i] = (x >= lo[i] && x <= hi[i]) ? 1 : 0;
  }
  auto n = make(a.rows(), a.cols(), std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [pass = std::move(pass)](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i)
        if (pass[i]) g[i] += self.grad[i];
    };
  }
  return Var(n);
}

Var reshape(const Var& a, int rows, int cols) {
  if (static_cast<size_t>(rows) * static_cast<size_t>(cols) != a.size()) throw ShapeError("reshape: size mismatch");
  auto n = make(rows, cols, a.value(), {a.node()});
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Var(n);
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int R = parts[0].rows();
  int C = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    if (p.rows() != R) throw ShapeError("concat_cols: row mismatch");
    offsets.push_back(C);
    C += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(static_cast<size_t>(R) * static_cast<size_t>(C));
  for (size_t k = 0; k < parts.size(); ++k) {
    const int pc = parts[k].cols();
    const auto& pv = parts[k].value();
    for (int r = 0; r < R; ++r)
      std::copy_n(pv.begin() + static_cast<long>(r) * pc, pc, out.begin() + static_cast<long>(r) * C + offsets[k]);
  }
  auto n = make(R, C, std::move(out), parents);
  if (n->requires_grad) {
    n->backward = [offsets](Node& self) {
      for (size_t k = 0; k < self.parents.size(); ++k) {
        Node& p = *self.parents[k];
        if (!p.requires_grad) continue;
        auto& g = p.ensure_grad();
        for (int r = 0; r < self.rows; ++r)
          for (int c = 0; c < p.cols; ++c)
            g[static_cast<size_t>(r * p.cols + c)] += self.grad[static_cast<size_t>(r * self.cols + offsets[k] + c)];
      }
    };
  }
  return Var(n);
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int C = parts[0].cols();
  int R = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != C) throw ShapeError("concat_rows: column mismatch");
    R += p.rows();
    parents.push_back(p.node());
    out.insert(out.end(), p.value().begin(), p.value().end());
  }
  auto n = make(R, C, std::move(out), parents);
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      size_t off = 0;
      for (auto& pp : self.parents) {
        Node& p = *pp;
        if (p.requires_grad) {
          auto& g = p.ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
        }
        off += p.value.size();
      }
    };
  }
  return Var(n);
}

Var slice_cols(const Var& a, int start, int count) {
  if (start < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  const int R = a.rows(), C = a.cols();
  std::vector<double> out(static_cast<size_t>(R) * static_cast<size_t>(count));
  for (int r = 0; r < R; ++r)
    std::copy_n(a.value().begin() + static_cast<long>(r) * C + start, count, out.begin() + static_cast<long>(r) * count);
  auto n = make(R, count, std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [start](Node& self) {
      Node& p = *self.parents[0];
      auto& g = p.ensure_grad();
      for (int r = 0; r < self.rows; ++r)
        for (int c = 0; c < self.cols; ++c)
          g[static_cast<size_t>(r * p.cols + start + c)] += self.grad[static_cast<size_t>(r * self.cols + c)];
    };
  }
  return Var(n);
}

Var gather_rows(const Var& a, std::span<const int> index) {
  const int C = a.cols();
  const auto G = static_cast<int>(index.size());
  std::vector<double> out(static_cast<size_t>(G) * static_cast<size_t>(C), 0.0);
  for (int g = 0; g < G; ++g) {
    const int src = index[static_cast<size_t>(g)];
    if (src < 0) continue;
    if (src >= a.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.value().begin() + static_cast<long>(src) * C, C, out.begin() + static_cast<long>(g) * C);
  }
  auto n = make(G, C, std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [idx = std::vector<int>(index.begin(), index.end())](Node& self) {
      Node& p = *self.parents[0];
      auto& g = p.ensure_grad();
      const int C = self.cols;
      for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0) continue;
        double* dst = g.data() + static_cast<size_t>(idx[r]) * static_cast<size_t>(C);
        const double* s = self.grad.data() + r * static_cast<size_t>(C);
        for (int c = 0; c < C; ++c) dst[c] += s[c];
      }
    };
  }
  return Var(n);
}

Var pick(const Var& a, std::span<const int> flat_index) {
  std::vector<double> out(flat_index.size());
  for (size_t i = 0; i < flat_index.size(); ++i) out[i] = a.value().at(static_cast<size_t>(flat_index[i]));
  auto n = make(static_cast<int>(flat_index.size()), 1, std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [idx = std::vector<int>(flat_index.begin(), flat_index.end())](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i) g[static_cast<size_t>(idx[i])] += self.grad[i];
    };
  }
  return Var(n);
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  auto n = make(1, 1, {s}, {a.node()});
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (double& x : g) x += self.grad[0];
    };
  }
  return Var(n);
}

Var mean(const Var& a) {
  if (a.size() == 0) return scalar(0.0);
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum_cols(const Var& a) {
  const int R = a.rows(), C = a.cols();
  std::vector<double> out(static_cast<size_t>(R), 0.0);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out[static_cast<size_t>(r)] += a.value()[static_cast<size_t>(r * C + c)];
  auto n = make(R, 1, std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      Node& p = *self.parents[0];
      auto& g = p.ensure_grad();
      for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c) g[static_cast<size_t>(r * p.cols + c)] += self.grad[static_cast<size_t>(r)];
    };
  }
  return Var(n);
}

Var log_softmax_rows(const Var& a) {
  const int R = a.rows(), C = a.cols();
  std::vector<double> out(a.size());
  for (int r = 0; r < R; ++r) {
    const double* x = a.value().data() + static_cast<size_t>(r * C);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) mx = std::max(mx, x[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(x[c] - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < C; ++c) out[static_cast<size_t>(r * C + c)] = x[c] - lse;
  }
  auto n = make(R, C, std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      const int C = self.cols;
      for (int r = 0; r < self.rows; ++r) {
        const double* gy = self.grad.data() + static_cast<size_t>(r * C);
        const double* y = self.value.data() + static_cast<size_t>(r * C);
        double gs = 0.0;
        for (int c = 0; c < C; ++c) gs += gy[c];
        for (int c = 0; c < C; ++c) g[static_cast<size_t>(r * C + c)] += gy[c] - std::exp(y[c]) * gs;
      }
    };
  }
  return Var(n);
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const int R = x.rows(), C = x.cols();
  if (gain.size() != static_cast<size_t>(C) || bias.size() != static_cast<size_t>(C))
    throw ShapeError("layer_norm: parameter size mismatch");
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r) {
    const double* xr = x.value().data() + static_cast<size_t>(r * C);
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += xr[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int c = 0; c < C; ++c) {
      const size_t i = static_cast<size_t>(r * C + c);
      xhat[i] = (xr[c] - mu) * is;
      out[i] = xhat[i] * gain.value()[static_cast<size_t>(c)] + bias.value()[static_cast<size_t>(c)];
    }
  }
  auto n = make(R, C, std::move(out), {x.node(), gain.node(), bias.node()});
  if (n->requires_grad) {
    n->backward = [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      Node& xn = *self.parents[0];
      Node& gn = *self.parents[1];
      Node& bn = *self.parents[2];
      const int R = self.rows, C = self.cols;
      if (gn.requires_grad || bn.requires_grad) {
        auto& gg = gn.ensure_grad();
        auto& gb = bn.ensure_grad();
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) {
            const size_t i = static_cast<size_t>(r * C + c);
            gg[static_cast<size_t>(c)] += self.grad[i] * xhat[i];
            gb[static_cast<size_t>(c)] += self.grad[i];
          }
      }
      if (xn.requires_grad) {
        auto& gx = xn.ensure_grad();
        std::vector<double> dxh(static_cast<size_t>(C));
        for (int r = 0; r < R; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (int c = 0; c < C; ++c) {
            const size_t i = static_cast<size_t>(r * C + c);
            dxh[static_cast<size_t>(c)] = self.grad[i] * gn.value[static_cast<size_t>(c)];
            m1 += dxh[static_cast<size_t>(c)];
            m2 += dxh[static_cast<size_t>(c)] * xhat[i];
          }
          m1 /= C;
          m2 /= C;
          for (int c = 0; c < C; ++c) {
            const size_t i = static_cast<size_t>(r * C + c);
            gx[i] += inv_std[static_cast<size_t>(r)] * (dxh[static_cast<size_t>(c)] - m1 - xhat[i] * m2);
          }
        }
      }
    };
  }
  return Var(n);
}

Var attention(const Var& q, const Var& k, const Var& v, std::span<const unsigned char> mask, int heads,
              std::vector<double>* weights) {
  const int G = q.rows(), D = q.cols();
  if (G == 0) return constant(0, D, std::vector<double>{});
  if (k.cols() != D || v.cols() != D || k.rows() != v.rows() || k.rows() % G != 0)
    throw ShapeError("attention: shape mismatch");
  if (D % heads != 0) throw ShapeError("attention: model dim not divisible by heads");
  const int S = k.rows() / G;
  if (mask.size() != static_cast<size_t>(G * S)) throw ShapeError("attention: mask size mismatch");
  const int dk = D / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<double> probs(static_cast<size_t>(G) * static_cast<size_t>(S) * static_cast<size_t>(heads), 0.0);
  std::vector<double> out(static_cast<size_t>(G) * static_cast<size_t>(D), 0.0);
  const double* qv = q.value().data();
  const double* kv = k.value().data();
  const double* vv = v.value().data();
  std::vector<double> sc(static_cast<size_t>(S));
  for (int g = 0; g < G; ++g) {
    for (int h = 0; h < heads; ++h) {
      const double* qh = qv + static_cast<size_t>(g * D + h * dk);
      double mx = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < S; ++s) {
        if (!mask[static_cast<size_t>(g * S + s)]) continue;
        const double* kh = kv + static_cast<size_t>((g * S + s) * D + h * dk);
        double dot = 0.0;
        for (int c = 0; c < dk; ++c) dot += qh[c] * kh[c];
        sc[static_cast<size_t>(s)] = dot * inv;
        mx = std::max(mx, sc[static_cast<size_t>(s)]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      double* p = probs.data() + static_cast<size_t>((g * heads + h) * S);
      for (int s = 0; s < S; ++s) {
        if (!mask[static_cast<size_t>(g * S + s)]) continue;
        p[s] = std::exp(sc[static_cast<size_t>(s)] - mx);
        z += p[s];
      }
      double* oh = out.data() + static_cast<size_t>(g * D + h * dk);
      for (int s = 0; s < S; ++s) {
        if (!mask[static_cast<size_t>(g * S + s)]) continue;
        p[s] /= z;
        const double* vh = vv + static_cast<size_t>((g * S + s) * D + h * dk);
        for (int c = 0; c < dk; ++c) oh[c] += p[s] * vh[c];
      }
    }
  }
  if (weights) *weights = probs;
  auto n = make(G, D, std::move(out), {q.node(), k.node(), v.node()});
  if (n->requires_grad) {
    n->backward = [probs = std::move(probs), m = std::vector<unsigned char>(mask.begin(), mask.end()), G, S, D, heads,
                   dk, inv](Node& self) {
      Node& qn = *self.parents[0];
      Node& kn = *self.parents[1];
      Node& vn = *self.parents[2];
      std::vector<double> scratch_q, scratch_k, scratch_v;
      std::vector<double>& gq = qn.requires_grad ? qn.ensure_grad() : scratch_q;
      std::vector<double>& gk = kn.requires_grad ? kn.ensure_grad() : scratch_k;
      std::vector<double>& gv = vn.requires_grad ? vn.ensure_grad() : scratch_v;
      std::vector<double> dp(static_cast<size_t>(S));
      for (int g = 0; g < G; ++g) {
        for (int h = 0; h < heads; ++h) {
          const double* p = probs.data() + static_cast<size_t>((g * heads + h) * S);
          const double* go = self.grad.data() + static_cast<size_t>(g * D + h * dk);
          double dot_pdp = 0.0;
          for (int s = 0; s < S; ++s) {
            if (!m[static_cast<size_t>(g * S + s)]) continue;
            const size_t row = static_cast<size_t>((g * S + s) * D + h * dk);
            const double* vh = vn.value.data() + row;
            double d = 0.0;
            for (int c = 0; c < dk; ++c) d += go[c] * vh[c];
            dp[static_cast<size_t>(s)] = d;
            dot_pdp += p[s] * d;
            if (vn.requires_grad)
              for (int c = 0; c < dk; ++c) gv[row + static_cast<size_t>(c)] += p[s] * go[c];
          }
          const double* qh = qn.value.data() + static_cast<size_t>(g * D + h * dk);
          for (int s = 0; s < S; ++s) {
            if (!m[static_cast<size_t>(g * S + s)]) continue;
            const double ds = p[s] * (dp[static_cast<size_t>(s)] - dot_pdp) * inv;
            if (ds == 0.0) continue;
            const size_t row = static_cast<size_t>((g * S + s) * D + h * dk);
            const double* kh = kn.value.data() + row;
            if (qn.requires_grad)
              for (int c = 0; c < dk; ++c) gq[static_cast<size_t>(g * D + h * dk + c)] += ds * kh[c];
            if (kn.requires_grad)
              for (int c = 0; c < dk; ++c) gk[row + static_cast<size_t>(c)] += ds * qh[c];
          }
        }
      }
    };
  }
  return Var(n);
}

}  // namespace ctt::ad
