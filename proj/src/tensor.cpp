// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "mogu/errors.hpp"

namespace mogu {

namespace {

constexpr double kExpClamp = 40.0;
constexpr double kBelowOne = 1.0 - 0x1p-53;

using NodePtr = std::shared_ptr<detail::Node>;

std::string shapes_message(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_to_string(a) << " and " << shape_to_string(b);
  return os.str();
}

void require_matrix(const char* op, const Tensor& t) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_to_string(t.shape()));
  }
}

// Creates an op result. Parents are recorded only when one of them needs a
// gradient; otherwise the result is a plain constant leaf.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

double clamp_exp_arg(double x) { return std::clamp(x, -kExpClamp, kExpClamp); }

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×k] += g[m×n] · b[k×n]ᵀ
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · g[m×n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename F>
Tensor unary_map(const Tensor& x, F&& f, std::function<void(detail::Node&)> backward_fn) {
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, std::move(backward_fn));
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  std::vector<double> values;
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({m, n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::rows() const { return rank() == 1 ? 1 : shape()[0]; }

std::size_t Tensor::cols() const { return rank() == 1 ? shape()[0] : shape()[1]; }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

void Tensor::backward() const {
  if (!node_ || size() != 1) {
    throw ContractError("backward() requires a scalar root, got " +
                        (node_ ? shape_to_string(shape()) : std::string("undefined")));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior gradients are recomputed per sweep; leaves accumulate.
  for (auto* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf || !n->backward_fn) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
}

// ---- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw DimensionError(shapes_message("matmul", a.shape(), b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) gemm_nt(self.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
    if (pb.requires_grad) gemm_tn(pa.data.data(), self.grad.data(), pb.grad.data(), m, k, n);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError(shapes_message("add", a.shape(), b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError(shapes_message("sub", a.shape(), b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError(shapes_message("mul", a.shape(), b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor affine(const Tensor& x, double a, double b) {
  return unary_map(x, [a, b](double v) { return a * v + b; }, [a](detail::Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += a * self.grad[i];
  });
}

Tensor scale(const Tensor& x, double factor) { return affine(x, factor, 0.0); }

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_matrix("add_row_bias", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) throw DimensionError(shapes_message("add_row_bias", x.shape(), bias.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return make_result(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad)
      for (std::size_t i = 0; i < m * n; ++i) px.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
  });
}

Tensor mul_rowwise(const Tensor& w, const Tensor& x) {
  require_matrix("mul_rowwise", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (w.size() != m || w.cols() != 1) {
    throw DimensionError(shapes_message("mul_rowwise", w.shape(), x.shape()));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = w.data()[i] * x.data()[i * n + j];
  return make_result(x.shape(), std::move(out), {w, x}, [m, n](detail::Node& self) {
    auto& pw = *self.parents[0];
    auto& px = *self.parents[1];
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        acc += g * px.data[i * n + j];
        if (px.requires_grad) px.grad[i * n + j] += g * pw.data[i];
      }
      if (pw.requires_grad) pw.grad[i] += acc;
    }
  });
}

Tensor sigmoid_map(const Tensor& x) {
  return unary_map(
      x,
      [](double v) {
        // 1/(1+e^-v) rounds to exactly 1 once v exceeds about 37; keep the
        // output strictly below one.
        return std::min(1.0 / (1.0 + std::exp(-clamp_exp_arg(v))), kBelowOne);
      },
      [](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          // Clamped region has zero derivative.
          if (std::abs(p.data[i]) > kExpClamp) continue;
          const double s = self.data[i];
          p.grad[i] += self.grad[i] * s * (1.0 - s);
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary_map(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](detail::Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor abs_map(const Tensor& x) {
  return unary_map(x, [](double v) { return std::abs(v); }, [](detail::Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = p.data[i] > 0.0 ? 1.0 : (p.data[i] < 0.0 ? -1.0 : 0.0);
      p.grad[i] += self.grad[i] * s;
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix("softmax_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(clamp_exp_arg(row[j] - mx));
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix("layer_norm", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError(shapes_message("layer_norm", x.shape(), gamma.shape()));
  }
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [m, n, xhat, inv_std](detail::Node& self) {
                       auto& px = *self.parents[0];
                       auto& pg = *self.parents[1];
                       auto& pb = *self.parents[2];
                       const double dn = static_cast<double>(n);
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* g = self.grad.data() + i * n;
                         const double* h = xhat->data() + i * n;
                         double sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double dh = g[j] * pg.data[j];
                           sum_dh += dh;
                           sum_dh_h += dh * h[j];
                           if (pg.requires_grad) pg.grad[j] += g[j] * h[j];
                           if (pb.requires_grad) pb.grad[j] += g[j];
                         }
                         if (!px.requires_grad) continue;
                         const double is = (*inv_std)[i];
                         for (std::size_t j = 0; j < n; ++j) {
                           const double dh = g[j] * pg.data[j];
                           px.grad[i * n + j] += is * (dh - sum_dh / dn - h[j] * sum_dh_h / dn);
                         }
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
  require_matrix("causal_attention", q);
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError(shapes_message("causal_attention", q.shape(), k.shape()));
  }
  const std::size_t t = q.rows(), d = q.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " not divisible by head count " + std::to_string(n_heads));
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[h][i*t + j], zero above the diagonal
  auto probs = std::make_shared<std::vector<double>>(n_heads * t * t, 0.0);
  std::vector<double> out(t * d, 0.0);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    double* P = probs->data() + h * t * t;
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * d + off + c] * K[j * d + off + c];
        s *= inv_sqrt;
        P[i * t + j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        P[i * t + j] = std::exp(clamp_exp_arg(P[i * t + j] - mx));
        z += P[i * t + j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        P[i * t + j] /= z;
        const double p = P[i * t + j];
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += p * V[j * d + off + c];
      }
    }
  }
  return make_result(
      q.shape(), std::move(out), {q, k, v}, [t, d, dh, n_heads, inv_sqrt, probs](detail::Node& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        const double* G = self.grad.data();
        std::vector<double> dp(t);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = h * dh;
          const double* P = probs->data() + h * t * t;
          for (std::size_t i = 0; i < t; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += G[i * d + off + c] * pv.data[j * d + off + c];
              dp[j] = acc;
              dot += acc * P[i * t + j];
              if (pv.requires_grad) {
                const double p = P[i * t + j];
                for (std::size_t c = 0; c < dh; ++c) pv.grad[j * d + off + c] += p * G[i * d + off + c];
              }
            }
            for (std::size_t j = 0; j <= i; ++j) {
              const double ds = P[i * t + j] * (dp[j] - dot) * inv_sqrt;
              if (ds == 0.0) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                if (pq.requires_grad) pq.grad[i * d + off + c] += ds * pk.data[j * d + off + c];
                if (pk.requires_grad) pk.grad[j * d + off + c] += ds * pq.data[i * d + off + c];
              }
            }
          }
        }
      });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_matrix("gather_rows", table);
  const std::size_t vocab = table.rows(), n = table.cols();
  if (ids.empty()) throw InputError("gather_rows: empty id list");
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw InputError("gather_rows: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + idx[i] * n, n, out.data() + i * n);
  }
  const std::size_t rows = idx.size();
  return make_result({rows, n}, std::move(out), {table},
                     [idx = std::move(idx), n](detail::Node& self) {
                       auto& p = *self.parents[0];
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < n; ++j) p.grad[idx[i] * n + j] += self.grad[i * n + j];
                     });
}

Tensor head_rows(const Tensor& x, std::size_t count) {
  require_matrix("head_rows", x);
  if (count == 0 || count > x.rows()) {
    throw DimensionError("head_rows: cannot take " + std::to_string(count) + " rows of " +
                         shape_to_string(x.shape()));
  }
  const std::size_t n = x.cols();
  std::vector<double> out(x.data().begin(), x.data().begin() + count * n);
  return make_result({count, n}, std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    for (auto& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor divide(const Tensor& num, const Tensor& den) {
  if (num.size() != 1 || den.size() != 1) {
    throw DimensionError(shapes_message("divide", num.shape(), den.shape()));
  }
  const double a = num.item(), b = den.item();
  return make_result({1}, {a / b}, {num, den}, [a, b](detail::Node& self) {
    auto& pn = *self.parents[0];
    auto& pd = *self.parents[1];
    if (pn.requires_grad) pn.grad[0] += self.grad[0] / b;
    if (pd.requires_grad) pd.grad[0] -= self.grad[0] * a / (b * b);
  });
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            const std::vector<bool>& mask) {
  require_matrix("masked_cross_entropy", logits);
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m || mask.size() != m) {
    throw DimensionError("masked_cross_entropy: " + std::to_string(m) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries");
  }
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (count == 0) throw ContractError("masked_cross_entropy: mask selects no positions");
  auto probs = std::make_shared<std::vector<double>>(m * n, 0.0);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= n) {
      throw InputError("masked_cross_entropy: target " + std::to_string(tgt[i]) + " out of range");
    }
    const double* row = logits.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      (*probs)[i * n + j] = std::exp(clamp_exp_arg(row[j] - mx));
      z += (*probs)[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= z;
    total += -(row[tgt[i]] - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(count);
  return make_result({1}, {total * inv}, {logits},
                     [m, n, inv, probs, tgt = std::move(tgt), mask](detail::Node& self) {
                       auto& p = *self.parents[0];
                       const double g = self.grad[0] * inv;
                       for (std::size_t i = 0; i < m; ++i) {
                         if (!mask[i]) continue;
                         for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += g * (*probs)[i * n + j];
                         p.grad[i * n + tgt[i]] -= g;
                       }
                     });
}

// ---- grad_check ---------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedTensor> params, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  GradCheckReport report;
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) throw ContractError("grad_check: parameter " + p.name + " is frozen");
    Tensor handle = p.tensor;
    handle.zero_grad();
  }
  const Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) {
    report.finite = false;
    return report;
  }
  loss.backward();

  for (const auto& p : params) {
    Tensor t = p.tensor;
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    GradCheckEntry worst{p.name, 0, 0.0, 0.0, -1.0};
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double fp = loss_fn().item();
      values[i] = saved - eps;
      const double fm = loss_fn().item();
      values[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.finite = false;
        return report;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++report.checked;
      if (rel > worst.rel_err) worst = {p.name, i, analytic[i], numeric, rel};
    }
    report.max_rel_err = std::max(report.max_rel_err, worst.rel_err);
    report.per_param.push_back(worst);
  }
  return report;
}

}  // namespace mogu
