// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Dense double-precision arrays with tape-free reverse-mode differentiation.
//
// Every op result keeps shared handles to its inputs plus a closure that
// pushes the output gradient back into them. Graph nodes are only recorded
// when at least one input requires a gradient, so frozen-parameter inference
// builds no graph at all.
//
// Gradients on leaves accumulate across backward() calls; call zero_grad()
// before each step.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mogu {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Rows of a rank-2 tensor; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Direct write access. Only meaningful for leaves; mutating an interior
  /// node does not invalidate recorded closures.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse sweep from a scalar root. Throws ContractError for non-scalars.
  void backward() const;

  /// Copy of the values as a fresh leaf without history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a * x + b, elementwise with constants.
Tensor affine(const Tensor& x, double a, double b);
Tensor scale(const Tensor& x, double factor);
/// x[m×n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// w[m×1] ⊙ x[m×n], w broadcast across columns.
Tensor mul_rowwise(const Tensor& w, const Tensor& x);
Tensor sigmoid_map(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs_map(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
/// Row-wise normalization to zero mean, unit variance, then gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Multi-head causal scaled-dot-product attention over q,k,v [seq×d].
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads);
/// Rows of `table` selected by ids.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
/// First n rows of x.
Tensor head_rows(const Tensor& x, std::size_t n);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor divide(const Tensor& num, const Tensor& den);
/// Mean over rows with mask[i] of -log softmax(logits[i])[targets[i]].
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            const std::vector<bool>& mask);

// ---- finite-difference verification -------------------------------------

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool finite = true;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> per_param;  // worst entry per parameter
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Compares reverse-mode gradients of loss_fn to central differences
/// (f(θ+eps) − f(θ−eps)) / 2eps for every scalar of every listed parameter.
/// Relative error uses the denominator max(1e-8, |a| + |b|).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedTensor> params, double eps = 1e-5);

}  // namespace mogu
