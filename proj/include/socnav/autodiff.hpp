// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file autodiff.hpp
 * @brief Define-by-run reverse-mode automatic differentiation over dense
 *        64-bit tensors.
 *
 * Every op returns a new Tensor whose node remembers its parents and a
 * backward rule. Nodes are only recorded when at least one input requires a
 * gradient, so evaluating frozen weights builds no graph at all.
 *
 * Tensors are 1-D or 2-D (row-major). Ops that work "per row" treat a 1-D
 * tensor as a single row. All row-wise kernels compute each output row with
 * a fixed summation order that does not depend on how many rows are present,
 * which makes prefix evaluation bitwise identical to full-sequence
 * evaluation.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "socnav/error.hpp"

namespace socnav::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

/// One vertex of the computation graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape.empty()) shape = {1};
    if (numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  /// Rows when viewed as a matrix; a 1-D tensor is a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// In-place access for optimizers; only meaningful on leaf parameters.
  std::span<double> mutable_data() { return node_->value; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }

  Node* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  /// Deep copy of values with no graph history.
  Tensor detach(bool requires_grad = false) const { return Tensor(shape(), node_->value, requires_grad); }

 private:
  NodePtr node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                          BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

inline Tensor make_result_n(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                            BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

/// Parent gradient buffer, or nullptr when that parent is a constant.
inline double* grad_of(Node& self, std::size_t parent) {
  Node& p = *self.parents[parent];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

template <class F>
Tensor unary(const Tensor& a, F&& forward, std::function<double(double x, double y)> derivative) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [derivative = std::move(derivative)](Node& self) {
    double* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += self.grad[i] * derivative(x[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = detail::grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (double* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw ContractError("log: input must be positive");
  }
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Clamp with pass-through gradient inside [lo, hi] and zero gradient outside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

/// Elementwise minimum; ties route the gradient to the first argument.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "minimum");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] <= b[i] ? a[i] : b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    double* ga = detail::grad_of(self, 0);
    double* gb = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x[i] <= y[i]) {
        if (ga) ga[i] += self.grad[i];
      } else if (gb) {
        gb[i] += self.grad[i];
      }
    }
  });
}

/// tanh approximation of GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return detail::unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kC * (x + kA * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return detail::make_result({1}, {total}, {a}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Sum of a list of scalars, accumulated left to right.
inline Tensor add_n(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw ContractError("add_n: empty term list");
  double total = 0.0;
  for (const Tensor& t : terms) total += t.item();
  return detail::make_result_n({1}, {total}, terms, [](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (double* g = detail::grad_of(self, p)) g[0] += self.grad[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    const auto& dC = self.grad;
    if (double* dA = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = B.data() + p * n;
          const double* crow = dC.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += crow[j] * brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (double* dB = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* crow = dC.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = A[i * k + p];
          double* brow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += s * crow[j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    }
  });
}

/// x[r x c] + bias[c] broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not fit " + shape_string(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + bias[j];
  return detail::make_result(x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

/// Row i of x multiplied by w[i].
inline Tensor scale_rows(const Tensor& x, const Tensor& w) {
  const std::size_t r = x.rows(), c = x.cols();
  if (w.size() != r) {
    throw DimensionError("scale_rows: weights " + shape_string(w.shape()) + " do not fit " + shape_string(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * w[i];
  return detail::make_result(x.shape(), std::move(out), {x, w}, [r, c](Node& self) {
    const auto& X = self.parents[0]->value;
    const auto& W = self.parents[1]->value;
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * W[i];
    }
    if (double* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * X[i * c + j];
        g[i] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

inline void softmax_row_backward(const double* y, const double* dy, double* dx, std::size_t n) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
  for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace detail

/// Softmax along the last axis (each row independently).
inline Tensor softmax(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) detail::softmax_row(x.data().data() + i * c, out.data() + i * c, c);
  return detail::make_result(x.shape(), std::move(out), {x}, [r, c](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        detail::softmax_row_backward(self.value.data() + i * c, self.grad.data() + i * c, g + i * c, c);
    }
  });
}

/// Softmax along `axis` of a matrix (0 = down columns, 1 = along rows).
inline Tensor softmax(const Tensor& x, int axis) {
  if (x.rank() == 1 || axis == 1 || axis == -1) return softmax(x);
  if (axis != 0) throw DimensionError("softmax: axis must be 0 or 1");
  return transpose(softmax(transpose(x)));
}

inline Tensor log_softmax(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [r, c](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = self.value.data() + i * c;
        const double* dy = self.grad.data() + i * c;
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += dy[j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[j] - std::exp(y[j]) * total;
      }
    }
  });
}

/// Softmax of a square score matrix where row i only sees columns j <= i.
/// Masked entries are exactly zero.
inline Tensor causal_softmax(const Tensor& scores) {
  detail::require_matrix(scores, "causal_softmax");
  const std::size_t n = scores.shape()[0];
  if (scores.shape()[1] != n) throw DimensionError("causal_softmax: scores must be square, got " + shape_string(scores.shape()));
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) detail::softmax_row(scores.data().data() + i * n, out.data() + i * n, i + 1);
  return detail::make_result(scores.shape(), std::move(out), {scores}, [n](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        detail::softmax_row_backward(self.value.data() + i * n, self.grad.data() + i * n, g + i * n, i + 1);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization with affine gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c) {
    throw DimensionError("layer_norm: affine terms do not fit " + shape_string(x.shape()));
  }
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = gamma[j] * xhat[i * c + j] + beta[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& G = self.parents[1]->value;
        const auto& dy = self.grad;
        if (double* g = detail::grad_of(self, 1)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j] * xhat[i * c + j];
        }
        if (double* g = detail::grad_of(self, 2)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
        }
        if (double* g = detail::grad_of(self, 0)) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = dy[i * c + j] * G[j];
              mean_d += d;
              mean_dx += d * xhat[i * c + j];
            }
            mean_d *= inv_c;
            mean_dx *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = dy[i * c + j] * G[j];
              g[i * c + j] += inv_std[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------

/// Rows idx[0], idx[1], ... of a matrix (embedding lookup when x is a table).
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> idx) {
  const std::size_t r = x.rows(), c = x.cols();
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<double> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) throw DimensionError("gather_rows: row " + std::to_string(idx[i]) + " out of range for " + shape_string(x.shape()));
    std::copy_n(x.data().data() + idx[i] * c, c, out.data() + i * c);
  }
  const Shape shape{idx.size(), c};
  return detail::make_result(shape, std::move(out), {x}, [c, idx = std::move(idx)](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    }
  });
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) { return gather_rows(table, ids); }

/// out[idx[i]] += x[i] into a zero matrix with `rows` rows.
inline Tensor scatter_add_rows(const Tensor& x, std::vector<std::size_t> idx, std::size_t rows) {
  const std::size_t c = x.cols();
  if (idx.size() != x.rows()) throw DimensionError("scatter_add_rows: index count does not match rows");
  std::vector<double> out(rows * c, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw DimensionError("scatter_add_rows: target row out of range");
    for (std::size_t j = 0; j < c; ++j) out[idx[i] * c + j] += x[i * c + j];
  }
  return detail::make_result({rows, c}, std::move(out), {x}, [c, idx = std::move(idx)](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[idx[i] * c + j];
    }
  });
}

/// out[i] = x[i, idx[i]]; one entry per row.
inline Tensor gather_cols(const Tensor& x, std::vector<std::size_t> idx) {
  const std::size_t r = x.rows(), c = x.cols();
  if (idx.size() != r) throw DimensionError("gather_cols: need one index per row of " + shape_string(x.shape()));
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw DimensionError("gather_cols: column out of range");
    out[i] = x[i * c + idx[i]];
  }
  return detail::make_result({r}, std::move(out), {x}, [c, idx = std::move(idx)](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + idx[i]] += self.grad[i];
    }
  });
}

inline Tensor element(const Tensor& x, std::size_t i) {
  if (i >= x.size()) throw DimensionError("element: index out of range");
  return detail::make_result({1}, {x[i]}, {x}, [i](Node& self) {
    if (double* g = detail::grad_of(self, 0)) g[i] += self.grad[0];
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t r = x.rows(), c = x.cols();
  if (len == 0 || start + len > c) throw DimensionError("slice_cols: range out of bounds for " + shape_string(x.shape()));
  std::vector<double> out(r * len);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data().data() + i * c + start, len, out.data() + i * len);
  return detail::make_result({r, len}, std::move(out), {x}, [r, c, start, len](Node& self) {
    if (double* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) g[i * c + start + j] += self.grad[i * len + j];
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return detail::make_result_n({r, total}, std::move(out), parts, [r, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + offset + j];
      }
      offset += widths[k];
    }
  });
}

/// Per-row negative log-likelihood -log_softmax(z)[t] for each row's target.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  return neg(gather_cols(log_softmax(logits), targets));
}

/// Scalar cross-entropy of a single logit row against target index t.
inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  return reshape(cross_entropy(logits, std::vector<std::size_t>{target}), {1});
}

// ---------------------------------------------------------------------------
// Backward traversal
// ---------------------------------------------------------------------------

/// Nodes reachable from `root` through gradient-carrying edges, parents
/// before children.
inline std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Intermediate gradients are reset on each call, so repeated
/// calls add to leaf gradients exactly once per call.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;
  const std::vector<Node*> order = topological_order(loss.node());
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);
  }
  Node* root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace socnav::ad
