// Copyright 2026 The crtrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crtrain/array.hpp"
#include "crtrain/util.hpp"

namespace crtrain {

// Reverse-mode automatic differentiation over dense arrays.
//
// A Graph owns eagerly-evaluated nodes; creation order is a topological
// order, so backward() is an exact reverse sweep. A Graph is confined to
// one thread; extracted Arrays are plain values and may cross threads.

class Graph;

struct Value {
  Graph* graph = nullptr;
  int id = -1;

  const Array& val() const;
  const Array& grad() const;
  bool requires_grad() const;
};

namespace detail {

struct Node {
  Array value;
  Array grad;  // allocated lazily by backward()
  bool requires_grad = false;
  const char* op = "leaf";
  std::function<void(Graph&, const Node&)> backward_fn;
};

using MatMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline ConstMatMap as_mat(const Array& a) {
  return ConstMatMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                     static_cast<Eigen::Index>(a.cols()));
}

inline MatMap as_mat(Array& a) {
  return MatMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                static_cast<Eigen::Index>(a.cols()));
}

}  // namespace detail

class Graph {
 public:
  Value leaf(Array v, bool requires_grad = false) {
    return add_node(std::move(v), requires_grad, "leaf", nullptr);
  }

  Value add_node(Array value, bool requires_grad, const char* op,
                 std::function<void(Graph&, const detail::Node&)> backward_fn) {
    if (check_finite && !value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op +
                         "'");
    }
    detail::Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
  }

  detail::Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const detail::Node& node(int id) const {
    return nodes_[static_cast<size_t>(id)];
  }

  size_t size() const { return nodes_.size(); }

  // Accumulates into existing gradients; call zero_grads() between passes
  // to get a fresh map.
  void backward(Value loss) {
    if (loss.graph != this) {
      throw std::invalid_argument("backward: loss belongs to another graph");
    }
    const detail::Node& ln = node(loss.id);
    if (ln.value.numel() != 1) {
      throw ShapeError("backward", ln.value.shape(), "expected a scalar loss");
    }
    if (!std::isfinite(ln.value[0])) {
      throw NumericError("backward: loss is not finite");
    }
    for (auto& n : nodes_) {
      if (n.requires_grad && n.grad.numel() == 0) n.grad = Array(n.value.shape());
    }
    if (!node(loss.id).requires_grad) return;  // nothing depends on parameters
    node(loss.id).grad[0] += 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      detail::Node& n = node(id);
      if (!n.requires_grad || !n.backward_fn) continue;
      n.backward_fn(*this, n);
    }
  }

  void zero_grads() {
    for (auto& n : nodes_) {
      if (n.grad.numel() != 0) n.grad.fill(0.0);
    }
  }

  // Adds g into the gradient buffer of node id (no-op for frozen nodes).
  void accum_grad(int id, const double* g, size_t n) {
    detail::Node& nd = node(id);
    if (!nd.requires_grad) return;
    if (nd.grad.numel() == 0) nd.grad = Array(nd.value.shape());
    double* dst = nd.grad.data();
    for (size_t i = 0; i < n; ++i) dst[i] += g[i];
  }

  bool check_finite = false;

 private:
  std::deque<detail::Node> nodes_;
};

inline const Array& Value::val() const { return graph->node(id).value; }
inline const Array& Value::grad() const {
  detail::Node& n = graph->node(id);
  if (n.grad.numel() == 0) n.grad = Array(n.value.shape());
  return n.grad;
}
inline bool Value::requires_grad() const {
  return graph->node(id).requires_grad;
}

namespace detail {

inline void same_graph(Value a, Value b, const char* op) {
  if (a.graph != b.graph) {
    throw std::invalid_argument(std::string(op) +
                                ": operands belong to different graphs");
  }
}

enum class BcastKind { kSame, kRowRhs, kScalarRhs, kRowLhs, kScalarLhs };

inline bool is_scalar_shape(const Array& a) { return a.numel() == 1; }
inline bool is_row_shape(const Array& a, const Array& full) {
  return a.rank() <= 2 && a.rows() == 1 && a.cols() == full.cols();
}

inline BcastKind classify_bcast(const char* op, const Array& a,
                                const Array& b) {
  if (a.same_shape(b)) return BcastKind::kSame;
  if (is_scalar_shape(b)) return BcastKind::kScalarRhs;
  if (is_scalar_shape(a)) return BcastKind::kScalarLhs;
  if (is_row_shape(b, a) && a.rank() == 2) return BcastKind::kRowRhs;
  if (is_row_shape(a, b) && b.rank() == 2) return BcastKind::kRowLhs;
  throw ShapeError(op, a.shape(), b.shape());
}

// Reduces a full-shaped gradient onto a broadcast operand.
inline void accum_reduced(Graph& g, int id, const Array& grad_full,
                          const Array& operand) {
  if (!g.node(id).requires_grad) return;
  if (operand.same_shape(grad_full)) {
    g.accum_grad(id, grad_full.data(), grad_full.numel());
    return;
  }
  if (is_scalar_shape(operand)) {
    double s = grad_full.sum();
    g.accum_grad(id, &s, 1);
    return;
  }
  // row broadcast: sum over rows
  Array red(operand.shape());
  size_t r = grad_full.rows(), c = grad_full.cols();
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) red[j] += grad_full.at(i, j);
  g.accum_grad(id, red.data(), red.numel());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with documented broadcasting: operands must have
// identical shapes, or one side is a scalar, or one side is a row vector
// [1 x C] (or rank-1 [C]) against a [R x C] matrix.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd>
inline Array bcast_forward(const char* op, const Array& a, const Array& b,
                           Fwd f) {
  BcastKind k = classify_bcast(op, a, b);
  switch (k) {
    case BcastKind::kSame: {
      Array out(a.shape());
      for (size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
      return out;
    }
    case BcastKind::kScalarRhs: {
      Array out(a.shape());
      double s = b[0];
      for (size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], s);
      return out;
    }
    case BcastKind::kScalarLhs: {
      Array out(b.shape());
      double s = a[0];
      for (size_t i = 0; i < b.numel(); ++i) out[i] = f(s, b[i]);
      return out;
    }
    case BcastKind::kRowRhs: {
      Array out(a.shape());
      size_t r = a.rows(), c = a.cols();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.at(i, j) = f(a.at(i, j), b[j]);
      return out;
    }
    case BcastKind::kRowLhs: {
      Array out(b.shape());
      size_t r = b.rows(), c = b.cols();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.at(i, j) = f(a[j], b.at(i, j));
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

inline Value add(Value a, Value b) {
  detail::same_graph(a, b, "add");
  Graph& g = *a.graph;
  Array out = detail::bcast_forward("add", a.val(), b.val(),
                                    [](double x, double y) { return x + y; });
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return g.add_node(std::move(out), rg, "add",
                    [ia, ib](Graph& gr, const detail::Node& self) {
                      detail::accum_reduced(gr, ia, self.grad,
                                            gr.node(ia).value);
                      detail::accum_reduced(gr, ib, self.grad,
                                            gr.node(ib).value);
                    });
}

inline Value sub(Value a, Value b) {
  detail::same_graph(a, b, "sub");
  Graph& g = *a.graph;
  Array out = detail::bcast_forward("sub", a.val(), b.val(),
                                    [](double x, double y) { return x - y; });
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return g.add_node(std::move(out), rg, "sub",
                    [ia, ib](Graph& gr, const detail::Node& self) {
                      detail::accum_reduced(gr, ia, self.grad,
                                            gr.node(ia).value);
                      Array neg(self.grad.shape());
                      for (size_t i = 0; i < neg.numel(); ++i)
                        neg[i] = -self.grad[i];
                      detail::accum_reduced(gr, ib, neg, gr.node(ib).value);
                    });
}

inline Value mul(Value a, Value b) {
  detail::same_graph(a, b, "mul");
  Graph& g = *a.graph;
  Array out = detail::bcast_forward("mul", a.val(), b.val(),
                                    [](double x, double y) { return x * y; });
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return g.add_node(
      std::move(out), rg, "mul", [ia, ib](Graph& gr, const detail::Node& self) {
        const Array& av = gr.node(ia).value;
        const Array& bv = gr.node(ib).value;
        if (gr.node(ia).requires_grad) {
          Array ga = detail::bcast_forward(
              "mul", self.grad, bv, [](double gv, double y) { return gv * y; });
          detail::accum_reduced(gr, ia, ga, av);
        }
        if (gr.node(ib).requires_grad) {
          Array gb = detail::bcast_forward(
              "mul", self.grad, av, [](double gv, double x) { return gv * x; });
          detail::accum_reduced(gr, ib, gb, bv);
        }
      });
}

inline Value add_scalar(Value a, double c) {
  Graph& g = *a.graph;
  Array out(a.val().shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c;
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "add_scalar",
                    [ia](Graph& gr, const detail::Node& self) {
                      gr.accum_grad(ia, self.grad.data(), self.grad.numel());
                    });
}

inline Value mul_scalar(Value a, double c) {
  Graph& g = *a.graph;
  Array out(a.val().shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c;
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "mul_scalar",
                    [ia, c](Graph& gr, const detail::Node& self) {
                      Array gs(self.grad.shape());
                      for (size_t i = 0; i < gs.numel(); ++i)
                        gs[i] = self.grad[i] * c;
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// c - x, elementwise.
inline Value rsub_scalar(double c, Value a) {
  Graph& g = *a.graph;
  Array out(a.val().shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = c - a.val()[i];
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "rsub_scalar",
                    [ia](Graph& gr, const detail::Node& self) {
                      Array gs(self.grad.shape());
                      for (size_t i = 0; i < gs.numel(); ++i)
                        gs[i] = -self.grad[i];
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// ---------------------------------------------------------------------------
// Unary elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
inline Value unary_op(Value a, const char* op, Fwd f, Bwd dfdx_from_x_y) {
  Graph& g = *a.graph;
  Array out(a.val().shape());
  const Array& in = a.val();
  for (size_t i = 0; i < out.numel(); ++i) out[i] = f(in[i]);
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), op,
                    [ia, dfdx_from_x_y](Graph& gr, const detail::Node& self) {
                      const Array& x = gr.node(ia).value;
                      Array gs(self.grad.shape());
                      for (size_t i = 0; i < gs.numel(); ++i)
                        gs[i] = self.grad[i] *
                                dfdx_from_x_y(x[i], self.value[i]);
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

}  // namespace detail

inline Value sigmoid(Value a) {
  return detail::unary_op(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Value log_op(Value a) {
  return detail::unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Value exp_op(Value a) {
  return detail::unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Value tanh_op(Value a) {
  return detail::unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Value gelu(Value a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return detail::unary_op(
      a, "gelu",
      [=](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [=](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

// Clamp with pass-through gradient strictly inside the interval.
inline Value clamp(Value a, double lo, double hi) {
  return detail::unary_op(
      a, "clamp",
      [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Value matmul(Value a, Value b) {
  detail::same_graph(a, b, "matmul");
  Graph& g = *a.graph;
  const Array& av = a.val();
  const Array& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul", av.shape(), bv.shape());
  }
  Array out({av.rows(), bv.cols()});
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return g.add_node(
      std::move(out), rg, "matmul",
      [ia, ib](Graph& gr, const detail::Node& self) {
        const Array& av2 = gr.node(ia).value;
        const Array& bv2 = gr.node(ib).value;
        if (gr.node(ia).requires_grad) {
          Array ga({av2.rows(), av2.cols()});
          detail::as_mat(ga).noalias() =
              detail::as_mat(self.grad) * detail::as_mat(bv2).transpose();
          gr.accum_grad(ia, ga.data(), ga.numel());
        }
        if (gr.node(ib).requires_grad) {
          Array gb({bv2.rows(), bv2.cols()});
          detail::as_mat(gb).noalias() =
              detail::as_mat(av2).transpose() * detail::as_mat(self.grad);
          gr.accum_grad(ib, gb.data(), gb.numel());
        }
      });
}

inline Value transpose(Value a) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (av.rank() != 2) throw ShapeError("transpose", av.shape(), "expected rank 2");
  Array out({av.cols(), av.rows()});
  for (size_t i = 0; i < av.rows(); ++i)
    for (size_t j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "transpose",
                    [ia](Graph& gr, const detail::Node& self) {
                      const Array& gv = self.grad;
                      Array gs({gv.cols(), gv.rows()});
                      for (size_t i = 0; i < gv.rows(); ++i)
                        for (size_t j = 0; j < gv.cols(); ++j)
                          gs.at(j, i) = gv.at(i, j);
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Value sum_all(Value a) {
  Graph& g = *a.graph;
  Array out = Array::scalar(a.val().sum());
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "sum",
                    [ia](Graph& gr, const detail::Node& self) {
                      const Array& x = gr.node(ia).value;
                      Array gs = Array::full(x.shape(), self.grad[0]);
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

inline Value mean_all(Value a) {
  Graph& g = *a.graph;
  size_t n = a.val().numel();
  Array out = Array::scalar(a.val().sum() / static_cast<double>(n));
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "mean",
                    [ia, n](Graph& gr, const detail::Node& self) {
                      const Array& x = gr.node(ia).value;
                      Array gs = Array::full(
                          x.shape(), self.grad[0] / static_cast<double>(n));
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// Column means of a [R x C] matrix -> [1 x C].
inline Value mean_rows(Value a) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (av.rank() != 2) throw ShapeError("mean_rows", av.shape(), "expected rank 2");
  size_t r = av.rows(), c = av.cols();
  Array out({size_t{1}, c});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j] += av.at(i, j);
  for (size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "mean_rows",
                    [ia, r, c](Graph& gr, const detail::Node& self) {
                      Array gs({r, c});
                      for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < c; ++j)
                          gs.at(i, j) = self.grad[j] / static_cast<double>(r);
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// ---------------------------------------------------------------------------
// Row-wise softmax / layer norm (last axis)
// ---------------------------------------------------------------------------

inline Value softmax_rows(Value a) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  size_t r = av.rows(), c = av.cols();
  Array out(av.shape());
  for (size_t i = 0; i < r; ++i) {
    double mx = av[i * c];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
    double denom = 0.0;
    for (size_t j = 0; j < c; ++j) {
      double e = std::exp(av[i * c + j] - mx);
      out[i * c + j] = e;
      denom += e;
    }
    for (size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
  }
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "softmax",
                    [ia, r, c](Graph& gr, const detail::Node& self) {
                      Array gs(self.value.shape());
                      for (size_t i = 0; i < r; ++i) {
                        double dot = 0.0;
                        for (size_t j = 0; j < c; ++j)
                          dot += self.grad[i * c + j] * self.value[i * c + j];
                        for (size_t j = 0; j < c; ++j)
                          gs[i * c + j] = self.value[i * c + j] *
                                          (self.grad[i * c + j] - dot);
                      }
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// Normalizes each row to zero mean / unit variance. Affine gain and bias
// are applied outside via broadcast mul/add so this op stays parameter-free.
inline Value layer_norm_rows(Value a, double eps = 1e-5) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (av.rank() != 2) throw ShapeError("layer_norm", av.shape(), "expected rank 2");
  size_t r = av.rows(), c = av.cols();
  Array out(av.shape());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  for (size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (size_t j = 0; j < c; ++j) mean += av[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (size_t j = 0; j < c; ++j) {
      double d = av[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (size_t j = 0; j < c; ++j) out[i * c + j] = (av[i * c + j] - mean) * is;
  }
  int ia = a.id;
  return g.add_node(
      std::move(out), a.requires_grad(), "layer_norm",
      [ia, r, c, inv_std](Graph& gr, const detail::Node& self) {
        // dx = inv_std * (g - mean(g) - y * mean(g*y)) per row
        Array gs(self.value.shape());
        for (size_t i = 0; i < r; ++i) {
          double gmean = 0.0, gymean = 0.0;
          for (size_t j = 0; j < c; ++j) {
            gmean += self.grad[i * c + j];
            gymean += self.grad[i * c + j] * self.value[i * c + j];
          }
          gmean /= static_cast<double>(c);
          gymean /= static_cast<double>(c);
          for (size_t j = 0; j < c; ++j) {
            gs[i * c + j] = (*inv_std)[i] * (self.grad[i * c + j] - gmean -
                                             self.value[i * c + j] * gymean);
          }
        }
        gr.accum_grad(ia, gs.data(), gs.numel());
      });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

// Rows [r0, r1) of a rank-2 array; elements [r0, r1) of a rank-1 array.
inline Value slice_rows(Value a, size_t r0, size_t r1) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  size_t rows = av.rank() == 1 ? av.dim(0) : av.rows();
  size_t c = av.rank() == 1 ? 1 : av.cols();
  if (r0 > r1 || r1 > rows) {
    throw ShapeError("slice_rows", av.shape(),
                     "invalid row range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ")");
  }
  Array out = av.rank() == 1 ? Array({r1 - r0}) : Array({r1 - r0, c});
  for (size_t i = 0; i < (r1 - r0) * c; ++i) out[i] = av[r0 * c + i];
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "slice_rows",
                    [ia, r0, c](Graph& gr, const detail::Node& self) {
                      detail::Node& p = gr.node(ia);
                      if (!p.requires_grad) return;
                      if (p.grad.numel() == 0) p.grad = Array(p.value.shape());
                      for (size_t i = 0; i < self.grad.numel(); ++i)
                        p.grad[r0 * c + i] += self.grad[i];
                    });
}

inline Value slice_cols(Value a, size_t c0, size_t c1) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (av.rank() != 2 || c0 > c1 || c1 > av.cols()) {
    throw ShapeError("slice_cols", av.shape(),
                     "invalid col range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ")");
  }
  size_t r = av.rows(), w = c1 - c0, c = av.cols();
  Array out({r, w});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < w; ++j) out.at(i, j) = av.at(i, c0 + j);
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "slice_cols",
                    [ia, c0, r, w, c](Graph& gr, const detail::Node& self) {
                      detail::Node& p = gr.node(ia);
                      if (!p.requires_grad) return;
                      if (p.grad.numel() == 0) p.grad = Array(p.value.shape());
                      for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < w; ++j)
                          p.grad[i * c + c0 + j] += self.grad[i * w + j];
                    });
}

inline Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Graph& g = *parts[0].graph;
  size_t r = parts[0].val().rows();
  size_t total = 0;
  bool rg = false;
  for (const Value& p : parts) {
    detail::same_graph(parts[0], p, "concat_cols");
    if (p.val().rank() != 2 || p.val().rows() != r) {
      throw ShapeError("concat_cols", parts[0].val().shape(), p.val().shape());
    }
    total += p.val().cols();
    rg = rg || p.requires_grad();
  }
  Array out({r, total});
  size_t off = 0;
  std::vector<int> ids;
  std::vector<size_t> widths;
  for (const Value& p : parts) {
    size_t w = p.val().cols();
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < w; ++j) out.at(i, off + j) = p.val().at(i, j);
    ids.push_back(p.id);
    widths.push_back(w);
    off += w;
  }
  return g.add_node(std::move(out), rg, "concat_cols",
                    [ids, widths, r, total](Graph& gr,
                                            const detail::Node& self) {
                      size_t off2 = 0;
                      for (size_t k = 0; k < ids.size(); ++k) {
                        size_t w = widths[k];
                        detail::Node& p = gr.node(ids[k]);
                        if (p.requires_grad) {
                          if (p.grad.numel() == 0)
                            p.grad = Array(p.value.shape());
                          for (size_t i = 0; i < r; ++i)
                            for (size_t j = 0; j < w; ++j)
                              p.grad[i * w + j] +=
                                  self.grad[i * total + off2 + j];
                        }
                        off2 += w;
                      }
                    });
}

inline Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  Graph& g = *parts[0].graph;
  size_t c = parts[0].val().cols();
  size_t total = 0;
  bool rg = false;
  for (const Value& p : parts) {
    detail::same_graph(parts[0], p, "concat_rows");
    if (p.val().rank() != 2 || p.val().cols() != c) {
      throw ShapeError("concat_rows", parts[0].val().shape(), p.val().shape());
    }
    total += p.val().rows();
    rg = rg || p.requires_grad();
  }
  Array out({total, c});
  size_t off = 0;
  std::vector<int> ids;
  std::vector<size_t> heights;
  for (const Value& p : parts) {
    size_t h = p.val().rows();
    for (size_t i = 0; i < h * c; ++i) out[off * c + i] = p.val()[i];
    ids.push_back(p.id);
    heights.push_back(h);
    off += h;
  }
  return g.add_node(std::move(out), rg, "concat_rows",
                    [ids, heights, c](Graph& gr, const detail::Node& self) {
                      size_t off2 = 0;
                      for (size_t k = 0; k < ids.size(); ++k) {
                        size_t h = heights[k];
                        detail::Node& p = gr.node(ids[k]);
                        if (p.requires_grad) {
                          if (p.grad.numel() == 0)
                            p.grad = Array(p.value.shape());
                          for (size_t i = 0; i < h * c; ++i)
                            p.grad[i] += self.grad[off2 * c + i];
                        }
                        off2 += h;
                      }
                    });
}

// Gathers rows of a rank-2 array; backward scatter-adds, so rows that were
// not taken receive exactly zero gradient.
inline Value take_rows(Value a, std::vector<size_t> idx) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (av.rank() != 2) throw ShapeError("take_rows", av.shape(), "expected rank 2");
  size_t c = av.cols();
  for (size_t i : idx) {
    if (i >= av.rows()) {
      throw ShapeError("take_rows", av.shape(),
                       "row index " + std::to_string(i) + " out of range");
    }
  }
  Array out({idx.size(), c});
  for (size_t k = 0; k < idx.size(); ++k)
    for (size_t j = 0; j < c; ++j) out.at(k, j) = av.at(idx[k], j);
  int ia = a.id;
  auto idx_ptr = std::make_shared<std::vector<size_t>>(std::move(idx));
  return g.add_node(std::move(out), a.requires_grad(), "take_rows",
                    [ia, c, idx_ptr](Graph& gr, const detail::Node& self) {
                      detail::Node& p = gr.node(ia);
                      if (!p.requires_grad) return;
                      if (p.grad.numel() == 0) p.grad = Array(p.value.shape());
                      for (size_t k = 0; k < idx_ptr->size(); ++k)
                        for (size_t j = 0; j < c; ++j)
                          p.grad[(*idx_ptr)[k] * c + j] +=
                              self.grad[k * c + j];
                    });
}

// Fills masked entries with a constant; gradients do not flow through
// masked positions.
inline Value masked_fill(Value a, const std::vector<uint8_t>& mask, double v) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (mask.size() != av.numel()) {
    throw ShapeError("masked_fill", av.shape(),
                     "mask has " + std::to_string(mask.size()) + " entries");
  }
  Array out(av.shape());
  for (size_t i = 0; i < av.numel(); ++i) out[i] = mask[i] ? v : av[i];
  int ia = a.id;
  auto m = std::make_shared<std::vector<uint8_t>>(mask);
  return g.add_node(std::move(out), a.requires_grad(), "masked_fill",
                    [ia, m](Graph& gr, const detail::Node& self) {
                      Array gs(self.grad.shape());
                      for (size_t i = 0; i < gs.numel(); ++i)
                        gs[i] = (*m)[i] ? 0.0 : self.grad[i];
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

inline Value reshape(Value a, Shape shape) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (Array::count(shape) != av.numel()) {
    throw ShapeError("reshape", av.shape(),
                     "cannot reshape to " + shape_str(shape));
  }
  Array out = Array::from(std::move(shape), av.vec());
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "reshape",
                    [ia](Graph& gr, const detail::Node& self) {
                      gr.accum_grad(ia, self.grad.data(), self.grad.numel());
                    });
}

// Broadcasts a [1 x C] row (or rank-1 [C]) to [R x C].
inline Value broadcast_rows(Value a, size_t r) {
  Graph& g = *a.graph;
  const Array& av = a.val();
  if (av.rows() != 1) throw ShapeError("broadcast_rows", av.shape(), "expected one row");
  size_t c = av.cols();
  Array out({r, c});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out.at(i, j) = av[j];
  int ia = a.id;
  return g.add_node(std::move(out), a.requires_grad(), "broadcast_rows",
                    [ia, r, c](Graph& gr, const detail::Node& self) {
                      Array gs(gr.node(ia).value.shape());
                      for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < c; ++j)
                          gs[j] += self.grad.at(i, j);
                      gr.accum_grad(ia, gs.data(), gs.numel());
                    });
}

// Forward identity; contributes zero gradient to everything upstream.
inline Value stop_gradient(Value a) {
  Graph& g = *a.graph;
  Array out = a.val();
  return g.add_node(std::move(out), /*requires_grad=*/false, "stop_gradient",
                    nullptr);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12) for a scalar-valued builder.
inline double grad_check(const std::function<Value(Graph&, Value)>& build,
                         const Array& point, double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");
  Graph g;
  Value x = g.leaf(point, /*requires_grad=*/true);
  Value loss = build(g, x);
  if (loss.val().numel() != 1) {
    throw ShapeError("grad_check", loss.val().shape(), "expected scalar loss");
  }
  g.backward(loss);
  Array analytic = x.grad();

  auto eval_at = [&](const Array& p) {
    Graph ge;
    Value xe = ge.leaf(p, false);
    Value l = build(ge, xe);
    return l.val()[0];
  };

  double max_err = 0.0;
  Array p = point;
  for (size_t i = 0; i < point.numel(); ++i) {
    double orig = p[i];
    p[i] = orig + step;
    double fp = eval_at(p);
    p[i] = orig - step;
    double fm = eval_at(p);
    p[i] = orig;
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic[i];
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      throw NumericError("grad_check: non-finite derivative estimate at coordinate " +
                         std::to_string(i));
    }
    double err = std::fabs(a - numeric) /
                 (std::fabs(a) + std::fabs(numeric) + 1e-12);
    if (err > max_err) max_err = err;
  }
  return max_err;
}

}  // namespace crtrain
