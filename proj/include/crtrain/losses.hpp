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

#include <string>
#include <vector>

#include "crtrain/array.hpp"
#include "crtrain/autodiff.hpp"
#include "crtrain/util.hpp"

namespace crtrain {

// Loss family for multi-label event recognition with consistency
// regularization. Reduction convention everywhere: mean over batch rows,
// sum over classes, so the regularization weights stay comparable between
// the BCE and CR terms.

struct LossWeights {
  double lambda = 2.0;    // supervised CR weight
  double lambda1 = 1.0;   // semi-supervised: CR weight on labeled data
  double lambda2 = 1.5;   // semi-supervised: CR weight on unlabeled data

  void validate() const {
    if (lambda < 0 || lambda1 < 0 || lambda2 < 0) {
      throw ConfigError("loss weights must be >= 0");
    }
  }
};

// Probabilities are clamped into [eps, 1-eps] before any log, identically
// in the BCE and CR paths.
inline constexpr double kProbEps = 1e-7;

inline Value clamp_probs(Value p) { return clamp(p, kProbEps, 1.0 - kProbEps); }

inline Value probs_from_logits(Value logits) {
  return clamp_probs(sigmoid(logits));
}

namespace detail {

inline void check_probs(const Array& p, const char* op) {
  for (size_t i = 0; i < p.numel(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw NumericError(std::string(op) +
                         ": probability outside (0,1) after clamping");
    }
  }
}

inline double batch_rows(const Array& a) {
  return static_cast<double>(a.rank() >= 2 ? a.rows() : 1);
}

}  // namespace detail

// Multi-label binary cross entropy. Targets may be soft (mixup).
inline Value bce_multilabel(Value probs, const Array& targets) {
  Graph& g = *probs.graph;
  if (!probs.val().same_shape(targets)) {
    throw ShapeError("bce_multilabel", probs.val().shape(), targets.shape());
  }
  Value p = clamp_probs(probs);
  detail::check_probs(p.val(), "bce_multilabel");
  Value y = g.leaf(targets);
  Value pos = mul(y, log_op(p));
  Value neg = mul(rsub_scalar(1.0, y), log_op(rsub_scalar(1.0, p)));
  double inv_b = 1.0 / detail::batch_rows(targets);
  return mul_scalar(sum_all(add(pos, neg)), -inv_b);
}

namespace detail {

// One directed term: the frozen branch acts as the pseudo-label for the
// live branch. Gradients flow only into `live`.
inline Value cr_directed(Value pseudo, Value live) {
  Value sg = stop_gradient(clamp_probs(pseudo));
  Value q = clamp_probs(live);
  check_probs(q.val(), "cr_pair");
  Value pos = mul(sg, log_op(q));
  Value neg = mul(rsub_scalar(1.0, sg), log_op(rsub_scalar(1.0, q)));
  double inv_b = 1.0 / batch_rows(q.val());
  return mul_scalar(sum_all(add(pos, neg)), -inv_b);
}

}  // namespace detail

// Pairwise consistency regularization with stop-gradient pseudo-labels:
// the average of the two directed cross-entropy terms.
inline Value cr_pair(Value p1, Value p2) {
  detail::same_graph(p1, p2, "cr_pair");
  if (!p1.val().same_shape(p2.val())) {
    throw ShapeError("cr_pair", p1.val().shape(), p2.val().shape());
  }
  Value l12 = detail::cr_directed(p1, p2);
  Value l21 = detail::cr_directed(p2, p1);
  return mul_scalar(add(l12, l21), 0.5);
}

// k-view generalization: pairwise terms averaged so that k=2 reproduces
// cr_pair exactly. Terms are summed in sorted index order (i<j), which
// makes the value independent of how the caller orders equal view sets.
inline Value cr_multi(const std::vector<Value>& views) {
  if (views.size() < 2) {
    throw ConfigError("cr_multi: need at least 2 views, got " +
                      std::to_string(views.size()));
  }
  size_t k = views.size();
  Value acc{nullptr, -1};
  bool first = true;
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = i + 1; j < k; ++j) {
      Value term = add(detail::cr_directed(views[i], views[j]),
                       detail::cr_directed(views[j], views[i]));
      acc = first ? term : add(acc, term);
      first = false;
    }
  }
  double norm = 1.0 / static_cast<double>(k * (k - 1));
  return mul_scalar(acc, norm);
}

// Supervised objective: BCE plus lambda * CR.
inline Value supervised_total(Value bce, Value cr, double lambda) {
  if (lambda < 0) throw ConfigError("supervised_total: lambda must be >= 0");
  if (lambda == 0.0) return bce;
  return add(bce, mul_scalar(cr, lambda));
}

// Semi-supervised objective: labeled BCE + lambda1 * labeled CR +
// lambda2 * unlabeled CR. The unlabeled term never touches targets.
inline Value semi_total(Value bce_lab, Value cr_lab, Value cr_unlab,
                        double lambda1, double lambda2) {
  if (lambda1 < 0 || lambda2 < 0) {
    throw ConfigError("semi_total: coefficients must be >= 0");
  }
  Value out = bce_lab;
  if (lambda1 > 0) out = add(out, mul_scalar(cr_lab, lambda1));
  if (lambda2 > 0) out = add(out, mul_scalar(cr_unlab, lambda2));
  return out;
}

}  // namespace crtrain
