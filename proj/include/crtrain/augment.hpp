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

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crtrain/array.hpp"
#include "crtrain/fbank.hpp"
#include "crtrain/util.hpp"

namespace crtrain {

// Full parameterization of the view pipeline: mixup, then time/frequency
// masking, then random erasing, producing k independent views.
struct AugmentationPolicy {
  double mixup_alpha = 1.0;   // mixing coefficient ~ Beta(alpha, alpha)
  double mixup_prob = 0.5;    // probability a sample is mixed at all
  int time_masks = 2;
  int time_mask_max = 12;     // frames; draw width from Uniform{0..max}
  int freq_masks = 2;
  int freq_mask_max = 3;      // mel bins
  double erase_prob = 0.25;
  double erase_scale_lo = 0.02;
  double erase_scale_hi = 3.3;  // clipped to 1.0 when drawing
  double erase_aspect_lo = 0.3;
  double erase_aspect_hi = 0.3;
  int views = 2;               // k
  bool mask_fill_mean = true;  // false = fill masks with 0

  void validate() const {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob_ok(mixup_prob) || !prob_ok(erase_prob)) {
      throw ConfigError("augment: probabilities must lie in [0,1]");
    }
    if (mixup_alpha <= 0.0) throw ConfigError("augment: mixup_alpha must be > 0");
    if (time_masks < 0 || freq_masks < 0 || time_mask_max < 0 ||
        freq_mask_max < 0) {
      throw ConfigError("augment: mask counts/widths must be >= 0");
    }
    if (views < 1) throw ConfigError("augment: views must be >= 1");
    if (erase_scale_lo > erase_scale_hi || erase_aspect_lo > erase_aspect_hi) {
      throw ConfigError("augment: erase intervals must be ordered");
    }
  }

  AugmentationPolicy without_augmentation() const {
    AugmentationPolicy p = *this;
    p.mixup_prob = 0.0;
    p.time_masks = 0;
    p.freq_masks = 0;
    p.erase_prob = 0.0;
    return p;
  }
};

// One entry of the applied-ops log; replaying the log on the clean source
// reconstructs the view bitwise.
struct AppliedOp {
  enum Kind { kMixup, kTimeMask, kFreqMask, kErase } kind;
  // mixup: a=mu; time/freq mask: a=start, b=width, c=fill value
  // erase: a=row0, b=col0, c=rows, d=cols, seed=noise stream, mean/std below
  double a = 0, b = 0, c = 0, d = 0;
  double mean = 0, stddev = 0;
  uint64_t seed = 0;
};

struct AugmentedView {
  MelSpectrogram spectrogram;
  std::vector<AppliedOp> ops;
  int view_index = 0;
};

namespace detail {

// Mean/std over cells that are neither padded nor already masked by an
// earlier op; statistics come from the pristine input in all callers.
inline std::pair<double, double> unpadded_stats(const MelSpectrogram& x) {
  double sum = 0.0, sum2 = 0.0;
  size_t n = 0;
  for (size_t t = 0; t < x.n_frames(); ++t) {
    if (x.frame_mask[t]) continue;
    for (size_t r = 0; r < x.n_mels(); ++r) {
      double v = x.values.at(r, t);
      sum += v;
      sum2 += v * v;
      ++n;
    }
  }
  if (n == 0) return {0.0, 0.0};
  double mean = sum / static_cast<double>(n);
  double var = sum2 / static_cast<double>(n) - mean * mean;
  return {mean, var > 0.0 ? std::sqrt(var) : 0.0};
}

}  // namespace detail

// Convex combination of two spectrograms and their targets.
inline std::pair<MelSpectrogram, std::vector<double>> mixup(
    const MelSpectrogram& x1, const std::vector<double>& y1,
    const MelSpectrogram& x2, const std::vector<double>& y2, double mu) {
  if (!x1.values.same_shape(x2.values)) {
    throw ShapeError("mixup", x1.values.shape(), x2.values.shape());
  }
  if (y1.size() != y2.size()) {
    throw ShapeError("mixup", Shape{y1.size()}, Shape{y2.size()});
  }
  if (mu < 0.0 || mu > 1.0) throw ConfigError("mixup: mu must lie in [0,1]");
  if (mu == 1.0) return {x1, y1};  // exact identity
  MelSpectrogram out = x1;
  for (size_t i = 0; i < out.values.numel(); ++i) {
    out.values[i] = mu * x1.values[i] + (1.0 - mu) * x2.values[i];
  }
  std::vector<double> y(y1.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = mu * y1[i] + (1.0 - mu) * y2[i];
  return {out, y};
}

// Time and frequency masking. Mask widths are drawn from Uniform{0..max};
// the fill value is the mean of the unpadded input (computed once, before
// any mask lands).
inline MelSpectrogram spec_augment(const MelSpectrogram& x,
                                   const AugmentationPolicy& policy, Rng& rng,
                                   std::vector<AppliedOp>* log = nullptr) {
  if (static_cast<size_t>(policy.time_mask_max) > x.n_frames() ||
      static_cast<size_t>(policy.freq_mask_max) > x.n_mels()) {
    throw ConfigError("spec_augment: mask width exceeds axis length");
  }
  MelSpectrogram out = x;
  double fill = policy.mask_fill_mean ? detail::unpadded_stats(x).first : 0.0;
  for (int i = 0; i < policy.time_masks; ++i) {
    auto width = static_cast<size_t>(rng.uniform_int(0, policy.time_mask_max));
    auto start = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(x.n_frames() - width)));
    if (log) {
      log->push_back({AppliedOp::kTimeMask, double(start), double(width), fill});
    }
    for (size_t t = start; t < start + width; ++t)
      for (size_t r = 0; r < out.n_mels(); ++r) out.values.at(r, t) = fill;
  }
  for (int i = 0; i < policy.freq_masks; ++i) {
    auto width = static_cast<size_t>(rng.uniform_int(0, policy.freq_mask_max));
    auto start = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(x.n_mels() - width)));
    if (log) {
      log->push_back({AppliedOp::kFreqMask, double(start), double(width), fill});
    }
    for (size_t r = start; r < start + width; ++r)
      for (size_t t = 0; t < out.n_frames(); ++t) out.values.at(r, t) = fill;
  }
  return out;
}

// Random erasing: with probability erase_prob, overwrite one rectangle with
// noise drawn from the unpadded input's statistics.
inline MelSpectrogram random_erase(const MelSpectrogram& x,
                                   const AugmentationPolicy& policy, Rng& rng,
                                   std::vector<AppliedOp>* log = nullptr) {
  if (!rng.bernoulli(policy.erase_prob)) return x;
  size_t h_max = x.n_mels(), w_max = x.n_frames();
  auto [mean, stddev] = detail::unpadded_stats(x);
  double scale_hi = policy.erase_scale_hi > 1.0 ? 1.0 : policy.erase_scale_hi;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double s = rng.uniform(policy.erase_scale_lo, scale_hi);
    double r = rng.uniform(policy.erase_aspect_lo, policy.erase_aspect_hi);
    double area = s * static_cast<double>(h_max * w_max);
    auto rect_h = static_cast<long>(std::lround(std::sqrt(area * r)));
    auto rect_w = static_cast<long>(std::lround(std::sqrt(area / r)));
    if (rect_h > static_cast<long>(h_max)) rect_h = static_cast<long>(h_max);
    if (rect_w > static_cast<long>(w_max)) rect_w = static_cast<long>(w_max);
    if (rect_h < 1 || rect_w < 1) continue;  // degenerate after clipping
    auto row0 = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(h_max) - rect_h));
    auto col0 = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(w_max) - rect_w));
    uint64_t noise_seed = rng.raw();
    MelSpectrogram out = x;
    Rng noise(noise_seed);
    for (size_t i = 0; i < static_cast<size_t>(rect_h); ++i) {
      for (size_t j = 0; j < static_cast<size_t>(rect_w); ++j) {
        out.values.at(row0 + i, col0 + j) = noise.normal(mean, stddev);
      }
    }
    if (log) {
      AppliedOp op{AppliedOp::kErase, double(row0), double(col0),
                   double(rect_h), double(rect_w)};
      op.mean = mean;
      op.stddev = stddev;
      op.seed = noise_seed;
      log->push_back(op);
    }
    return out;
  }
  return x;  // all attempts degenerate
}

// Produces k views of one example. All views share a single mixup draw
// (partner and mu), so they carry one common target; masking and erasing
// are drawn independently per view.
inline std::vector<std::pair<AugmentedView, std::vector<double>>> make_views(
    const MelSpectrogram& x, const std::vector<double>& y,
    const MelSpectrogram* partner_x, const std::vector<double>* partner_y,
    int k, const AugmentationPolicy& policy, Rng& rng) {
  if (k < 1) throw ConfigError("make_views: k must be >= 1");
  policy.validate();

  MelSpectrogram base = x;
  std::vector<double> target = y;
  std::vector<AppliedOp> shared_ops;
  if (partner_x != nullptr && policy.mixup_prob > 0.0 &&
      rng.bernoulli(policy.mixup_prob)) {
    double mu = rng.beta(policy.mixup_alpha);
    auto mixed = mixup(x, y, *partner_x, *partner_y, mu);
    base = std::move(mixed.first);
    target = std::move(mixed.second);
    AppliedOp op{AppliedOp::kMixup, mu};
    shared_ops.push_back(op);
  }

  std::vector<std::pair<AugmentedView, std::vector<double>>> out;
  out.reserve(static_cast<size_t>(k));
  for (int v = 0; v < k; ++v) {
    Rng view_rng(rng.raw());
    AugmentedView view;
    view.view_index = v;
    view.ops = shared_ops;
    MelSpectrogram s = spec_augment(base, policy, view_rng, &view.ops);
    s = random_erase(s, policy, view_rng, &view.ops);
    view.spectrogram = std::move(s);
    out.emplace_back(std::move(view), target);
  }
  return out;
}

// Reapplies a view's op log to the clean source (and mixup partner).
// Bitwise-identical to the original view.
inline MelSpectrogram replay_ops(const MelSpectrogram& clean,
                                 const MelSpectrogram* partner,
                                 const std::vector<AppliedOp>& ops) {
  MelSpectrogram out = clean;
  for (const AppliedOp& op : ops) {
    switch (op.kind) {
      case AppliedOp::kMixup: {
        if (partner == nullptr) {
          throw ConfigError("replay_ops: log contains mixup but no partner given");
        }
        double mu = op.a;
        if (mu == 1.0) break;
        for (size_t i = 0; i < out.values.numel(); ++i) {
          out.values[i] = mu * out.values[i] + (1.0 - mu) * partner->values[i];
        }
        break;
      }
      case AppliedOp::kTimeMask: {
        auto start = static_cast<size_t>(op.a);
        auto width = static_cast<size_t>(op.b);
        for (size_t t = start; t < start + width; ++t)
          for (size_t r = 0; r < out.n_mels(); ++r) out.values.at(r, t) = op.c;
        break;
      }
      case AppliedOp::kFreqMask: {
        auto start = static_cast<size_t>(op.a);
        auto width = static_cast<size_t>(op.b);
        for (size_t r = start; r < start + width; ++r)
          for (size_t t = 0; t < out.n_frames(); ++t) out.values.at(r, t) = op.c;
        break;
      }
      case AppliedOp::kErase: {
        Rng noise(op.seed);
        auto row0 = static_cast<size_t>(op.a);
        auto col0 = static_cast<size_t>(op.b);
        auto h = static_cast<size_t>(op.c);
        auto w = static_cast<size_t>(op.d);
        for (size_t i = 0; i < h; ++i)
          for (size_t j = 0; j < w; ++j)
            out.values.at(row0 + i, col0 + j) = noise.normal(op.mean, op.stddev);
        break;
      }
    }
  }
  return out;
}

}  // namespace crtrain
