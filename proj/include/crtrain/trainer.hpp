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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "crtrain/augment.hpp"
#include "crtrain/autodiff.hpp"
#include "crtrain/dataset.hpp"
#include "crtrain/evalmetrics.hpp"
#include "crtrain/losses.hpp"
#include "crtrain/model.hpp"
#include "crtrain/threadpool.hpp"
#include "crtrain/util.hpp"

namespace crtrain {

// Supervised and semi-supervised training loops. All randomness is drawn
// from substreams derived statelessly from (seed, purpose, epoch, step,
// slot), so a trajectory is reproducible from any epoch boundary and is
// independent of the worker-thread count.

struct TrainConfig {
  int batch_size = 32;
  double lr = 1e-3;
  int epochs = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_frac = 0.1;  // fraction of total steps with linear warmup
  double weight_decay = 0.0;
  LossWeights weights;
  AugmentationPolicy policy;            // labeled views
  AugmentationPolicy unlabeled_policy;  // defaults to masking only
  int unlabeled_ratio = 4;              // unlabeled examples per labeled one
  int labeled_limit = 0;  // semi mode: first N train examples are labeled
  uint64_t seed = 1;
  int threads = 0;  // 0 = logical cores

  TrainConfig() {
    unlabeled_policy = policy;
    unlabeled_policy.mixup_prob = 0.0;
    unlabeled_policy.erase_prob = 0.0;
  }

  void validate() const {
    if (batch_size <= 0 || epochs <= 0 || lr <= 0) {
      throw ConfigError("train: batch_size, epochs and lr must be positive");
    }
    if (warmup_frac < 0 || warmup_frac > 1) {
      throw ConfigError("train: warmup_frac must lie in [0,1]");
    }
    if (unlabeled_ratio < 1) {
      throw ConfigError("train: unlabeled_ratio must be >= 1");
    }
    weights.validate();
    policy.validate();
    unlabeled_policy.validate();
    if (weights.lambda > 0 && policy.views < 2) {
      throw ConfigError("train: consistency loss needs at least 2 views");
    }
  }
};

struct TrainState {
  ParamMap params;
  ParamMap adam_m;
  ParamMap adam_v;
  int epoch = 0;          // completed epochs
  long long step = 0;     // optimizer steps taken
  double best_dev_map = -1.0;
  int best_epoch = -1;
  // per completed epoch, the mean combined training loss; the CSV's bce
  // and cr columns re-add to these values
  std::vector<double> epoch_totals;
};

inline double cosine_warmup_lr(long long step, long long total_steps,
                               double base_lr, double warmup_frac) {
  auto warm = static_cast<long long>(
      std::llround(warmup_frac * static_cast<double>(total_steps)));
  if (warm > 0 && step < warm) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  }
  if (total_steps <= warm) return base_lr;
  double progress = static_cast<double>(step - warm) /
                    static_cast<double>(total_steps - warm);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// Bookkeeping for the semi-supervised schedule: how many passes over the
// unlabeled pool a run makes.
inline double unlabeled_epochs_seen(int epochs, int ratio,
                                    long long labeled_size,
                                    long long unlabeled_size) {
  return static_cast<double>(epochs) * static_cast<double>(ratio) *
         static_cast<double>(labeled_size) /
         static_cast<double>(unlabeled_size);
}

namespace detail {

inline std::vector<std::string> param_names(const ParamMap& params) {
  std::vector<std::string> names;
  names.reserve(params.size());
  for (const auto& [name, _] : params) names.push_back(name);
  return names;
}

struct TaskResult {
  std::vector<Array> grads;  // aligned with sorted param names
  double bce = 0.0;
  double cr = 0.0;
  double total = 0.0;
};

// Builds one example's graph: k augmented views, a forward pass per view,
// per-example loss = mean-over-views BCE (supervised only) + lambda * CR.
// Returns gradients w.r.t. every parameter.
inline TaskResult run_example_task(
    const Dataset& ds, size_t example_idx, size_t partner_idx, bool supervised,
    double lambda, const AugmentationPolicy& policy, const ParamMap& params,
    const std::vector<std::string>& names, const EncoderConfig& enc,
    uint64_t seed, uint64_t epoch, uint64_t step, uint64_t slot) {
  MelSpectrogram clean = ds.spectrogram(example_idx);
  std::vector<double> target =
      supervised ? ds.target_vector(example_idx) : std::vector<double>{};

  Rng aug_rng = Rng::derive(seed, "aug", epoch, step, slot);
  MelSpectrogram partner;
  std::vector<double> partner_target;
  const MelSpectrogram* partner_ptr = nullptr;
  const std::vector<double>* partner_target_ptr = nullptr;
  if (supervised && policy.mixup_prob > 0.0) {
    partner = ds.spectrogram(partner_idx);
    partner_target = ds.target_vector(partner_idx);
    partner_ptr = &partner;
    partner_target_ptr = &partner_target;
  }
  std::vector<double> dummy_target(supervised ? 0 : ds.n_labels(), 0.0);
  auto views = make_views(clean, supervised ? target : dummy_target,
                          partner_ptr, partner_target_ptr, policy.views,
                          policy, aug_rng);

  Graph g;
  auto p = params_to_graph(g, params, /*requires_grad=*/true);
  std::vector<Value> probs;
  probs.reserve(views.size());
  for (size_t v = 0; v < views.size(); ++v) {
    Rng drop_rng = Rng::derive(seed, "drop", epoch, step, slot * 64 + v);
    Value logits = model_forward(g, views[v].first.spectrogram, p, enc,
                                 /*training=*/true, &drop_rng);
    probs.push_back(probs_from_logits(logits));
  }

  TaskResult result;
  Value loss{nullptr, -1};
  Value cr{nullptr, -1};
  bool have_cr = views.size() >= 2;
  if (have_cr) cr = cr_multi(probs);

  if (supervised) {
    Array y({size_t{1}, ds.n_labels()});
    for (size_t c = 0; c < views[0].second.size(); ++c) {
      y[c] = views[0].second[c];
    }
    Value bce{nullptr, -1};
    for (size_t v = 0; v < probs.size(); ++v) {
      Value term = bce_multilabel(probs[v], y);
      bce = v == 0 ? term : add(bce, term);
    }
    bce = mul_scalar(bce, 1.0 / static_cast<double>(probs.size()));
    result.bce = bce.val()[0];
    if (have_cr && lambda > 0) {
      loss = supervised_total(bce, cr, lambda);
    } else {
      loss = bce;
    }
  } else {
    if (!have_cr) {
      throw ConfigError("unlabeled examples need at least 2 views");
    }
    loss = cr;  // targets are never read on this path
  }
  if (have_cr) result.cr = cr.val()[0];

  result.total = loss.val()[0];
  if (!std::isfinite(result.total)) {
    throw NumericError("training loss is not finite for example " +
                       ds.examples[example_idx].id);
  }
  g.backward(loss);
  result.grads.reserve(names.size());
  for (const auto& name : names) result.grads.push_back(p.at(name).grad());
  return result;
}

struct AdamState {
  ParamMap* params;
  ParamMap* m;
  ParamMap* v;
};

inline void adam_step(AdamState s, const std::vector<std::string>& names,
                      const std::vector<Array>& grads, long long t,
                      const TrainConfig& cfg, double lr) {
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t k = 0; k < names.size(); ++k) {
    Array& p = s.params->at(names[k]);
    Array& m = s.m->at(names[k]);
    Array& v = s.v->at(names[k]);
    const Array& g = grads[k];
    for (size_t i = 0; i < p.numel(); ++i) {
      double gi = g[i];
      if (cfg.weight_decay > 0) gi += cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      p[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
  }
}

inline ParamMap zeros_like(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, arr] : params) out.emplace(name, Array(arr.shape()));
  return out;
}

}  // namespace detail

// Inference over one split: no augmentation, no patch dropout; scores
// projected to the evaluation label subset.
inline EvalReport evaluate_split(const ParamMap& params,
                                 const EncoderConfig& enc, const Dataset& ds,
                                 const std::string& split, int threads = 0) {
  const auto& ids = ds.split_ids(split);
  if (ids.empty()) throw ConfigError("evaluate: split '" + split + "' is empty");
  size_t n_eval = ds.manifest.dag.n_eval();
  struct Row {
    std::vector<double> scores;
    double bce;
  };
  auto rows = parallel_map<Row>(ids.size(), threads, [&](size_t i) {
    Graph g;
    auto p = params_to_graph(g, params, false);
    MelSpectrogram spec = ds.spectrogram(ids[i]);
    Value probs = probs_from_logits(model_forward(g, spec, p, enc));
    Array y({size_t{1}, ds.n_labels()});
    auto target = ds.target_vector(ids[i]);
    for (size_t c = 0; c < target.size(); ++c) y[c] = target[c];
    double bce = bce_multilabel(probs, y).val()[0];
    std::vector<double> over_f(probs.val().vec());
    return Row{project_to_eval(over_f, ds.manifest.dag), bce};
  });

  Array scores({ids.size(), n_eval});
  Array labels({ids.size(), n_eval});
  double bce_total = 0.0;
  for (size_t i = 0; i < ids.size(); ++i) {
    auto target = ds.target_vector(ids[i]);
    auto eval_target = project_to_eval(target, ds.manifest.dag);
    for (size_t c = 0; c < n_eval; ++c) {
      scores.at(i, c) = rows[i].scores[c];
      labels.at(i, c) = eval_target[c];
    }
    bce_total += rows[i].bce;
  }
  EvalReport report = mean_average_precision(scores, labels);
  report.bce = bce_total / static_cast<double>(ids.size());
  return report;
}

namespace detail {

struct EpochLog {
  double bce = 0.0;
  double cr = 0.0;
  double lr = 0.0;
  double total = 0.0;
};

// One supervised epoch over `labeled_ids` (weighted draws, with
// replacement). When `unlabeled_ids` is nonempty, every step also consumes
// ratio * batch unlabeled examples through the CR-only path.
inline EpochLog run_epoch(TrainState& state, const Dataset& ds,
                          const std::vector<size_t>& labeled_ids,
                          const std::vector<double>& weights,
                          const Dataset* unlabeled_ds,
                          const std::vector<size_t>& unlabeled_ids,
                          const EncoderConfig& enc, const TrainConfig& cfg,
                          long long total_steps, bool semi) {
  auto names = param_names(state.params);
  size_t n_draws = labeled_ids.size();
  Rng sampler_rng = Rng::derive(cfg.seed, "sampler",
                                static_cast<uint64_t>(state.epoch));
  std::vector<size_t> order = weighted_sample(weights, n_draws, sampler_rng);
  Rng partner_rng = Rng::derive(cfg.seed, "partner",
                                static_cast<uint64_t>(state.epoch));

  double lambda_lab = semi ? cfg.weights.lambda1 : cfg.weights.lambda;
  EpochLog log;
  size_t n_steps = (n_draws + cfg.batch_size - 1) / cfg.batch_size;
  double bce_sum = 0.0, cr_sum = 0.0, total_sum = 0.0;
  for (size_t s = 0; s < n_steps; ++s) {
    size_t lo = s * static_cast<size_t>(cfg.batch_size);
    size_t hi = std::min(n_draws, lo + static_cast<size_t>(cfg.batch_size));
    size_t b = hi - lo;

    std::vector<size_t> batch(b), partners(b);
    for (size_t i = 0; i < b; ++i) {
      batch[i] = labeled_ids[order[lo + i]];
      partners[i] = labeled_ids[static_cast<size_t>(partner_rng.uniform_int(
          0, static_cast<int64_t>(labeled_ids.size()) - 1))];
    }

    auto epoch_u = static_cast<uint64_t>(state.epoch);
    auto step_u = static_cast<uint64_t>(state.step);
    auto results = parallel_map<TaskResult>(b, cfg.threads, [&](size_t i) {
      return run_example_task(ds, batch[i], partners[i], /*supervised=*/true,
                              lambda_lab, cfg.policy, state.params, names, enc,
                              cfg.seed, epoch_u, step_u, i);
    });

    size_t n_unlab = 0;
    std::vector<TaskResult> unlab_results;
    if (semi && cfg.weights.lambda2 > 0 && !unlabeled_ids.empty()) {
      n_unlab = b * static_cast<size_t>(cfg.unlabeled_ratio);
      Rng unlab_rng = Rng::derive(cfg.seed, "unlab", epoch_u, step_u);
      std::vector<size_t> upicks(n_unlab);
      for (size_t j = 0; j < n_unlab; ++j) {
        upicks[j] = unlabeled_ids[static_cast<size_t>(unlab_rng.uniform_int(
            0, static_cast<int64_t>(unlabeled_ids.size()) - 1))];
      }
      unlab_results = parallel_map<TaskResult>(n_unlab, cfg.threads, [&](size_t j) {
        return run_example_task(*unlabeled_ds, upicks[j], /*partner=*/0,
                                /*supervised=*/false, 0.0,
                                cfg.unlabeled_policy, state.params, names, enc,
                                cfg.seed, epoch_u, step_u, 4096 + j);
      });
    }

    // deterministic fixed-order reduction: labeled slots, then unlabeled
    std::vector<Array> grads;
    grads.reserve(names.size());
    for (const auto& name : names) {
      grads.push_back(Array(state.params.at(name).shape()));
    }
    double inv_b = 1.0 / static_cast<double>(b);
    double step_bce = 0.0, step_cr_lab = 0.0, step_total = 0.0;
    for (size_t i = 0; i < b; ++i) {
      for (size_t k = 0; k < names.size(); ++k) {
        const Array& g = results[i].grads[k];
        Array& acc = grads[k];
        for (size_t e = 0; e < acc.numel(); ++e) acc[e] += inv_b * g[e];
      }
      step_bce += inv_b * results[i].bce;
      step_cr_lab += inv_b * results[i].cr;
      step_total += inv_b * results[i].total;
    }
    double step_cr_unlab = 0.0;
    if (n_unlab > 0) {
      double wu = cfg.weights.lambda2 / static_cast<double>(n_unlab);
      for (size_t j = 0; j < n_unlab; ++j) {
        for (size_t k = 0; k < names.size(); ++k) {
          const Array& g = unlab_results[j].grads[k];
          Array& acc = grads[k];
          for (size_t e = 0; e < acc.numel(); ++e) acc[e] += wu * g[e];
        }
        step_cr_unlab += unlab_results[j].cr / static_cast<double>(n_unlab);
      }
    }

    double lr = cosine_warmup_lr(state.step, total_steps, cfg.lr,
                                 cfg.warmup_frac);
    adam_step({&state.params, &state.adam_m, &state.adam_v}, names, grads,
              state.step + 1, cfg, lr);
    state.step += 1;
    log.lr = lr;
    bce_sum += step_bce;
    if (semi) {
      cr_sum += cfg.weights.lambda1 * step_cr_lab +
                cfg.weights.lambda2 * step_cr_unlab;
      total_sum += step_total + cfg.weights.lambda2 * step_cr_unlab;
    } else {
      cr_sum += step_cr_lab;
      total_sum += step_total;
    }
  }
  log.bce = bce_sum / static_cast<double>(n_steps);
  log.cr = cr_sum / static_cast<double>(n_steps);
  log.total = total_sum / static_cast<double>(n_steps);
  return log;
}

// Parameter + optimizer state snapshot for resuming.
inline void save_train_state(const std::string& path, const TrainState& s,
                             const EncoderConfig& enc) {
  ParamMap merged = s.params;
  for (const auto& [name, arr] : s.adam_m) merged.emplace("adam_m/" + name, arr);
  for (const auto& [name, arr] : s.adam_v) merged.emplace("adam_v/" + name, arr);
  merged.emplace("state/counters",
                 Array::from({4},
                             {static_cast<double>(s.epoch),
                              static_cast<double>(s.step), s.best_dev_map,
                              static_cast<double>(s.best_epoch)}));
  save_checkpoint(path, enc, merged);
}

inline TrainState load_train_state(const std::string& path,
                                   EncoderConfig* enc_out = nullptr) {
  auto [enc, merged] = load_checkpoint(path);
  if (enc_out != nullptr) *enc_out = enc;
  TrainState s;
  for (const auto& [name, arr] : merged) {
    if (name.rfind("adam_m/", 0) == 0) {
      s.adam_m.emplace(name.substr(7), arr);
    } else if (name.rfind("adam_v/", 0) == 0) {
      s.adam_v.emplace(name.substr(7), arr);
    } else if (name == "state/counters") {
      s.epoch = static_cast<int>(arr[0]);
      s.step = static_cast<long long>(arr[1]);
      s.best_dev_map = arr[2];
      s.best_epoch = static_cast<int>(arr[3]);
    } else {
      s.params.emplace(name, arr);
    }
  }
  return s;
}

inline TrainState train_loop(const Dataset& ds,
                             const std::vector<size_t>& labeled_ids,
                             const Dataset* unlabeled_ds,
                             const std::vector<size_t>& unlabeled_ids,
                             const EncoderConfig& enc, const TrainConfig& cfg,
                             const std::string& out_dir, bool semi,
                             bool resume, int stop_after) {
  cfg.validate();
  enc.validate();
  if (labeled_ids.empty()) throw ConfigError("train: no labeled examples");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  std::string state_path = (fs::path(out_dir) / "state.bin").string();
  std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
  std::string last_path = (fs::path(out_dir) / "last.ckpt").string();

  TrainState state;
  if (resume && fs::exists(state_path)) {
    state = load_train_state(state_path);
  } else {
    std::remove(metrics_path.c_str());
    Rng init_rng = Rng::derive(cfg.seed, "init");
    state.params = init_params(enc, init_rng);
    state.adam_m = zeros_like(state.params);
    state.adam_v = zeros_like(state.params);
  }

  std::vector<std::vector<int>> targets;
  targets.reserve(labeled_ids.size());
  for (size_t id : labeled_ids) targets.push_back(ds.examples[id].target_ids);
  std::vector<int> excluded;
  auto weights = class_balanced_weights(targets, ds.n_labels(), &excluded);

  size_t steps_per_epoch =
      (labeled_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
  auto total_steps =
      static_cast<long long>(steps_per_epoch) * cfg.epochs;

  int last_epoch = cfg.epochs;
  if (stop_after > 0 && stop_after < last_epoch) last_epoch = stop_after;
  while (state.epoch < last_epoch) {
    EpochLog log = run_epoch(state, ds, labeled_ids, weights, unlabeled_ds,
                             unlabeled_ids, enc, cfg, total_steps, semi);
    state.epoch += 1;
    state.epoch_totals.push_back(log.total);
    EvalReport dev = evaluate_split(state.params, enc, ds, "dev", cfg.threads);
    append_metrics_csv(metrics_path, state.epoch, "dev", dev.map, log.bce,
                       log.cr, log.lr, cfg.seed);
    if (dev.map > state.best_dev_map) {
      state.best_dev_map = dev.map;
      state.best_epoch = state.epoch;
      save_checkpoint(best_path, enc, state.params);
    }
    save_checkpoint(last_path, enc, state.params);
    save_train_state(state_path, state, enc);
  }
  return state;
}

}  // namespace detail

// stop_after interrupts the run after that many epochs (keeping the full
// schedule horizon); resuming with the same config continues the exact
// trajectory.
inline TrainState train_supervised(const Dataset& ds, const EncoderConfig& enc,
                                   const TrainConfig& cfg,
                                   const std::string& out_dir,
                                   bool resume = false, int stop_after = 0) {
  return detail::train_loop(ds, ds.train_ids, nullptr, {}, enc, cfg, out_dir,
                            /*semi=*/false, resume, stop_after);
}

// Labeled examples: the first labeled_limit train examples (or all, when
// unlabeled data comes from a separate dataset). Unlabeled examples carry
// no targets anywhere in the loss.
inline TrainState train_semisupervised(const Dataset& labeled,
                                       const Dataset& unlabeled,
                                       const std::vector<size_t>& labeled_ids,
                                       const std::vector<size_t>& unlabeled_ids,
                                       const EncoderConfig& enc,
                                       const TrainConfig& cfg,
                                       const std::string& out_dir,
                                       bool resume = false, int stop_after = 0) {
  if (cfg.unlabeled_policy.views < 2) {
    throw ConfigError("semi: unlabeled consistency needs at least 2 views");
  }
  return detail::train_loop(labeled, labeled_ids, &unlabeled, unlabeled_ids,
                            enc, cfg, out_dir, /*semi=*/true, resume,
                            stop_after);
}

// Splits one dataset's train ids into labeled head and unlabeled tail.
inline std::pair<std::vector<size_t>, std::vector<size_t>> split_labeled(
    const Dataset& ds, int labeled_limit) {
  if (labeled_limit <= 0 ||
      static_cast<size_t>(labeled_limit) >= ds.train_ids.size()) {
    throw ConfigError("semi: labeled_limit must split the train set");
  }
  std::vector<size_t> lab(ds.train_ids.begin(),
                          ds.train_ids.begin() + labeled_limit);
  std::vector<size_t> unlab(ds.train_ids.begin() + labeled_limit,
                            ds.train_ids.end());
  return {lab, unlab};
}

}  // namespace crtrain
