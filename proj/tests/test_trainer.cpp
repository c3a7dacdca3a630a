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

#include "crtrain/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace crtrain {
namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("crtrain_trtest_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// One tiny dataset shared by every test in this file.
const std::string& shared_dataset_dir() {
  static std::string dir = [] {
    GeneratorSpec spec = default_generator_spec();
    spec.train = 24;
    spec.dev = 8;
    spec.test = 8;
    spec.seed = 7;
    FbankConfig fbank;
    fbank.n_mels = 32;
    fbank.target_frames = 128;
    std::string d = temp_dir("shared_ds");
    generate_dataset(spec, d, fbank);
    return d;
  }();
  return dir;
}

const Dataset& shared_dataset() {
  static Dataset ds = load_dataset(shared_dataset_dir());
  return ds;
}

EncoderConfig tiny_encoder(size_t n_classes) {
  EncoderConfig enc;
  enc.input_mels = 32;
  enc.input_frames = 128;
  enc.patch_h = 8;
  enc.patch_w = 16;
  enc.embed_dim = 16;
  enc.depth = 1;
  enc.heads = 2;
  enc.mlp_ratio = 2.0;
  enc.patch_drop_rate = 0.2;
  enc.n_classes = n_classes;
  return enc;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  cfg.threads = 2;
  cfg.policy.views = 2;
  cfg.policy.time_mask_max = 12;
  cfg.policy.freq_mask_max = 3;
  cfg.unlabeled_policy = cfg.policy;
  cfg.unlabeled_policy.mixup_prob = 0.0;
  cfg.unlabeled_policy.erase_prob = 0.0;
  return cfg;
}

TEST(Schedule, CosineWithWarmup) {
  const long long total = 100;
  // linear warmup over the first 10 steps
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(0, total, 1.0, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(9, total, 1.0, 0.1), 1.0);
  // decays monotonically afterwards, approaching zero
  double prev = cosine_warmup_lr(10, total, 1.0, 0.1);
  for (long long s = 11; s < 100; ++s) {
    double cur = cosine_warmup_lr(s, total, 1.0, 0.1);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_LT(cosine_warmup_lr(99, total, 1.0, 0.1), 0.01);
}

TEST(Schedule, UnlabeledPassBookkeeping) {
  // ratio 4 with labeled epoch size L consumes 4L unlabeled examples per
  // epoch; at full scale that works out to roughly three passes
  EXPECT_NEAR(unlabeled_epochs_seen(60, 4, 20550, 1783977), 2.77, 0.01);
  EXPECT_DOUBLE_EQ(unlabeled_epochs_seen(10, 4, 500, 2000), 10.0);
}

TEST(Trainer, DeterministicMetricsAndCheckpoints) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  std::string d1 = temp_dir("det_a"), d2 = temp_dir("det_b");
  train_supervised(ds, enc, cfg, d1);
  train_supervised(ds, enc, cfg, d2);
  EXPECT_EQ(slurp(d1 + "/metrics.csv"), slurp(d2 + "/metrics.csv"));
  EXPECT_EQ(slurp(d1 + "/best.ckpt"), slurp(d2 + "/best.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Trainer, ThreadCountDoesNotChangeTrajectory) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  std::string d1 = temp_dir("thr_a"), d2 = temp_dir("thr_b");
  cfg.threads = 1;
  train_supervised(ds, enc, cfg, d1);
  cfg.threads = 4;
  train_supervised(ds, enc, cfg, d2);
  EXPECT_EQ(slurp(d1 + "/metrics.csv"), slurp(d2 + "/metrics.csv"));
  EXPECT_EQ(slurp(d1 + "/last.ckpt"), slurp(d2 + "/last.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Trainer, LossDecompositionReaddsFromCsv) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  cfg.weights.lambda = 2.0;
  std::string dir = temp_dir("decomp");
  TrainState state = train_supervised(ds, enc, cfg, dir);
  std::ifstream f(dir + "/metrics.csv");
  std::string line;
  std::getline(f, line);  // header
  size_t epoch = 0;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    ASSERT_EQ(fields.size(), 7u);
    double bce = std::stod(fields[3]);
    double cr = std::stod(fields[4]);
    ASSERT_LT(epoch, state.epoch_totals.size());
    EXPECT_NEAR(state.epoch_totals[epoch], bce + cfg.weights.lambda * cr, 1e-9);
    ++epoch;
  }
  EXPECT_EQ(epoch, 2u);
  fs::remove_all(dir);
}

TEST(Trainer, EvaluateReproducesRecordedBestDevMap) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  std::string dir = temp_dir("evalbest");
  TrainState state = train_supervised(ds, enc, cfg, dir);
  auto [enc2, params] = load_checkpoint(dir + "/best.ckpt");
  EvalReport r = evaluate_split(params, enc2, ds, "dev", cfg.threads);
  EXPECT_EQ(r.map, state.best_dev_map);
  // repeated invocation is deterministic
  EvalReport r2 = evaluate_split(params, enc2, ds, "dev", cfg.threads);
  EXPECT_EQ(r2.map, r.map);
  fs::remove_all(dir);
}

TEST(Trainer, SemiWithLambda2ZeroMatchesSupervised) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig sup_cfg = tiny_config();
  sup_cfg.weights.lambda = 1.0;
  TrainConfig semi_cfg = tiny_config();
  semi_cfg.weights.lambda1 = 1.0;
  semi_cfg.weights.lambda2 = 0.0;
  std::string d1 = temp_dir("semi0_sup"), d2 = temp_dir("semi0_semi");
  train_supervised(ds, enc, sup_cfg, d1);
  train_semisupervised(ds, ds, ds.train_ids, ds.dev_ids, enc, semi_cfg, d2);
  EXPECT_EQ(slurp(d1 + "/metrics.csv"), slurp(d2 + "/metrics.csv"));
  EXPECT_EQ(slurp(d1 + "/last.ckpt"), slurp(d2 + "/last.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Trainer, ResumeReproducesStraightRun) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  std::string d1 = temp_dir("resume_full"), d2 = temp_dir("resume_split");
  train_supervised(ds, enc, cfg, d1);
  // same config, interrupted after 2 epochs, then resumed
  train_supervised(ds, enc, cfg, d2, /*resume=*/false, /*stop_after=*/2);
  train_supervised(ds, enc, cfg, d2, /*resume=*/true);
  EXPECT_EQ(slurp(d1 + "/metrics.csv"), slurp(d2 + "/metrics.csv"));
  EXPECT_EQ(slurp(d1 + "/last.ckpt"), slurp(d2 + "/last.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Trainer, UnlabeledPathNeverReadsTargets) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  Rng init_rng = Rng::derive(1, "init");
  ParamMap params = init_params(enc, init_rng);
  auto names = detail::param_names(params);

  Dataset poisoned = ds;  // wreck every target; CR must not notice
  for (auto& ex : poisoned.examples) ex.target_ids.clear();

  auto a = detail::run_example_task(ds, ds.train_ids[0], 0, /*supervised=*/false,
                                    0.0, cfg.unlabeled_policy, params, names,
                                    enc, 9, 0, 0, 0);
  auto b = detail::run_example_task(poisoned, poisoned.train_ids[0], 0, false,
                                    0.0, cfg.unlabeled_policy, params, names,
                                    enc, 9, 0, 0, 0);
  EXPECT_EQ(a.cr, b.cr);
  ASSERT_EQ(a.grads.size(), b.grads.size());
  for (size_t k = 0; k < a.grads.size(); ++k) {
    EXPECT_EQ(max_abs_diff(a.grads[k], b.grads[k]), 0.0);
  }
  double g = 0.0;
  for (const auto& arr : a.grads)
    for (size_t i = 0; i < arr.numel(); ++i) g += std::fabs(arr[i]);
  EXPECT_GT(g, 0.0);
}

TEST(Trainer, BaselineModeRunsWithSingleView) {
  const Dataset& ds = shared_dataset();
  EncoderConfig enc = tiny_encoder(ds.n_labels());
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.weights.lambda = 0.0;
  cfg.policy.views = 1;
  std::string dir = temp_dir("baseline");
  TrainState state = train_supervised(ds, enc, cfg, dir);
  EXPECT_EQ(state.epoch, 1);
  // lambda = 0, k = 1: the logged CR term is identically zero
  std::ifstream f(dir + "/metrics.csv");
  std::string line;
  std::getline(f, line);
  std::getline(f, line);
  std::stringstream ss(line);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  EXPECT_EQ(fields[4], "0");
  fs::remove_all(dir);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig cfg = tiny_config();
  cfg.weights.lambda = 2.0;
  cfg.policy.views = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.unlabeled_ratio = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Trainer, SplitLabeledHeadTail) {
  const Dataset& ds = shared_dataset();
  auto [lab, unlab] = split_labeled(ds, 10);
  EXPECT_EQ(lab.size(), 10u);
  EXPECT_EQ(unlab.size(), ds.train_ids.size() - 10);
  EXPECT_THROW(split_labeled(ds, 0), ConfigError);
  EXPECT_THROW(split_labeled(ds, 1000), ConfigError);
}

}  // namespace
}  // namespace crtrain
