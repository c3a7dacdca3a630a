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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crtrain/array.hpp"
#include "crtrain/util.hpp"

namespace crtrain {

// Average precision over one class: precision accumulated at each
// positive's rank, ranks by descending score with ties broken by
// ascending original index. Returns nothing when the class has no
// positives (the class is skipped, not scored 0).
inline std::optional<double> average_precision(
    const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("average_precision", Shape{scores.size()},
                     Shape{labels.size()});
  }
  size_t n_pos = 0;
  for (uint8_t l : labels) n_pos += l ? 1 : 0;
  if (n_pos == 0) return std::nullopt;

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double ap = 0.0;
  size_t hits = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

struct EvalReport {
  std::vector<double> per_class_ap;  // -1 for skipped classes
  std::vector<int> skipped_classes;
  double map = 0.0;
  size_t n_evaluated_classes = 0;
  double bce = 0.0;
  double cr = 0.0;
  std::string config_hash;
  uint64_t seed = 0;
};

// Mean of per-class AP over classes with at least one positive.
// Rows of `scores`/`labels` are examples, columns are the evaluation
// classes.
inline EvalReport mean_average_precision(const Array& scores,
                                         const Array& labels) {
  if (!scores.same_shape(labels) || scores.rank() != 2) {
    throw ShapeError("mean_average_precision", scores.shape(), labels.shape());
  }
  size_t n = scores.rows(), c = scores.cols();
  EvalReport report;
  report.per_class_ap.assign(c, -1.0);
  double total = 0.0;
  for (size_t cls = 0; cls < c; ++cls) {
    std::vector<double> s(n);
    std::vector<uint8_t> l(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = scores.at(i, cls);
      l[i] = labels.at(i, cls) > 0.5 ? 1 : 0;
    }
    auto ap = average_precision(s, l);
    if (ap.has_value()) {
      report.per_class_ap[cls] = *ap;
      total += *ap;
      ++report.n_evaluated_classes;
    } else {
      report.skipped_classes.push_back(static_cast<int>(cls));
    }
  }
  if (report.n_evaluated_classes == 0) {
    throw NumericError("mean_average_precision: no class has a positive example");
  }
  report.map = total / static_cast<double>(report.n_evaluated_classes);
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  return nlohmann::json{{"map", r.map},
                        {"per_class_ap", r.per_class_ap},
                        {"skipped_classes", r.skipped_classes},
                        {"n_evaluated_classes", r.n_evaluated_classes},
                        {"bce", r.bce},
                        {"cr", r.cr},
                        {"config_hash", r.config_hash},
                        {"seed", r.seed}};
}

// Per-epoch metrics CSV. Formatting uses %.17g so re-reading the file
// reproduces the exact doubles.
inline constexpr const char* kMetricsCsvHeader = "epoch,split,map,bce,cr,lr,seed";

inline void append_metrics_csv(const std::string& path, int epoch,
                               const std::string& split, double map, double bce,
                               double cr, double lr, uint64_t seed) {
  bool fresh = !std::ifstream(path).good();
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("append_metrics_csv: cannot open " + path);
  if (fresh) f << kMetricsCsvHeader << "\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g,%.17g,%.17g,%llu", epoch,
                split.c_str(), map, bce, cr, lr,
                static_cast<unsigned long long>(seed));
  f << buf << "\n";
}

}  // namespace crtrain
