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
#include <set>
#include <string>
#include <vector>

#include "crtrain/util.hpp"

namespace crtrain {

// Label DAG over the training label set F. The designated evaluation
// subset E holds the leaf classes; every node in F \ E is an ancestor of
// some node in E. The universal root is implicit and excluded from F.
struct LabelDag {
  std::vector<std::string> names;          // size |F|
  std::vector<std::vector<int>> parents;   // per node; empty = child of root
  std::vector<int> eval_ids;               // E, fixed order

  size_t n_labels() const { return names.size(); }
  size_t n_eval() const { return eval_ids.size(); }

  int id_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("label '" + name + "' not in the DAG");
  }

  // Strict ancestors of id, root excluded, sorted ascending.
  std::vector<int> ancestors_of(int id) const {
    check_id(id);
    std::set<int> acc;
    std::vector<int> stack{id};
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      for (int p : parents[static_cast<size_t>(cur)]) {
        if (acc.insert(p).second) stack.push_back(p);
      }
    }
    return {acc.begin(), acc.end()};
  }

  void validate() const {
    size_t n = names.size();
    if (parents.size() != n) throw ConfigError("dag: parents/names size mismatch");
    for (const auto& ps : parents) {
      for (int p : ps) {
        if (p < 0 || static_cast<size_t>(p) >= n) {
          throw ConfigError("dag: parent id out of range");
        }
      }
    }
    // acyclicity via iterative DFS coloring
    std::vector<int> color(n, 0);
    for (size_t start = 0; start < n; ++start) {
      if (color[start]) continue;
      std::vector<std::pair<int, size_t>> stack{{static_cast<int>(start), 0}};
      color[start] = 1;
      while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto& ps = parents[static_cast<size_t>(node)];
        if (next < ps.size()) {
          int p = ps[next++];
          if (color[static_cast<size_t>(p)] == 1) {
            throw ConfigError("dag: cycle through label '" +
                              names[static_cast<size_t>(p)] + "'");
          }
          if (color[static_cast<size_t>(p)] == 0) {
            color[static_cast<size_t>(p)] = 1;
            stack.emplace_back(p, 0);
          }
        } else {
          color[static_cast<size_t>(node)] = 2;
          stack.pop_back();
        }
      }
    }
    // every non-eval node must be an ancestor of some eval node
    std::set<int> eval(eval_ids.begin(), eval_ids.end());
    for (int e : eval_ids) check_id(e);
    std::set<int> covered;
    for (int e : eval_ids) {
      for (int a : ancestors_of(e)) covered.insert(a);
    }
    for (size_t i = 0; i < n; ++i) {
      if (eval.count(static_cast<int>(i))) continue;
      if (!covered.count(static_cast<int>(i))) {
        throw ConfigError("dag: intermediate label '" + names[i] +
                          "' is not an ancestor of any evaluation label");
      }
    }
  }

  void check_id(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= names.size()) {
      throw ConfigError("label id " + std::to_string(id) + " not in the DAG");
    }
  }
};

// raw (subset of E) -> raw plus all strict ancestors. Idempotent.
inline std::vector<int> expand_with_ancestors(const std::vector<int>& raw,
                                              const LabelDag& dag) {
  std::set<int> acc;
  for (int id : raw) {
    dag.check_id(id);
    acc.insert(id);
    for (int a : dag.ancestors_of(id)) acc.insert(a);
  }
  return {acc.begin(), acc.end()};
}

// Restriction of a score vector over F to the coordinates of E, in the
// DAG's evaluation order.
template <typename T>
inline std::vector<T> project_to_eval(const std::vector<T>& scores,
                                      const LabelDag& dag) {
  if (scores.size() != dag.n_labels()) {
    throw ConfigError("project_to_eval: expected " +
                      std::to_string(dag.n_labels()) + " scores, got " +
                      std::to_string(scores.size()));
  }
  std::vector<T> out;
  out.reserve(dag.eval_ids.size());
  for (int e : dag.eval_ids) out.push_back(scores[static_cast<size_t>(e)]);
  return out;
}

}  // namespace crtrain
