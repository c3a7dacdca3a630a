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
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace crtrain {

using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& op, const Shape& lhs, const Shape& rhs)
      : std::runtime_error(op + ": incompatible shapes " + shape_str(lhs) +
                           " and " + shape_str(rhs)),
        lhs_(lhs),
        rhs_(rhs) {}
  ShapeError(const std::string& op, const Shape& got, const std::string& want)
      : std::runtime_error(op + ": got shape " + shape_str(got) + ", " + want),
        lhs_(got) {}
  const Shape& lhs() const { return lhs_; }
  const Shape& rhs() const { return rhs_; }

 private:
  Shape lhs_, rhs_;
};

// Dense row-major array of 64-bit floats, rank 1..3. The unit of data
// exchanged between features, augmentations, the model, and the losses.
class Array {
 public:
  Array() = default;

  explicit Array(Shape shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), 0.0);
  }

  static Array full(Shape shape, double v) {
    Array a(std::move(shape));
    std::fill(a.data_.begin(), a.data_.end(), v);
    return a;
  }

  static Array from(Shape shape, std::vector<double> values) {
    if (count(shape) != values.size()) {
      throw ShapeError("Array::from", shape,
                       "does not match " + std::to_string(values.size()) +
                           " values");
    }
    Array a;
    a.shape_ = std::move(shape);
    a.data_ = std::move(values);
    return a;
  }

  static Array scalar(double v) { return from({1}, {v}); }

  size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  size_t dim(size_t i) const { return shape_.at(i); }
  size_t numel() const { return data_.size(); }

  // 2-D view helpers; a rank-1 array behaves as a single row.
  size_t rows() const { return rank() >= 2 ? shape_[0] : 1; }
  size_t cols() const {
    if (rank() == 0) return 0;
    return rank() >= 2 ? shape_[rank() - 1] : shape_[0];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  double& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double min() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double v : data_) m = v < m ? v : m;
    return m;
  }

  double max() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double v : data_) m = v > m ? v : m;
    return m;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  double mean() const { return data_.empty() ? 0.0 : sum() / numel(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  const std::vector<double>& vec() const { return data_; }
  std::vector<double>& vec() { return data_; }

  static size_t count(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline bool operator==(const Array& a, const Array& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

inline double max_abs_diff(const Array& a, const Array& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    double d = std::fabs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace crtrain
