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

#include "crtrain/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "crtrain/util.hpp"

namespace crtrain {
namespace {

Array random_array(Shape shape, Rng& rng, double scale = 1.0) {
  Array a(std::move(shape));
  for (size_t i = 0; i < a.numel(); ++i) a[i] = rng.normal(0.0, scale);
  return a;
}

TEST(Ops, SigmoidAtZero) {
  Graph g;
  Value x = g.leaf(Array::scalar(0.0));
  EXPECT_DOUBLE_EQ(sigmoid(x).val()[0], 0.5);
}

TEST(Ops, MatmulIdentity) {
  Graph g;
  Array id({3, 3});
  for (size_t i = 0; i < 3; ++i) id.at(i, i) = 1.0;
  Rng rng(7);
  Array a = random_array({3, 3}, rng);
  Value out = matmul(g.leaf(id), g.leaf(a));
  EXPECT_EQ(out.val(), a);
}

TEST(Ops, SoftmaxUniform) {
  Graph g;
  Value x = g.leaf(Array::from({3}, {1.0, 1.0, 1.0}));
  Array y = softmax_rows(x).val();
  for (size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  Graph g;
  Value a = g.leaf(Array({2, 3}));
  Value b = g.leaf(Array({4, 5}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Ops, NonScalarLossRejected) {
  Graph g;
  Value x = g.leaf(Array({2, 2}), true);
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(StopGradient, ForwardIdentityBitwise) {
  Rng rng(3);
  Graph g;
  Array a = random_array({4, 5}, rng);
  Value x = g.leaf(a, true);
  Value y = stop_gradient(x);
  EXPECT_EQ(y.val(), a);  // exact, bitwise
}

TEST(StopGradient, ProductRuleWithFrozenFactor) {
  // d/dx [ sg(x) * x ] at x=3 is 3, not 6.
  Graph g;
  Value x = g.leaf(Array::scalar(3.0), true);
  Value y = mul(stop_gradient(x), x);
  g.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(StopGradient, BlocksAllAncestors) {
  // d/dx [ sg(x^2) ] == 0 everywhere, exactly.
  Graph g;
  Value x = g.leaf(Array::from({3}, {1.0, -2.0, 0.5}), true);
  Value y = sum_all(stop_gradient(mul(x, x)));
  g.backward(y);
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 0.0);
}

TEST(Backward, MeanGradient) {
  Graph g;
  Value x = g.leaf(Array::from({4}, {1.0, 2.0, 3.0, 4.0}), true);
  g.backward(mean_all(x));
  for (size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 0.25);
}

TEST(Backward, SigmoidDerivativeAtZero) {
  Graph g;
  Value w = g.leaf(Array::scalar(0.0), true);
  g.backward(sigmoid(w));
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Backward, RepeatedPassesIdenticalAfterZero) {
  Rng rng(11);
  Graph g;
  Value x = g.leaf(random_array({3, 4}, rng), true);
  Value w = g.leaf(random_array({4, 2}, rng), true);
  Value loss = mean_all(sigmoid(matmul(x, w)));
  g.backward(loss);
  Array g1 = x.grad(), g2 = w.grad();
  g.zero_grads();
  g.backward(loss);
  EXPECT_EQ(x.grad(), g1);
  EXPECT_EQ(w.grad(), g2);
}

// Finite-difference oracle for a random 2-layer net.
TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
  Rng rng(42);
  Array w1 = random_array({6, 8}, rng, 0.5);
  Array w2 = random_array({8, 3}, rng, 0.5);
  Array input = random_array({2, 6}, rng);

  auto build_in_w1 = [&](Graph& g, Value p) {
    Value h = tanh_op(matmul(g.leaf(input), p));
    Value o = sigmoid(matmul(h, g.leaf(w2)));
    return mean_all(o);
  };
  EXPECT_LT(grad_check(build_in_w1, w1, 1e-5), 1e-6);

  auto build_in_w2 = [&](Graph& g, Value p) {
    Value h = tanh_op(matmul(g.leaf(input), g.leaf(w1)));
    Value o = sigmoid(matmul(h, p));
    return mean_all(o);
  };
  EXPECT_LT(grad_check(build_in_w2, w2, 1e-5), 1e-6);
}

TEST(GradCheck, SumOfSquares) {
  // f = sum(x^2) at x=[1,2]: analytic gradient [2,4].
  Array x = Array::from({2}, {1.0, 2.0});
  auto build = [](Graph& g, Value p) { return sum_all(mul(p, p)); };
  Graph g;
  Value p = g.leaf(x, true);
  g.backward(build(g, p));
  EXPECT_DOUBLE_EQ(p.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 4.0);
  EXPECT_LT(grad_check(build, x, 1e-5), 1e-8);
}

TEST(GradCheck, RejectsNonPositiveStep) {
  auto build = [](Graph& g, Value p) { return sum_all(p); };
  EXPECT_THROW(grad_check(build, Array::scalar(1.0), 0.0),
               std::invalid_argument);
}

// Every remaining operator against central differences.
TEST(GradCheck, OperatorSweep) {
  Rng rng(1234);
  Array x = random_array({3, 4}, rng, 0.8);

  auto check = [&](const std::function<Value(Graph&, Value)>& f, double tol) {
    EXPECT_LT(grad_check(f, x, 1e-5), tol);
  };

  check([](Graph& g, Value p) { return mean_all(exp_op(p)); }, 1e-6);
  check([](Graph& g, Value p) { return sum_all(gelu(p)); }, 1e-6);
  check([](Graph& g, Value p) { return sum_all(log_op(sigmoid(p))); }, 1e-6);
  check([](Graph& g, Value p) { return sum_all(slice_cols(softmax_rows(p), 0, 2)); },
        1e-6);
  check([](Graph& g, Value p) { return sum_all(mul(softmax_rows(p), p)); },
        1e-6);
  check([](Graph& g, Value p) { return sum_all(slice_cols(layer_norm_rows(p), 0, 2)); },
        1e-5);
  check(
      [](Graph& g, Value p) {
        return sum_all(mul(layer_norm_rows(p), exp_op(p)));
      },
      1e-5);
  check([](Graph& g, Value p) { return mean_all(transpose(p)); }, 1e-6);
  check([](Graph& g, Value p) { return sum_all(mean_rows(mul(p, p))); }, 1e-6);
  check([](Graph& g, Value p) { return sum_all(slice_rows(p, 1, 3)); }, 1e-6);
  check([](Graph& g, Value p) { return sum_all(slice_cols(mul(p, p), 1, 3)); },
        1e-6);
  check(
      [](Graph& g, Value p) {
        return sum_all(take_rows(mul(p, p), {2, 0, 2}));
      },
      1e-6);
  check(
      [](Graph& g, Value p) {
        return sum_all(concat_cols({slice_cols(p, 0, 2), slice_cols(p, 2, 4)}));
      },
      1e-6);
  check(
      [](Graph& g, Value p) {
        return sum_all(
            mul(concat_rows({slice_rows(p, 0, 1), slice_rows(p, 1, 3)}), p));
      },
      1e-6);
  check([](Graph& g, Value p) { return sum_all(reshape(mul(p, p), {4, 3})); },
        1e-6);
  check(
      [](Graph& g, Value p) {
        std::vector<uint8_t> mask(12, 0);
        mask[0] = mask[5] = 1;
        return sum_all(mul(masked_fill(p, mask, 2.5), p));
      },
      1e-6);
  check(
      [](Graph& g, Value p) {
        Value row = g.leaf(Array::from({4}, {0.5, -1.0, 2.0, 0.25}), false);
        return sum_all(mul(add(p, row), p));
      },
      1e-6);
  check(
      [](Graph& g, Value p) {
        return sum_all(add_scalar(mul_scalar(rsub_scalar(1.0, p), 2.0), 0.5));
      },
      1e-6);
  check(
      [](Graph& g, Value p) {
        return mean_all(mul(broadcast_rows(mean_rows(p), 5), g.leaf(Array::full({5, 4}, 1.5))));
      },
      1e-6);

  // broadcast gradients when the parameter itself is the broadcast side
  Array row = random_array({1, 4}, rng);
  EXPECT_LT(grad_check(
                [&](Graph& g, Value p) {
                  Value m = g.leaf(x, false);
                  return sum_all(mul(add(m, p), m));
                },
                row, 1e-5),
            1e-6);
  Array sc = Array::scalar(0.7);
  EXPECT_LT(grad_check(
                [&](Graph& g, Value p) {
                  Value m = g.leaf(x, false);
                  return sum_all(mul(m, p));
                },
                sc, 1e-5),
            1e-6);
}

TEST(Ops, ClampGradientGatesSaturatedEntries) {
  Graph g;
  Value x = g.leaf(Array::from({3}, {0.5, 2.0, -1.0}), true);
  Value y = clamp(x, 0.0, 1.0);
  g.backward(sum_all(y));
  EXPECT_DOUBLE_EQ(y.val()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.val()[1], 1.0);
  EXPECT_DOUBLE_EQ(y.val()[2], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
}

TEST(Graph, FiniteCheckReportsOp) {
  Graph g;
  g.check_finite = true;
  Value x = g.leaf(Array::scalar(-1.0));
  EXPECT_THROW(log_op(x), NumericError);
}

TEST(Graph, GradThroughSgOnlyPathIsExactlyZero) {
  // x reachable only through stop_gradient edges -> gradient is exactly 0.
  Rng rng(5);
  Graph g;
  Value x = g.leaf(random_array({2, 2}, rng), true);
  Value w = g.leaf(random_array({2, 2}, rng), true);
  Value loss = sum_all(mul(stop_gradient(mul(x, x)), w));
  g.backward(loss);
  for (size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 0.0);
  // w still receives a real gradient
  double s = 0.0;
  for (size_t i = 0; i < 4; ++i) s += std::fabs(w.grad()[i]);
  EXPECT_GT(s, 0.0);
}

}  // namespace
}  // namespace crtrain
