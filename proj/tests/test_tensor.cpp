// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mogu/errors.hpp"
#include "mogu/tensor.hpp"

namespace mogu {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  const auto b = Tensor::matrix({{3, 4}, {5, 6}});
  const auto c = matmul(eye, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, OneByOne) { EXPECT_DOUBLE_EQ(matmul(Tensor::matrix({{2}}), Tensor::matrix({{3}})).item(), 6.0); }

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 7);
    const std::size_t m = trial == 0 ? 3 : dim(rng), k = trial == 0 ? 4 : dim(rng), n = trial == 0 ? 2 : dim(rng);
    const auto a = random_tensor({m, k}, rng, false);
    const auto b = random_tensor({k, n}, rng, false);
    const auto c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.0;
        for (std::size_t p = 0; p < k; ++p) ref += a.at(i, p) * b.at(p, j);
        EXPECT_NEAR(c.at(i, j), ref, 1e-12);
      }
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Sigmoid, KnownValues) {
  const auto s = sigmoid_map(Tensor::from({3}, {0.0, 40.0, 1.0}));
  EXPECT_DOUBLE_EQ(s.data()[0], 0.5);
  EXPECT_NEAR(s.data()[1], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[2], 0.7310585786, 1e-9);
}

TEST(Sigmoid, StrictlyInsideUnitIntervalForExtremeInputs) {
  const std::vector<double> xs{-1e300, -1000, -40, -37, 0, 37, 40, 1000, 1e300};
  const auto s = sigmoid_map(Tensor::from({xs.size()}, xs));
  for (double v : s.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Softmax, Examples) {
  const auto s = softmax_rows(Tensor::matrix({{0, 0, 0}, {5, 5, 5}, {1, 2, 3}}));
  EXPECT_DOUBLE_EQ(s.at(0, 0), 1.0 / 3.0);
  EXPECT_NEAR(s.at(1, 2), 1.0 / 3.0, 1e-15);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(s.at(2, j), std::exp(j + 1.0) / z, 1e-15);
  const auto two = softmax_rows(Tensor::matrix({{0, 0}}));
  EXPECT_DOUBLE_EQ(two.at(0, 0), 0.5);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + trial % 4, n = 1 + trial % 9;
    auto x = random_tensor({m, n}, rng, false, 5.0);
    auto shifted = x.detach();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) shifted.mutable_data()[i * n + j] += 100.0 * (static_cast<double>(i) - 1.5);
    const auto a = softmax_rows(x);
    const auto b = softmax_rows(shifted);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        total += a.at(i, j);
        EXPECT_NEAR(a.at(i, j), b.at(i, j), 1e-10);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  auto p = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  sum(p).backward();
  for (double g : p.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, Quadratic) {
  auto p = Tensor::from({2}, {1, 2}, true);
  sum(mul(p, p)).backward();
  EXPECT_DOUBLE_EQ(p.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 4.0);
}

TEST(Backward, RepeatedCallsAccumulateUntilCleared) {
  auto p = Tensor::from({2}, {1, 2}, true);
  const auto loss = sum(mul(p, p));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(p.grad()[1], 8.0);
  p.zero_grad();
  loss.backward();
  EXPECT_DOUBLE_EQ(p.grad()[1], 4.0);
}

TEST(Backward, NonScalarRootIsContractError) {
  auto p = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(mul(p, p).backward(), ContractError);
}

TEST(Backward, FrozenInputsRecordNoGraph) {
  const auto a = Tensor::from({2}, {1, 2});
  const auto c = mul(a, a);
  EXPECT_FALSE(c.requires_grad());
  EXPECT_TRUE(c.node()->parents.empty());
}

TEST(GradCheck, SumIsExact) {
  std::mt19937_64 rng(1);
  auto p = random_tensor({3, 4}, rng);
  const std::vector<NamedTensor> params{{"p", p}};
  const auto r = grad_check([&] { return sum(p); }, params);
  EXPECT_TRUE(r.finite);
  EXPECT_LT(r.max_rel_err, 1e-10);
  EXPECT_EQ(r.checked, 12u);
}

TEST(GradCheck, CompositeMatmulSigmoidSum) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  const std::vector<NamedTensor> params{{"a", a}, {"b", b}};
  const auto r = grad_check([&] { return sum(sigmoid_map(matmul(a, b))); }, params);
  EXPECT_LT(r.max_rel_err, 1e-5);
  EXPECT_EQ(r.per_param.size(), 2u);
}

TEST(GradCheck, NonFiniteLossIsReported) {
  auto p = Tensor::from({1}, {0.0}, true);
  const std::vector<NamedTensor> params{{"p", p}};
  const auto r = grad_check([&] { return divide(sum(p), sum(p)); }, params);
  EXPECT_FALSE(r.finite);
}

TEST(GradCheck, RejectsNonPositiveEps) {
  auto p = Tensor::from({1}, {1.0}, true);
  const std::vector<NamedTensor> params{{"p", p}};
  EXPECT_THROW(grad_check([&] { return sum(p); }, params, 0.0), ContractError);
}

// Every op, randomized shapes and seeds. Inputs stay away from the kinks of
// relu and abs so central differences are well defined.
TEST(GradCheck, EveryOpOnRandomShapes) {
  int cases = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    auto a = random_tensor({m, k}, rng);
    auto b = random_tensor({k, n}, rng);
    auto c = random_tensor({m, n}, rng);
    auto d = random_tensor({m, n}, rng);
    auto bias = random_tensor({n}, rng);
    auto w = random_tensor({m, 1}, rng);
    auto gamma = random_tensor({n}, rng);
    auto beta = random_tensor({n}, rng);
    auto kinkfree = random_tensor({m, n}, rng);
    for (auto& v : kinkfree.mutable_data()) v += v > 0 ? 0.1 : -0.1;
    const std::size_t heads = 2;
    auto q = random_tensor({m, 2 * heads}, rng);
    auto kk = random_tensor({m, 2 * heads}, rng);
    auto vv = random_tensor({m, 2 * heads}, rng);
    auto table = random_tensor({6, n}, rng);
    std::vector<int> ids;
    std::vector<int> targets;
    std::vector<bool> mask;
    for (std::size_t i = 0; i < m; ++i) {
      ids.push_back(static_cast<int>(rng() % 6));
      targets.push_back(static_cast<int>(rng() % n));
      mask.push_back(i == 0 || rng() % 2 == 0);
    }
    auto sq = [](const Tensor& t) { return sum(mul(t, t)); };

    const std::vector<std::pair<const char*, std::function<Tensor()>>> ops = {
        {"matmul", [&] { return sq(matmul(a, b)); }},
        {"add", [&] { return sq(add(c, d)); }},
        {"sub", [&] { return sq(sub(c, d)); }},
        {"mul", [&] { return sum(mul(c, d)); }},
        {"affine", [&] { return sq(affine(c, 0.7, -0.3)); }},
        {"scale", [&] { return sq(scale(c, -1.7)); }},
        {"add_row_bias", [&] { return sq(add_row_bias(c, bias)); }},
        {"mul_rowwise", [&] { return sq(mul_rowwise(w, c)); }},
        {"sigmoid", [&] { return sq(sigmoid_map(c)); }},
        {"relu", [&] { return sq(relu(kinkfree)); }},
        {"abs", [&] { return sq(abs_map(kinkfree)); }},
        {"softmax", [&] { return sum(mul(softmax_rows(c), d)); }},
        {"layer_norm", [&] { return sum(mul(layer_norm(c, gamma, beta), d)); }},
        {"attention", [&] { return sq(causal_attention(q, kk, vv, heads)); }},
        {"gather_rows", [&] { return sq(gather_rows(table, ids)); }},
        {"head_rows", [&] { return sq(head_rows(table, 3)); }},
        {"mean", [&] { return mean(mul(c, c)); }},
        {"divide", [&] { return divide(sq(c), affine(sq(d), 1.0, 1.0)); }},
        {"cross_entropy", [&] { return masked_cross_entropy(c, targets, mask); }},
    };
    const std::vector<NamedTensor> params{{"a", a},         {"b", b},       {"c", c},         {"d", d},
                                          {"bias", bias},   {"w", w},       {"gamma", gamma}, {"beta", beta},
                                          {"kinkfree", kinkfree}, {"q", q}, {"k", kk},        {"v", vv},
                                          {"table", table}};
    for (const auto& [name, fn] : ops) {
      const auto r = grad_check(fn, params);
      ASSERT_TRUE(r.finite) << name;
      EXPECT_LT(r.max_rel_err, 1e-5) << name << " seed " << seed;
      ++cases;
    }
  }
  EXPECT_GE(cases, 100);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  const auto logits = Tensor::zeros({3, 32});
  const std::vector<int> t{1, 5, 31};
  EXPECT_NEAR(masked_cross_entropy(logits, t, {true, true, true}).item(), std::log(32.0), 1e-12);
}

TEST(CrossEntropy, EmptyMaskAndBadTarget) {
  const auto logits = Tensor::zeros({2, 4});
  const std::vector<int> t{1, 2};
  EXPECT_THROW(masked_cross_entropy(logits, t, {false, false}), ContractError);
  const std::vector<int> bad{1, 9};
  EXPECT_THROW(masked_cross_entropy(logits, bad, {true, true}), InputError);
}

TEST(TensorBasics, ConstructorsKeepShapeAndData) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  const auto s = Tensor::scalar(2.5);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.item(), 2.5);
  const auto f = Tensor::filled({2, 3}, 7.0);
  EXPECT_EQ(f.rows(), 2u);
  EXPECT_EQ(f.cols(), 3u);
  EXPECT_DOUBLE_EQ(f.at(1, 2), 7.0);
  EXPECT_THROW(Tensor::zeros({2}).item(), ContractError);
}

TEST(TensorBasics, DetachSharesNoStorage) {
  auto a = Tensor::from({2}, {1, 2}, true);
  auto b = a.detach();
  b.mutable_data()[0] = 9;
  EXPECT_DOUBLE_EQ(a.data()[0], 1.0);
  EXPECT_FALSE(b.requires_grad());
}

}  // namespace
}  // namespace mogu
