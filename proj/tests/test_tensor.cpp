// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "grad_cases.hpp"
#include "occlm/errors.hpp"
#include "occlm/tensor.hpp"
#include "support.hpp"

namespace occlm {
namespace {

using testing::random_tensor;

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor x = Tensor::from({2, 2}, {0.5f, -2.0f, 3.25f, 7.0f});
  EXPECT_EQ(values(matmul(eye, x)), values(x));
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(values(c), (std::vector<float>{3, 7}));
}

TEST(Matmul, TransposeBMatchesExplicitTranspose) {
  Rng rng(3);
  Tensor a = random_tensor({2, 3, 4}, rng, 1.0, false);
  Tensor b = random_tensor({5, 4}, rng, 1.0, false);
  const auto direct = values(matmul(a, b, true));
  const auto explicit_t = values(matmul(a, transpose(b, 0, 1)));
  ASSERT_EQ(direct.size(), explicit_t.size());
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(direct[i], explicit_t[i], 1e-5);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
}

TEST(Softmax, SymmetricInputIsUniform) {
  const auto y = values(softmax_lastdim(Tensor::from({3}, {0, 0, 0})));
  for (float v : y) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto y = values(softmax_lastdim(Tensor::from({2}, {1000, 0})));
  EXPECT_FLOAT_EQ(y[0], 1.0f);
  EXPECT_NEAR(y[1], 0.0f, 1e-30);
}

TEST(Softmax, RowsSumToOneForBoundedInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> v(4 * 9);
    const double range = std::pow(10.0, static_cast<double>(trial % 5));  // 1 .. 1e4
    for (float& x : v) x = static_cast<float>((2.0 * rng.uniform() - 1.0) * range);
    const auto y = values(softmax_lastdim(Tensor::from({4, 9}, v)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) s += y[r * 9 + c];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(CrossEntropy, CertainTargetHasZeroLoss) {
  Tensor logits = Tensor::from({1, 1, 3}, {0, 200, 0});
  const std::vector<TokenId> targets{1};
  const std::vector<std::uint8_t> ignore{0};
  EXPECT_NEAR(cross_entropy(logits, targets, ignore).item(), 0.0, 1e-7);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Tensor logits = Tensor::zeros({1, 2, 7});
  const std::vector<TokenId> targets{3, 6};
  const std::vector<std::uint8_t> ignore{0, 0};
  EXPECT_NEAR(cross_entropy(logits, targets, ignore).item(), std::log(7.0), 1e-6);
}

TEST(CrossEntropy, MatchesPerPositionSummation) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = random_tensor({2, 3, 5}, rng, 2.0, false);
    std::vector<TokenId> targets(6);
    for (TokenId& t : targets) t = static_cast<TokenId>(rng.below(5));
    const std::vector<std::uint8_t> ignore(6, 0);
    double expected = 0.0;
    const auto d = logits.data();
    for (std::size_t pos = 0; pos < 6; ++pos) {
      double z = 0.0;
      for (std::size_t v = 0; v < 5; ++v) z += std::exp(static_cast<double>(d[pos * 5 + v]));
      expected += -std::log(std::exp(static_cast<double>(d[pos * 5 + targets[pos]])) / z);
    }
    expected /= 6.0;
    EXPECT_NEAR(cross_entropy(logits, targets, ignore).item(), expected, 1e-5);
  }
}

TEST(CrossEntropy, IgnoredPositionsDoNotCount) {
  Tensor logits = Tensor::from({1, 2, 2}, {5, 0, 0, 0});
  const std::vector<TokenId> targets{1, 0};
  const std::vector<std::uint8_t> ignore{1, 0};
  EXPECT_NEAR(cross_entropy(logits, targets, ignore).item(), std::log(2.0), 1e-6);
}

TEST(CrossEntropy, AllIgnoredIsDataError) {
  Tensor logits = Tensor::zeros({1, 1, 2});
  const std::vector<TokenId> targets{0};
  const std::vector<std::uint8_t> ignore{1};
  EXPECT_THROW(cross_entropy(logits, targets, ignore), DataError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({4}, {1, -2, 3, 0.5f}, true);
  sum(x).backward();
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{1, 1, 1, 1}));
}

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{2, 4, 6}));
}

TEST(Backward, LeafGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  sum(x).backward();
  sum(x).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  x.zero_grad();
  sum(x).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 1.0f);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(scale(x, 2.0f).backward(), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(sum(x).requires_grad());
}

TEST(ComputationTape, InputsPrecedeEntriesAndEachNodeOnce) {
  Rng rng(2);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  Tensor shared = mul(a, b);  // used twice below
  Tensor root = sum(add(matmul(shared, a), shared));
  const ComputationTape tape = ComputationTape::record(root);
  std::set<const detail::Node*> seen;
  for (const detail::Node* n : tape.entries()) {
    for (const auto& in : n->inputs) {
      if (in->requires_grad) {
        EXPECT_TRUE(seen.count(in.get())) << n->op << " before its input";
      }
    }
    EXPECT_TRUE(seen.insert(n).second) << "node visited twice";
  }
  EXPECT_EQ(tape.size(), 6u);  // a, b, mul, matmul, add, sum
  root.backward();
  // A rebuilt graph must give the same accumulated gradient.
  Tensor a2 = a.clone(true);
  Tensor b2 = b.clone(true);
  Tensor s2 = mul(a2, b2);
  sum(add(matmul(s2, a2), s2)).backward();
  for (std::size_t i = 0; i < 9; ++i) EXPECT_FLOAT_EQ(a.grad()[i], a2.grad()[i]);
}

TEST(Dropout, ZeroProbabilityIsIdentity) {
  Rng rng(1);
  Tensor x = random_tensor({10, 10}, rng, 1.0, false);
  EXPECT_EQ(values(dropout(x, 0.0f, true, rng)), values(x));
}

TEST(Dropout, EvaluationModeIsIdentity) {
  Rng rng(1);
  Tensor x = random_tensor({10, 10}, rng, 1.0, false);
  EXPECT_EQ(values(dropout(x, 0.7f, false, rng)), values(x));
}

TEST(Dropout, KeptFractionIsBinomial) {
  const std::size_t n = 100000;
  for (float p : {0.1f, 0.3f, 0.5f}) {
    Rng rng(99);
    const auto y = values(dropout(Tensor::full({n}, 1.0f), p, true, rng));
    std::size_t kept = 0;
    for (float v : y) {
      if (v != 0.0f) {
        ++kept;
        EXPECT_NEAR(v, 1.0f / (1.0f - p), 1e-6);
      }
    }
    const double mu = n * (1.0 - p);
    const double sigma = std::sqrt(n * p * (1.0 - p));
    EXPECT_LE(std::abs(static_cast<double>(kept) - mu), 3.0 * sigma) << "p=" << p;
  }
}

TEST(Dropout, ProbabilityOneIsConfigError) {
  Rng rng(1);
  EXPECT_THROW(dropout(Tensor::zeros({2}), 1.0f, true, rng), ConfigError);
}

TEST(Determinism, SameSeedSameOutputs) {
  auto run = [] {
    Rng rng(42);
    Tensor x = random_tensor({4, 8}, rng);
    Tensor w = random_tensor({8, 8}, rng);
    Tensor g = Tensor::full({8}, 1.0f, true);
    Tensor b = Tensor::zeros({8}, true);
    Tensor y = dropout(gelu(layer_norm(matmul(x, w), g, b)), 0.2f, true, rng);
    sum(softmax_lastdim(y)).backward();
    std::vector<float> out = values(y);
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
}

TEST(NonFinite, OverflowSurfacesAsNumericError) {
  Tensor x = Tensor::from({2}, {3e38f, 3e38f});
  EXPECT_THROW(add(x, x), NumericError);
  EXPECT_THROW(Tensor::from({1}, {std::numeric_limits<float>::quiet_NaN()}), NumericError);
}

TEST(Shapes, BroadcastMismatchIsDimensionError) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), DimensionError);
}

TEST(Embedding, OutOfRangeIdIsIndexError) {
  TokenGrid ids(1, 1, 9);
  EXPECT_THROW(embedding_lookup(Tensor::zeros({4, 2}), ids), IndexError);
}

TEST(CausalMask, FillsStrictUpperTriangle) {
  const auto y = values(causal_mask_fill(Tensor::zeros({3, 3})));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[i * 3 + j], j > i ? kMaskedScore : 0.0f);
  }
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferencesOverTenSeeds) {
  const auto cases = testing::op_grad_cases();
  const auto& c = cases.at(GetParam());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = c.run(seed);
    EXPECT_LT(r.max_error(), 1e-3) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, testing::op_grad_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::op_grad_cases().at(info.param).name;
                         });

}  // namespace
}  // namespace occlm
