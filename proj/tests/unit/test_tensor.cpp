#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "masc/errors.hpp"
#include "masc/grad_check.hpp"
#include "masc/mac_counter.hpp"
#include "masc/ops.hpp"

using namespace masc;

namespace {
std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
std::vector<double> vec_grad(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }
}  // namespace

TEST(Tensor, ShapeAndValues) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.ndim(), 2u);
  EXPECT_EQ(t.size(-1), 3u);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t[4], 5.0);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>{1.0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{0, 2}), DimensionError);
  EXPECT_THROW(t.size(2), AxisError);
}

TEST(Tensor, BroadcastAdd) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  const Tensor c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(c[3], 14.0);
  EXPECT_THROW(add(a, Tensor({2}, {1, 2})), DimensionError);
}

TEST(Tensor, BackwardAccumulatesIntoLeaves) {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  sum_all(mul(x, x)).backward();
  sum_all(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[2], 12.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Tensor, BackwardRejectsNonScalar) {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  EXPECT_THROW(relu(x).backward(), ContractError);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    EXPECT_TRUE(add(x, x).is_leaf());
  }
  EXPECT_FALSE(add(x, x).is_leaf());
}

TEST(Tensor, RecordedOutputsAreReadOnly) {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_values(), ContractError);
}

TEST(Tensor, SharedSubexpressionGradient) {
  // y = x*x + x, reused node x: dy/dx = 2x + 1
  Tensor x({1}, {3.0});
  x.set_requires_grad(true);
  sum_all(add(mul(x, x), x)).backward();
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, CheckFiniteNamesOp) {
  debug::set_check_finite(true);
  Tensor x({2}, {1.0, 0.0});
  try {
    div(Tensor({2}, {1.0, 1.0}), x);
    FAIL() << "expected NumericFault";
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("div"), std::string::npos);
  }
  debug::set_check_finite(false);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  const Tensor s = softmax(Tensor::uniform({4, 5}, -30, 30, rng), -1);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 5; ++c) total += s[r * 5 + c];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, NormLastZeroVectorHasZeroGradient) {
  Tensor x({1, 3}, {0, 0, 0});
  x.set_requires_grad(true);
  sum_all(norm_last(x)).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Ops, MatmulMatchesLoops) {
  std::mt19937_64 rng(5);
  const Tensor a = Tensor::uniform({2, 3, 4}, -1, 1, rng);
  const Tensor b = Tensor::uniform({2, 4, 5}, -1, 1, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += a[(g * 3 + i) * 4 + k] * b[(g * 4 + k) * 5 + j];
        EXPECT_NEAR(c[(g * 3 + i) * 5 + j], acc, 1e-14);
      }
}

TEST(Ops, MacCounterCountsGemm) {
  std::mt19937_64 rng(5);
  const Tensor a = Tensor::uniform({6, 4}, -1, 1, rng);
  const Tensor w = Tensor::uniform({4, 3}, -1, 1, rng);
  macs::ScopedCounter counter;
  matmul(a, w);
  EXPECT_EQ(counter.count(), 6u * 4u * 3u);
}

TEST(Ops, TopkTiesGoToLowerIndex) {
  const Tensor s({1, 4, 4}, {1, 1, 1, 1, 0, 0, 0, 0, 2, 1, 2, 0, 0, 0, 0, 1});
  const Tensor m = topk_mask(s, 2);
  const std::vector<double> expected = {1, 1, 0, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m[i], expected[i]) << i;
  EXPECT_THROW(topk_mask(s, 5), ParameterError);
}

TEST(Ops, CosineDiagonalIsOne) {
  std::mt19937_64 rng(1);
  const Tensor c = cosine_similarity_matrix(Tensor::uniform({3, 6, 4}, -1, 1, rng));
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(c[(g * 6 + i) * 6 + i], 1.0, 1e-14);
}

TEST(Ops, SparseAggregateMatchesDense) {
  std::mt19937_64 rng(2);
  std::vector<double> dense = {0, 0.5, 0, 0.25, 0, 1, 2, 0, 0};
  const SparseMatrix a = SparseMatrix::from_dense(3, 3, dense);
  EXPECT_EQ(a.nnz(), 4u);
  EXPECT_EQ(a.to_dense(), dense);
  const Tensor x = Tensor::uniform({2, 3, 2}, -1, 1, rng);
  const Tensor y = sparse_aggregate(x, std::span<const SparseMatrix>(&a, 1));
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t f = 0; f < 2; ++f) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) acc += dense[i * 3 + k] * x[(g * 3 + k) * 2 + f];
        EXPECT_NEAR(y[(g * 3 + i) * 2 + f], acc, 1e-15);
      }
}

TEST(Ops, BatchNormUpdatesRunningStats) {
  Tensor x({4, 1}, {1, 2, 3, 4});
  std::vector<double> rm = {0.0};
  std::vector<double> rv = {1.0};
  const Tensor y = batch_norm(x, Tensor::ones({1}), Tensor::zeros({1}), rm, rv, {});
  EXPECT_NEAR(rm[0], 0.25, 1e-15);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-15);
  double mean = 0.0;
  for (double v : y.values()) mean += v;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  BatchNormOptions eval;
  eval.training = false;
  const Tensor z = batch_norm(x, Tensor::ones({1}), Tensor::zeros({1}), rm, rv, eval);
  EXPECT_NEAR(z[0], (1.0 - 0.25) / std::sqrt(rv[0] + 1e-5), 1e-14);
}

TEST(Ops, HandExamples) {
  const Tensor r = relu(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(vec(r), (std::vector<double>{0, 0, 2}));
  const Tensor s = softmax(Tensor({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_DOUBLE_EQ(mean_all(Tensor({4}, {1, 2, 3, 4}))[0], 2.5);
  const Tensor m = mean(Tensor({2, 2}, {1, 2, 3, 4}), 0);
  EXPECT_EQ(vec(m), (std::vector<double>{2, 3}));
  EXPECT_THROW(mean(Tensor({2}, {1, 2}), 3), AxisError);
}

TEST(Ops, MatmulHandExamples) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor x({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vec(matmul(eye, x)), vec(x));
  EXPECT_EQ(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}))[0], 11.0);
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Ops, SquareGradientByHand) {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  sum_all(mul(x, x)).backward();
  EXPECT_EQ(vec_grad(x), (std::vector<double>{2, 4}));
}

TEST(Ops, BatchNormConstantInputAndEps) {
  Tensor x({5, 2}, {3, -1, 3, -1, 3, -1, 3, -1, 3, -1});
  std::vector<double> rm(2, 0.0), rv(2, 1.0);
  const Tensor y = batch_norm(x, Tensor::ones({2}), Tensor::zeros({2}), rm, rv, {});
  for (double v : y.values()) EXPECT_EQ(v, 0.0);

  std::mt19937_64 rng(4);
  std::vector<double> rm3(3, 0.0), rv3(3, 1.0);
  const Tensor z = batch_norm(Tensor::uniform({64, 3}, -5, 9, rng), Tensor::ones({3}), Tensor::zeros({3}), rm3, rv3, {});
  for (std::size_t f = 0; f < 3; ++f) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 64; ++i) mu += z[i * 3 + f];
    mu /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += (z[i * 3 + f] - mu) * (z[i * 3 + f] - mu);
    var /= 64;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
  BatchNormOptions bad;
  bad.eps = 0.0;
  EXPECT_THROW(batch_norm(x, Tensor::ones({2}), Tensor::zeros({2}), rm, rv, bad), ParameterError);
}

TEST(Ops, CosineMatchesLoopOracle) {
  const Tensor small = cosine_similarity_matrix(Tensor({2, 2}, {1, 0, 0, 1}));
  EXPECT_NEAR(small[1], 0.0, 1e-15);
  EXPECT_NEAR(small[0], 1.0, 1e-15);

  std::mt19937_64 rng(8);
  Tensor h = Tensor::uniform({7, 5}, -1, 1, rng);
  for (std::size_t d = 0; d < 5; ++d) h.mutable_values()[3 * 5 + d] = 0.0;
  const Tensor c = cosine_similarity_matrix(h);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      double dot = 0.0, ni = 0.0, nj = 0.0;
      for (std::size_t d = 0; d < 5; ++d) {
        dot += h[i * 5 + d] * h[j * 5 + d];
        ni += h[i * 5 + d] * h[i * 5 + d];
        nj += h[j * 5 + d] * h[j * 5 + d];
      }
      const double expected = dot / (std::max(std::sqrt(ni), kCosineNormFloor) * std::max(std::sqrt(nj), kCosineNormFloor));
      EXPECT_NEAR(c[i * 7 + j], expected, 1e-12);
      EXPECT_TRUE(std::isfinite(c[i * 7 + j]));
    }
}

TEST(Ops, TopkMatchesSortOracle) {
  const Tensor one = topk_mask(Tensor({1, 3, 3}, {0.9, 0.1, 0.5, 0, 0, 0, 0, 0, 0}), 2);
  EXPECT_EQ(one[0], 1.0);
  EXPECT_EQ(one[1], 0.0);
  EXPECT_EQ(one[2], 1.0);

  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> coarse(0, 3);
  const std::size_t w = 6;
  std::vector<double> vals(w * w);
  for (double& v : vals) v = coarse(rng) * 0.25;
  const Tensor s({1, w, w}, vals);
  for (std::size_t k = 1; k <= w; ++k) {
    const Tensor m = topk_mask(s, k);
    EXPECT_EQ(vec(topk_mask(s, k)), vec(m));
    for (std::size_t i = 0; i < w; ++i) {
      std::vector<std::size_t> idx(w);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[i * w + a] > vals[i * w + b]; });
      std::vector<double> expected(w, 0.0);
      for (std::size_t t = 0; t < k; ++t) expected[idx[t]] = 1.0;
      for (std::size_t j = 0; j < w; ++j) EXPECT_EQ(m[i * w + j], expected[j]) << "k " << k << " row " << i;
    }
  }
  EXPECT_THROW(topk_mask(s, 0), ParameterError);
}

TEST(GradCheck, EveryOpPassesAcrossSeeds) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& r : op_gradient_suite(seed, 1e-4)) {
      EXPECT_TRUE(r.report.passed) << r.op << " seed " << seed << " rel " << r.report.max_rel_error;
    }
  }
}

TEST(GradCheck, CorruptedBackwardIsCaught) {
  debug::set_backward_fault("matmul", 1.5);
  bool any_failed = false;
  for (const auto& r : op_gradient_suite(1, 1e-4)) {
    if (r.op == "matmul") {
      EXPECT_FALSE(r.report.passed);
    }
    any_failed = any_failed || !r.report.passed;
  }
  debug::clear_backward_faults();
  EXPECT_TRUE(any_failed);
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(grad_rel_error(1.0, 1.0, 5.0), 0.0);
  EXPECT_DOUBLE_EQ(grad_rel_error(0.0, 1e-9, 1.0), 1e-3);
  EXPECT_DOUBLE_EQ(grad_rel_error(2.0, 1.0, 1.0), 0.5);
}

TEST(GradCheck, StencilCrossingReluKinkIsRefined) {
  // Entry 0 sits 3e-6 below the kink, inside the default 1e-5 stencil.
  Tensor x({3}, std::vector<double>{-3e-6, 0.4, -0.7});
  GradCheckOptions opt;
  opt.samples = 0;
  opt.tolerance = 1e-6;
  const auto rep = check_gradients([](const std::vector<Tensor>& in) { return sum_all(mul(relu(in[0]), in[0])); },
                                   {x}, {"x"}, opt);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
  EXPECT_LT(rep.entries[0].step, opt.step);
  EXPECT_EQ(rep.entries[1].step, opt.step);
}

TEST(GradCheck, KinkProbeSeesBranchChanges) {
  auto fingerprint = [](double v) {
    debug::KinkProbe probe;
    NoGradGuard ng;
    relu(Tensor({2}, std::vector<double>{v, 1.0}));
    return probe.fingerprint();
  };
  EXPECT_EQ(fingerprint(0.5), fingerprint(0.7));
  EXPECT_NE(fingerprint(0.5), fingerprint(-0.5));
  EXPECT_FALSE(debug::KinkProbe::active());
}
