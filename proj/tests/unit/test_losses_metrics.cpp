#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "masc/errors.hpp"
#include "masc/grad_check.hpp"
#include "masc/losses.hpp"
#include "masc/metrics.hpp"
#include "masc/model.hpp"
#include "oracles.hpp"

using namespace masc;

namespace {

PoseSequence offset(const PoseSequence& g, double dx, double dy, double dz) {
  PoseSequence p = g;
  for (std::size_t i = 0; i < p.data.size(); i += 3) {
    p.data[i] += dx;
    p.data[i + 1] += dy;
    p.data[i + 2] += dz;
  }
  return p;
}

double sq_error(const std::vector<double>& a, std::span<const double> g) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - g[i]) * (a[i] - g[i]);
  return s;
}

}  // namespace

TEST(Metrics, BasicExamples) {
  std::mt19937_64 rng(1);
  const auto g = oracle::random_pose(5, 17, rng);
  EXPECT_EQ(mpjpe(g, g), 0.0);
  EXPECT_NEAR(mpjpe(offset(g, 3, 0, 4), g), 5.0, 1e-12);
  EXPECT_EQ(velocity_error(offset(g, 3, 0, 4), g), 0.0);
  PoseSequence twice = g;
  for (double& v : twice.data) v *= 2.0;
  EXPECT_NEAR(n_mpjpe(twice, g), 0.0, 1e-9);
  EXPECT_THROW(mpjpe(g, oracle::random_pose(4, 17, rng)), DimensionError);
}

TEST(Metrics, LinearDriftHasNoAccelError) {
  std::mt19937_64 rng(2);
  auto g = oracle::random_pose(8, 17, rng);
  PoseSequence p = g;
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t j = 0; j < 17; ++j) p.at(t, j, 1) += 4.0 * static_cast<double>(t);
  EXPECT_NEAR(accel_error(p, g), 0.0, 1e-9);
  EXPECT_GT(velocity_error(p, g), 3.9);
}

TEST(Metrics, MatchLoopOracles) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_pose(7, 17, rng);
    const auto g = oracle::random_pose(7, 17, rng);
    EXPECT_NEAR(mpjpe(p, g), oracle::mpjpe(p, g), 1e-12);
    EXPECT_NEAR(n_mpjpe(p, g), oracle::n_mpjpe(p, g), 1e-12);
    EXPECT_NEAR(velocity_error(p, g), oracle::velocity(p, g), 1e-12);
    EXPECT_NEAR(accel_error(p, g), oracle::accel(p, g), 1e-12);
    const auto thr = default_auc_thresholds();
    const auto pa = pck_auc(p, g, thr);
    EXPECT_NEAR(pa.pck_pct, oracle::pck(p, g, 150.0), 1e-12);
    EXPECT_NEAR(pa.auc_pct, oracle::auc(p, g), 1e-12);
    EXPECT_LE(n_mpjpe(p, g), mpjpe(p, g) + 1e-9);
    EXPECT_LE(p_mpjpe(p, g), mpjpe(p, g) + 1e-9);
  }
}

TEST(Metrics, NMpjpeBeatsScaleGrid) {
  std::mt19937_64 rng(4);
  const auto p = oracle::random_pose(4, 17, rng);
  const auto g = oracle::random_pose(4, 17, rng);
  // The optimal scale minimizes squared error; compare sums of squares.
  auto sq = [&](double s) {
    double e = 0.0;
    for (std::size_t i = 0; i < p.data.size(); ++i) e += (s * p.data[i] - g.data[i]) * (s * p.data[i] - g.data[i]);
    return e;
  };
  double pp = 0.0, pg = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    pp += p.data[i] * p.data[i];
    pg += p.data[i] * g.data[i];
  }
  for (double s = -2.0; s <= 2.0; s += 0.01) EXPECT_LE(sq(pg / pp), sq(s) + 1e-6);
}

TEST(Metrics, NMpjpeZeroPredictionFallsBack) {
  std::mt19937_64 rng(5);
  const auto g = oracle::random_pose(3, 17, rng);
  PoseSequence zero(3, 17, 3);
  bool fallback = false;
  EXPECT_DOUBLE_EQ(n_mpjpe(zero, g, &fallback), mpjpe(zero, g));
  EXPECT_TRUE(fallback);
}

TEST(Metrics, PckAucExamples) {
  std::mt19937_64 rng(6);
  const auto g = oracle::random_pose(3, 17, rng);
  auto thr = default_auc_thresholds();
  ASSERT_EQ(thr.size(), 30u);
  const auto same = pck_auc(g, g, thr);
  EXPECT_EQ(same.pck_pct, 100.0);
  EXPECT_EQ(same.auc_pct, 100.0);
  // Every joint exactly 100 mm off: counted at levels 105..150, i.e. 10 of 30.
  const auto far = pck_auc(offset(g, 0, 100, 0), g, thr);
  EXPECT_EQ(far.pck_pct, 100.0);
  EXPECT_NEAR(far.auc_pct, 100.0 * 10.0 / 30.0, 1e-12);
  EXPECT_THROW(pck_auc(g, g, std::vector<double>{}), ParameterError);
  EXPECT_THROW(pck_auc(g, g, std::vector<double>{10, 5}), ParameterError);
}

TEST(Procrustes, IdentityAndInvariance) {
  std::mt19937_64 rng(7);
  const auto g = oracle::random_pose(1, 17, rng);
  const auto id = procrustes_align(g.data, g.data, 17);
  EXPECT_FALSE(id.degenerate);
  EXPECT_NEAR(id.scale, 1.0, 1e-12);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(id.rotation[3 * r + c], r == c ? 1.0 : 0.0, 1e-12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sim = oracle::random_similarity(rng);
    const auto p = oracle::apply(sim, g);
    EXPECT_NEAR(p_mpjpe(p, g), 0.0, 1e-9);
  }
}

TEST(Procrustes, OptimalAgainstRandomSimilarities) {
  std::mt19937_64 rng(8);
  for (int frame = 0; frame < 5; ++frame) {
    const auto p = oracle::random_pose(1, 17, rng);
    const auto g = oracle::random_pose(1, 17, rng);
    const auto res = procrustes_align(p.data, g.data, 17);
    const double best = sq_error(res.aligned, g.data);
    oracle::Similarity found{};
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) found.r[r][c] = res.rotation[3 * r + c];
      found.t[r] = res.translation[r];
    }
    found.s = res.scale;
    EXPECT_NEAR(oracle::frame_error(found, p.data.data(), g.data.data(), 17), best, 1e-6 * best);
    for (int i = 0; i < 1000; ++i) {
      auto sim = oracle::random_similarity(rng);
      std::normal_distribution<double> n(0.0, 100.0);
      for (double& t : sim.t) t = n(rng);
      EXPECT_GE(oracle::frame_error(sim, p.data.data(), g.data.data(), 17), best * (1.0 - 1e-12));
    }
  }
}

TEST(Procrustes, RejectsReflection) {
  std::mt19937_64 rng(9);
  const auto g = oracle::random_pose(1, 17, rng);
  PoseSequence mirrored = g;
  for (std::size_t i = 0; i < mirrored.data.size(); i += 3) mirrored.data[i] = -mirrored.data[i];
  const auto res = procrustes_align(mirrored.data, g.data, 17);
  const auto& r = res.rotation;
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  EXPECT_NEAR(det, 1.0, 1e-9);
}

TEST(Procrustes, CollinearFallsBack) {
  PoseSequence line(1, 17, 3), g(1, 17, 3);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-100, 100);
  for (std::size_t j = 0; j < 17; ++j) {
    line.at(0, j, 0) = static_cast<double>(j);
    for (std::size_t c = 0; c < 3; ++c) g.at(0, j, c) = u(rng);
  }
  std::size_t degenerate = 0;
  const double e = p_mpjpe(PoseSequence(1, 17, 3), g, &degenerate);
  EXPECT_EQ(degenerate, 1u);
  EXPECT_TRUE(std::isfinite(e));
  EXPECT_TRUE(procrustes_align(line.data, g.data, 17).degenerate);
}

TEST(Metrics, ReportJson) {
  std::mt19937_64 rng(11);
  const auto p = oracle::random_pose(4, 17, rng);
  const auto g = oracle::random_pose(4, 17, rng);
  const auto r = evaluate(p, g);
  EXPECT_LE(r.p_mpjpe_mm, r.mpjpe_mm + 1e-9);
  EXPECT_EQ(r.per_joint_mpjpe.size(), 17u);
  const auto j = metric_report_to_json(r);
  for (const char* k : {"mpjpe_mm", "p_mpjpe_mm", "pck_pct", "auc_pct", "per_joint_mpjpe"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Losses, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.lambda_s, 0.5);
  EXPECT_EQ(w.lambda_v, 20.0);
  EXPECT_EQ(w.lambda_d, 0.5);
}

TEST(Losses, MatchMetricsAndVanishAtTarget) {
  std::mt19937_64 rng(12);
  const auto p = oracle::random_pose(6, 17, rng);
  const auto g = oracle::random_pose(6, 17, rng);
  const Tensor tp = to_tensor(p), tg = to_tensor(g);
  const auto l = total_loss(tp, tg);
  EXPECT_NEAR(l.l_m, oracle::mpjpe(p, g), 1e-9);
  EXPECT_NEAR(l.l_s, oracle::n_mpjpe(p, g), 1e-9);
  EXPECT_NEAR(l.l_v, oracle::velocity(p, g), 1e-9);
  EXPECT_NEAR(l.l_d, oracle::accel(p, g), 1e-9);
  EXPECT_NEAR(l.total.item(), l.l_m + 0.5 * l.l_s + 20 * l.l_v + 0.5 * l.l_d, 1e-9);
  EXPECT_EQ(total_loss(tg, tg).total.item(), 0.0);
  EXPECT_GT(l.total.item(), 0.0);
}

TEST(Losses, ShortSequencesReturnZeroTemporalTerms) {
  std::mt19937_64 rng(13);
  const Tensor a = to_tensor(oracle::random_pose(1, 17, rng));
  const Tensor b = to_tensor(oracle::random_pose(1, 17, rng));
  EXPECT_EQ(velocity_loss(a, b).item(), 0.0);
  EXPECT_EQ(accel_consistency_loss(a, b).item(), 0.0);
}

TEST(Losses, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  const Tensor g = to_tensor(oracle::random_pose(5, 17, rng));
  Tensor p = Tensor::uniform({1, 5, 17, 3}, -500, 500, rng);
  p.set_requires_grad(true);
  GradCheckOptions opt;
  opt.samples = 0;
  opt.tolerance = 1e-4;
  const auto rep = check_gradients(
      [&](const std::vector<Tensor>& in) { return total_loss(in[0], reshape(g, {1, 5, 17, 3})).total; }, {p},
      {"pred"}, opt);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}
