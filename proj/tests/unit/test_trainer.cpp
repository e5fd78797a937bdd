#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "masc/checkpoint.hpp"
#include "masc/errors.hpp"
#include "masc/optimizer.hpp"
#include "masc/pose_io.hpp"
#include "masc/trainer.hpp"

using namespace masc;
namespace fs = std::filesystem;

namespace {

ModelConfig toy() {
  ModelConfig c;
  c.num_layers = 2;
  c.dim = 16;
  c.seq_len = 27;
  c.temporal_scales = {3, 9, 27};
  c.topk = 2;
  return c;
}

Dataset toy_data(int count = 2, const std::string& kind = "gait_cycle") {
  const auto j = nlohmann::json{{"name", "toy"},
                                {"seed", 7},
                                {"sequences",
                                 {{{"motion", {{"kind", kind}, {"frames", 27}, {"period_frames", 9}}},
                                   {"seed", 1},
                                   {"count", count}},
                                  {{"motion", {{"kind", kind}, {"frames", 27}}}, {"split", "eval"}}}}};
  const auto m = manifest_from_json(j);
  return make_dataset(m, generate_dataset(m));
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("masc_trainer_" + name);
  fs::remove_all(p);
  return p;
}

Tensor scalar_param(double v) {
  Tensor t({1}, std::vector<double>{v});
  t.set_requires_grad(true);
  return t;
}

void set_grad(Tensor& p, double g) {
  p.zero_grad();
  sum_all(scale(p, g)).backward();
}

}  // namespace

TEST(AdamW, HandRecurrence) {
  Tensor p = scalar_param(1.0);
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.0;
  AdamW opt({{"p", p}}, o);
  const double expected[] = {0.900000002, 0.9366103542405654, 0.8946447927181046};
  const double grads[] = {0.5, -1.0, 2.0};
  for (int i = 0; i < 3; ++i) {
    set_grad(p, grads[i]);
    opt.step();
    EXPECT_NEAR(p[0], expected[i], 1e-15);
  }
  EXPECT_EQ(opt.step_count(), 3u);
}

TEST(AdamW, ZeroGradZeroDecayIsNoOp) {
  Tensor p = scalar_param(0.7);
  AdamOptions o;
  o.weight_decay = 0.0;
  AdamW opt({{"p", p}}, o);
  for (int i = 0; i < 5; ++i) {
    set_grad(p, 0.0);
    opt.step();
  }
  EXPECT_EQ(p[0], 0.7);
}

TEST(AdamW, DecoupledDecayShrinks) {
  Tensor p = scalar_param(2.0);
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 1.0;
  AdamW opt({{"p", p}}, o);
  double expect = 2.0;
  for (int i = 0; i < 4; ++i) {
    set_grad(p, 0.0);
    opt.step();
    expect *= 0.9;
    EXPECT_NEAR(p[0], expect, 1e-15);
  }
}

TEST(AdamW, ZeroDecayEqualsPlainAdamBitwise) {
  std::mt19937_64 rng(3);
  Tensor w = Tensor::uniform({4, 3}, -1, 1, rng).set_requires_grad(true);
  const Tensor x = Tensor::uniform({5, 4}, -1, 1, rng);
  AdamOptions o;
  o.weight_decay = 0.0;
  AdamW opt({{"w", w}}, o);
  std::vector<double> ref(w.values().begin(), w.values().end()), m(12, 0.0), v(12, 0.0);
  for (std::uint64_t step = 1; step <= 10; ++step) {
    opt.zero_grad();
    sum_all(mul(matmul(x, w), matmul(x, w))).backward();
    std::vector<double> g(w.grad().begin(), w.grad().end());
    opt.step();
    adam_update(ref, g, m, v, step, o);
    for (std::size_t i = 0; i < 12; ++i) ASSERT_EQ(w[i], ref[i]) << step;
  }
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  Tensor a = scalar_param(1.0), b = scalar_param(2.0);
  AdamW opt({{"alpha", a}, {"beta", b}}, AdamOptions{});
  sum_all(scale(b, std::numeric_limits<double>::quiet_NaN())).backward();
  try {
    opt.step();
    FAIL();
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos) << e.what();
  }
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(b[0], 2.0);
}

TEST(TrainConfig, JsonAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.lr, 5e-4);
  EXPECT_EQ(c.epochs, 80);
  EXPECT_EQ(c.batch_size, 6);
  c.seed = 12;
  c.lr_decay = 0.5;
  const auto back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(back.lr_decay, 0.5);
  auto j = train_config_to_json(c);
  j["momentum"] = 0.9;
  EXPECT_THROW(train_config_from_json(j), ConfigError);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  const auto dir = scratch("zero");
  PoseLifter m(toy(), default_h36m_topology(), 4);
  const auto init = encode_checkpoint(m);
  TrainConfig c;
  c.epochs = 0;
  const auto r = train(m, c, toy_data(), {}, dir);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(read_file_bytes(dir / "model.ckpt"), init);
}

TEST(Train, DeterministicAndLogged) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.seed = 9;
  const auto data = toy_data(3);
  const auto da = scratch("det_a"), db = scratch("det_b");
  PoseLifter a(toy(), default_h36m_topology(), 1), b(toy(), default_h36m_topology(), 1);
  const auto ra = train(a, c, data, {}, da);
  train(b, c, data, {}, db);
  EXPECT_EQ(ra.steps, 4u);
  EXPECT_EQ(read_file_bytes(da / "model.ckpt"), read_file_bytes(db / "model.ckpt"));
  EXPECT_EQ(read_file_bytes(da / "train_log.jsonl"), read_file_bytes(db / "train_log.jsonl"));
  std::ifstream log(da / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "epoch", "L_m", "L_s", "L_v", "L_d", "total", "mpjpe_eval"})
      EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(j["mpjpe_eval"].is_number());
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST(Train, MovingAverageTrendOnSingleSequence) {
  ModelConfig mc = toy();
  PoseLifter m(mc, default_h36m_topology(), 0);
  TrainConfig c;
  c.epochs = 300;
  c.batch_size = 1;
  c.eval_every = 0;
  std::vector<double> losses;
  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo& s, PoseLifter&) { losses.push_back(s.loss.total.item()); };
  auto data = toy_data(1);
  data.eval.clear();
  train(m, c, data, hooks);
  ASSERT_EQ(losses.size(), 300u);
  std::vector<double> ma;
  for (std::size_t i = 19; i < losses.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = i - 19; k <= i; ++k) s += losses[k];
    ma.push_back(s / 20.0);
  }
  std::size_t checked = 0, violations = 0;
  for (std::size_t i = 50; i + 1 < ma.size(); ++i) {
    ++checked;
    if (ma[i + 1] > ma[i]) ++violations;
  }
  EXPECT_LE(static_cast<double>(violations), 0.05 * static_cast<double>(checked))
      << violations << " of " << checked;
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Ablation, VariantsAndFlags) {
  EXPECT_EQ(std::size(kAblationVariants), 6u);
  EXPECT_THROW(ablation_flags("no_such_variant"), ConfigError);
  const auto base = ablation_flags("baseline");
  EXPECT_FALSE(base.use_amtm);
  EXPECT_FALSE(base.use_sagcn);
  EXPECT_FALSE(ablation_flags("no_adaptive_agg").adaptive_aggregation);
  EXPECT_FALSE(ablation_flags("no_multiscale_fusion").multiscale_fusion);
  EXPECT_EQ(ablation_flags("full"), AblationFlags{});
}

TEST(Ablation, RunProducesTable) {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  const auto data = toy_data();
  std::vector<AblationResult> rows;
  for (const char* v : {"baseline", "full"}) rows.push_back(run_ablation(v, toy(), c, data));
  EXPECT_LT(rows[0].params, rows[1].params);
  EXPECT_LT(rows[0].macs_per_frame, rows[1].macs_per_frame);
  const auto table = ablation_table(rows);
  EXPECT_NE(table.find("baseline"), std::string::npos);
  EXPECT_EQ(ablation_results_to_json(rows).size(), 2u);
}

TEST(GateProfile, UntrainedIsUniform) {
  PoseLifter m(toy(), default_h36m_topology(), 2);
  const auto rows = gate_profile(m, toy_data().eval);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    ASSERT_EQ(r.weights.size(), 3u);
    double sum = 0.0;
    for (double w : r.weights) {
      EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  const auto csv = gate_profile_csv(rows);
  EXPECT_EQ(csv.rfind("group,w_short,w_med,w_long\n", 0), 0u);
}

TEST(GateProfile, FixedAggregationReportsExactThirds) {
  ModelConfig mc = toy();
  mc.flags.adaptive_aggregation = false;
  PoseLifter m(mc, default_h36m_topology(), 2);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  train(m, c, toy_data());
  for (const auto& r : gate_profile(m, toy_data().eval))
    for (double w : r.weights) EXPECT_EQ(w, 1.0 / 3.0);
}

TEST(GateProfile, NoAmtmIsRejected) {
  ModelConfig mc = toy();
  mc.flags.use_amtm = false;
  PoseLifter m(mc, default_h36m_topology(), 2);
  EXPECT_THROW(gate_profile(m, toy_data().eval), ConfigError);
}
