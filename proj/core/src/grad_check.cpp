#include "masc/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "masc/errors.hpp"
#include "masc/losses.hpp"
#include "masc/ops.hpp"

namespace masc {

double grad_rel_error(double analytic, double numeric, double loss) {
  const double floor = 1e-6 * std::max(1.0, std::abs(loss));
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Target {
  std::size_t tensor;
  std::size_t index;
};

std::vector<Target> pick_targets(const std::vector<Tensor>& tensors, std::size_t samples, std::mt19937_64& rng) {
  std::vector<Target> out;
  if (samples == 0) {
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      for (std::size_t i = 0; i < tensors[t].numel(); ++i) out.push_back({t, i});
    }
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick_tensor(0, tensors.size() - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t t = pick_tensor(rng);
    std::uniform_int_distribution<std::size_t> pick_entry(0, tensors[t].numel() - 1);
    out.push_back({t, pick_entry(rng)});
  }
  return out;
}

GradCheckReport run_check(const std::function<double()>& eval_no_grad, std::vector<Tensor>& tensors,
                          const std::vector<std::string>& names, const std::vector<std::vector<double>>& analytic,
                          double loss, const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  report.loss = loss;
  struct Probe {
    double value;
    std::uint64_t pattern;
  };
  auto probe = [&] {
    debug::KinkProbe kinks;
    const double v = eval_no_grad();
    return Probe{v, kinks.fingerprint()};
  };
  const Probe centre = probe();
  for (const Target& target : pick_targets(tensors, options.samples, rng)) {
    auto values = tensors[target.tensor].mutable_values();
    const double original = values[target.index];
    GradCheckEntry e;
    e.name = names[target.tensor];
    e.index = target.index;
    e.analytic = analytic[target.tensor].empty() ? 0.0 : analytic[target.tensor][target.index];
    double h = options.step;
    for (std::size_t attempt = 0;; ++attempt) {
      values[target.index] = original + h;
      const Probe plus = probe();
      values[target.index] = original - h;
      const Probe minus = probe();
      values[target.index] = original;
      const bool plus_smooth = plus.pattern == centre.pattern;
      const bool minus_smooth = minus.pattern == centre.pattern;
      e.step = h;
      e.numeric = (plus.value - minus.value) / (2.0 * h);
      e.stencil = GradCheckEntry::Stencil::kCentral;
      if (plus_smooth && minus_smooth) break;
      // A kink lies inside [x - h, x + h]: shrink the step, and once out of
      // retries use the one-sided difference on the side without one.
      if (attempt < options.kink_retries) {
        h /= 10.0;
        continue;
      }
      if (plus_smooth) {
        e.numeric = (plus.value - centre.value) / h;
        e.stencil = GradCheckEntry::Stencil::kForward;
      } else if (minus_smooth) {
        e.numeric = (centre.value - minus.value) / h;
        e.stencil = GradCheckEntry::Stencil::kBackward;
      } else {
        e.stencil = GradCheckEntry::Stencil::kStraddled;
      }
      break;
    }
    e.rel_error = grad_rel_error(e.analytic, e.numeric, loss);
    // NaN compares false, so it always becomes the worst entry.
    if (report.entries.empty() || !(e.rel_error <= report.max_rel_error)) {
      report.max_rel_error = e.rel_error;
      report.worst = e;
    }
    report.entries.push_back(e);
  }
  report.passed = !report.entries.empty() && report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> inputs, const std::vector<std::string>& names,
                                const GradCheckOptions& options) {
  if (names.size() != inputs.size()) throw ParameterError("check_gradients: one name per input is required");
  for (auto& t : inputs) {
    if (!t.is_leaf()) throw ContractError("check_gradients: inputs must be leaf tensors");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor loss = fn(inputs);
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  auto eval = [&] {
    NoGradGuard no_grad;
    return fn(inputs).item();
  };
  return run_check(eval, inputs, names, analytic, loss.item(), options);
}

GradCheckReport check_model_gradients(const ModelConfig& cfg, const SkeletonTopology& topo,
                                      const GradCheckOptions& options) {
  PoseLifter model(cfg, topo, options.seed);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ull);
  auto& params = model.parameters().params();
  for (auto& [name, t] : params) {
    for (double& v : t.mutable_values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  }
  const auto t_len = static_cast<std::size_t>(cfg.seq_len);
  const auto j = static_cast<std::size_t>(cfg.num_joints);
  const Tensor input = Tensor::uniform({1, t_len, j, static_cast<std::size_t>(cfg.in_channels)}, -1.0, 1.0, rng);
  const Tensor target = Tensor::uniform({1, t_len, j, static_cast<std::size_t>(cfg.out_channels)}, -500.0, 500.0, rng);

  RoutingTape tape;
  auto run = [&](RoutingTape::Mode mode) {
    tape.mode = mode;
    ForwardContext ctx;
    ctx.training = true;
    ctx.update_bn_stats = false;
    ctx.routing = &tape;
    return total_loss(model.forward(input, ctx), target).total;
  };

  model.parameters().zero_grad();
  const Tensor loss = run(RoutingTape::Mode::kRecord);
  loss.backward();
  std::vector<Tensor> tensors;
  std::vector<std::string> names;
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : params) {
    tensors.push_back(t);
    names.push_back(name);
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }
  auto eval = [&] {
    NoGradGuard no_grad;
    return run(RoutingTape::Mode::kReplay).item();
  };
  return run_check(eval, tensors, names, analytic, loss.item(), options);
}

std::vector<OpCheckResult> op_gradient_suite(std::uint64_t seed, double tolerance) {
  std::mt19937_64 rng(seed);
  GradCheckOptions opt;
  opt.samples = 0;
  opt.tolerance = tolerance;
  opt.seed = seed;
  auto uni = [&](Shape s, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(std::move(s), lo, hi, rng); };
  // Values bounded away from zero, with random signs, for kinks and divisions.
  auto away = [&](Shape s) {
    Tensor t = uni(std::move(s), 0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (double& v : t.mutable_values()) v = sign(rng) ? v : -v;
    return t;
  };
  // Random projection turns any output into a scalar with a generic gradient.
  auto weigh = [&](const Tensor& y, const Tensor& r) { return sum_all(mul(y, r)); };

  std::vector<OpCheckResult> out;
  auto check = [&](const std::string& op, const Shape& out_shape, std::vector<Tensor> inputs,
                   const std::function<Tensor(const std::vector<Tensor>&)>& f) {
    const Tensor r = uni(out_shape);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < inputs.size(); ++i) names.push_back(op + ".in" + std::to_string(i));
    out.push_back({op, check_gradients([&](const std::vector<Tensor>& in) { return weigh(f(in), r); },
                                       std::move(inputs), names, opt)});
  };

  check("add", {2, 3, 4}, {uni({2, 3, 4}), uni({3, 1})}, [](const auto& in) { return add(in[0], in[1]); });
  check("sub", {2, 3, 4}, {uni({2, 1, 4}), uni({3, 4})}, [](const auto& in) { return sub(in[0], in[1]); });
  check("mul", {2, 3, 4}, {uni({2, 3, 4}), uni({4})}, [](const auto& in) { return mul(in[0], in[1]); });
  check("div", {2, 3, 4}, {uni({2, 3, 4}), away({2, 1, 4})}, [](const auto& in) { return div(in[0], in[1]); });
  check("scale", {3, 5}, {uni({3, 5})}, [](const auto& in) { return scale(in[0], -1.7); });
  check("div_scalar", {3, 5}, {uni({3, 5})}, [](const auto& in) { return div_scalar(in[0], 3.0); });
  check("relu", {4, 6}, {away({4, 6})}, [](const auto& in) { return relu(in[0]); });
  check("sum", {2, 4}, {uni({2, 3, 4})}, [](const auto& in) { return sum(in[0], 1); });
  check("mean", {2, 3, 1}, {uni({2, 3, 4})}, [](const auto& in) { return mean(in[0], -1, true); });
  check("sum_all", {}, {uni({3, 4})}, [](const auto& in) { return sum_all(in[0]); });
  check("mean_all", {}, {uni({3, 4})}, [](const auto& in) { return mean_all(in[0]); });
  check("softmax", {3, 4, 5}, {uni({3, 4, 5}, -2.0, 2.0)}, [](const auto& in) { return softmax(in[0], 1); });
  check("norm_last", {4, 5}, {away({4, 5, 3})}, [](const auto& in) { return norm_last(in[0]); });
  check("reshape", {6, 4}, {uni({2, 3, 4})}, [](const auto& in) { return reshape(in[0], {6, 4}); });
  check("narrow", {2, 2, 4}, {uni({2, 5, 4})}, [](const auto& in) { return narrow(in[0], 1, 2, 2); });
  check("concat", {2, 3, 7}, {uni({2, 3, 4}), uni({2, 3, 3})}, [](const auto& in) { return concat({in[0], in[1]}, -1); });
  check("matmul", {2, 3, 5}, {uni({2, 3, 4}), uni({2, 4, 5})}, [](const auto& in) { return matmul(in[0], in[1]); });
  check("matmul_2d", {2, 3, 5}, {uni({2, 3, 4}), uni({4, 5})}, [](const auto& in) { return matmul(in[0], in[1]); });
  check("linear", {2, 3, 5}, {uni({2, 3, 4}), uni({4, 5}), uni({5})},
        [](const auto& in) { return linear(in[0], in[1], in[2]); });
  {
    std::vector<double> rm(4, 0.0);
    std::vector<double> rv(4, 1.0);
    BatchNormOptions bn;
    bn.update_running_stats = false;
    check("batch_norm", {2, 3, 4}, {uni({2, 3, 4}), uni({4}, 0.5, 1.5), uni({4})},
          [&](const auto& in) { return batch_norm(in[0], in[1], in[2], rm, rv, bn); });
  }
  check("cosine_similarity", {2, 4, 4}, {uni({2, 4, 5})},
        [](const auto& in) { return cosine_similarity_matrix(in[0]); });
  {
    std::vector<SparseMatrix> mats;
    for (int g = 0; g < 2; ++g) {
      std::vector<double> dense(16, 0.0);
      std::bernoulli_distribution keep(0.5);
      for (std::size_t i = 0; i < 4; ++i) {
        dense[i * 4 + i] = 1.0;
        for (std::size_t k = 0; k < 4; ++k) {
          if (keep(rng)) dense[i * 4 + k] = 1.0;
        }
      }
      mats.push_back(SparseMatrix::row_normalized(4, 4, dense));
    }
    check("sparse_aggregate", {2, 4, 3}, {uni({2, 4, 3})},
          [mats](const auto& in) { return sparse_aggregate(in[0], mats); });
  }
  return out;
}

std::string to_string(GradCheckEntry::Stencil s) {
  switch (s) {
    case GradCheckEntry::Stencil::kCentral: return "central";
    case GradCheckEntry::Stencil::kForward: return "forward";
    case GradCheckEntry::Stencil::kBackward: return "backward";
    case GradCheckEntry::Stencil::kStraddled: return "straddled";
  }
  return "unknown";
}

nlohmann::json grad_report_to_json(const GradCheckReport& r) {
  auto entry = [](const GradCheckEntry& e) {
    return nlohmann::json{{"param", e.name},
                          {"index", e.index},
                          {"analytic", e.analytic},
                          {"numeric", e.numeric},
                          {"step", e.step},
                          {"stencil", to_string(e.stencil)},
                          {"rel_error", e.rel_error}};
  };
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) entries.push_back(entry(e));
  return {{"passed", r.passed}, {"loss", r.loss}, {"max_rel_error", r.max_rel_error}, {"worst", entry(r.worst)},
          {"entries", entries}};
}

}  // namespace masc
