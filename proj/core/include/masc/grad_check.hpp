#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masc/model.hpp"

namespace masc {

struct GradCheckOptions {
  std::size_t samples = 20;  // entries checked; 0 checks every entry
  double tolerance = 1e-3;
  double step = 1e-5;        // central-difference half width
  /// Step reductions (by 10) tried when the stencil crosses a ReLU or norm kink.
  std::size_t kink_retries = 2;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  /// kForward / kBackward: a kink remained on the other side after all
  /// retries. kStraddled: kinks on both sides, central value kept.
  enum class Stencil { kCentral, kForward, kBackward, kStraddled };

  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double step = 0.0;  // half width actually used
  Stencil stencil = Stencil::kCentral;
  double rel_error = 0.0;
};

/// rel = |a - n| / max(|a|, |n|, floor) with floor = 1e-6 * max(1, |loss|).
struct GradCheckReport {
  bool passed = true;
  double loss = 0.0;
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;
};

std::string to_string(GradCheckEntry::Stencil s);
double grad_rel_error(double analytic, double numeric, double loss);

/// Central differences of a scalar function of leaf tensors. `fn` is called
/// once with gradients recorded and then repeatedly under NoGradGuard.
GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> inputs, const std::vector<std::string>& names,
                                const GradCheckOptions& options);

/// Full-model check: random parameters (seeded), random input and target,
/// loss = the training objective. Top-k routing is recorded on the
/// unperturbed pass and replayed on perturbed passes.
GradCheckReport check_model_gradients(const ModelConfig& cfg, const SkeletonTopology& topo,
                                      const GradCheckOptions& options);

struct OpCheckResult {
  std::string op;
  GradCheckReport report;
};

/// Checks every differentiable primitive on seeded random inputs, all entries.
std::vector<OpCheckResult> op_gradient_suite(std::uint64_t seed, double tolerance);

nlohmann::json grad_report_to_json(const GradCheckReport& report);

}  // namespace masc
