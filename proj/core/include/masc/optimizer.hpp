#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "masc/tensor.hpp"

namespace masc {

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

/// Adam with decoupled weight decay: p <- p * (1 - lr * wd), then the
/// bias-corrected Adam step. Moments are kept per parameter in creation order.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamOptions options);

  /// Throws NumericFault naming the first parameter with a non-finite
  /// gradient; no parameter is modified in that case. Missing gradients
  /// count as zero.
  void step();
  void zero_grad();

  std::uint64_t step_count() const noexcept { return step_; }
  void set_step_count(std::uint64_t s) noexcept { step_ = s; }
  const AdamOptions& options() const noexcept { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const noexcept { return params_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

/// Plain (coupled-free) Adam update on raw buffers, used to cross-check AdamW at wd = 0.
void adam_update(std::vector<double>& param, const std::vector<double>& grad, std::vector<double>& m,
                 std::vector<double>& v, std::uint64_t step, const AdamOptions& opt);

}  // namespace masc
