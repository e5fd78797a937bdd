#include "masc/optimizer.hpp"

#include <cmath>

#include "masc/errors.hpp"

namespace masc {

void AdamOptions::validate() const {
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ParameterError("Adam epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be non-negative");
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamOptions options)
    : params_(std::move(params)), opt_(options) {
  opt_.validate();
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void adam_update(std::vector<double>& param, const std::vector<double>& grad, std::vector<double>& m,
                 std::vector<double>& v, std::uint64_t step, const AdamOptions& opt) {
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

void AdamW::step() {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericFault("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++step_;
  const double decay = 1.0 - opt_.lr * opt_.weight_decay;
  std::vector<double> buffer;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].second;
    auto p = t.mutable_values();
    buffer.assign(p.begin(), p.end());
    if (opt_.weight_decay != 0.0) {
      for (double& x : buffer) x *= decay;
    }
    std::vector<double> grad;
    if (t.has_grad()) grad.assign(t.grad().begin(), t.grad().end());
    adam_update(buffer, grad, m_[k], v_[k], step_, opt_);
    std::copy(buffer.begin(), buffer.end(), p.begin());
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace masc
