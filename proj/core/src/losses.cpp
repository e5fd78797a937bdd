#include "masc/losses.hpp"

#include <spdlog/spdlog.h>

#include "masc/errors.hpp"
#include "masc/ops.hpp"

namespace masc {

void LossWeights::validate() const {
  if (!(lambda_s >= 0.0) || !(lambda_v >= 0.0) || !(lambda_d >= 0.0)) {
    throw ParameterError("loss weights must be non-negative");
  }
}

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* what) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  if (pred.ndim() != 3 && pred.ndim() != 4) {
    throw DimensionError(std::string(what) + ": expected [B, T, J, C] or [T, J, C], got " + shape_str(pred.shape()));
  }
}

int time_axis(const Tensor& t) { return t.ndim() == 4 ? 1 : 0; }

Tensor temporal_diff(const Tensor& x) {
  const int axis = time_axis(x);
  const std::size_t t = x.size(axis);
  return sub(narrow(x, axis, 1, t - 1), narrow(x, axis, 0, t - 1));
}

}  // namespace

Tensor mpjpe_loss(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "mpjpe");
  return mean_all(norm_last(sub(pred, gt)));
}

Tensor n_mpjpe_loss(const Tensor& pred, const Tensor& gt, bool* fallback) {
  check_pair(pred, gt, "n_mpjpe");
  if (fallback) *fallback = false;
  const bool batched = pred.ndim() == 4;
  const std::size_t b = batched ? pred.size(0) : 1;
  const std::size_t per = pred.numel() / b;
  Tensor total;
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor p = batched ? narrow(pred, 0, i, 1) : pred;
    const Tensor g = batched ? narrow(gt, 0, i, 1) : gt;
    double pp = 0.0;
    for (double v : pred.values().subspan(i * per, per)) pp += v * v;
    Tensor err;
    if (pp == 0.0) {
      if (fallback) *fallback = true;
      spdlog::warn("n_mpjpe: all-zero prediction in sequence {}, scale undefined; using plain MPJPE", i);
      err = mpjpe_loss(p, g);
    } else {
      const Tensor s = div(sum_all(mul(p, g)), sum_all(mul(p, p)));
      err = mpjpe_loss(mul(p, s), g);
    }
    total = i == 0 ? err : add(total, err);
  }
  return div_scalar(total, static_cast<double>(b));
}

Tensor velocity_loss(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "velocity_loss");
  if (pred.size(time_axis(pred)) < 2) {
    spdlog::warn("velocity_loss: fewer than 2 frames, returning 0");
    return Tensor::scalar(0.0);
  }
  return mpjpe_loss(temporal_diff(pred), temporal_diff(gt));
}

Tensor accel_consistency_loss(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "accel_consistency_loss");
  if (pred.size(time_axis(pred)) < 3) {
    spdlog::warn("accel_consistency_loss: fewer than 3 frames, returning 0");
    return Tensor::scalar(0.0);
  }
  return mpjpe_loss(temporal_diff(temporal_diff(pred)), temporal_diff(temporal_diff(gt)));
}

LossBreakdown total_loss(const Tensor& pred, const Tensor& gt, const LossWeights& weights) {
  weights.validate();
  const Tensor lm = mpjpe_loss(pred, gt);
  const Tensor ls = n_mpjpe_loss(pred, gt);
  const Tensor lv = velocity_loss(pred, gt);
  const Tensor ld = accel_consistency_loss(pred, gt);
  LossBreakdown out;
  out.l_m = lm.item();
  out.l_s = ls.item();
  out.l_v = lv.item();
  out.l_d = ld.item();
  out.total = add(add(add(lm, scale(ls, weights.lambda_s)), scale(lv, weights.lambda_v)), scale(ld, weights.lambda_d));
  return out;
}

}  // namespace masc
