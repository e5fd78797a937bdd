#pragma once

#include "masc/tensor.hpp"

namespace masc {

struct LossWeights {
  double lambda_s = 0.5;
  double lambda_v = 20.0;
  double lambda_d = 0.5;

  /// Throws ParameterError on a negative weight.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Differentiable training losses on [B, T, J, 3] or [T, J, 3] tensors in
// millimetres. Each returns a scalar tensor.

/// Mean per-joint Euclidean distance.
Tensor mpjpe_loss(const Tensor& pred, const Tensor& gt);
/// MPJPE after rescaling each sequence of `pred` by <pred, gt> / <pred, pred>.
/// A sequence whose prediction is all zeros keeps scale 1 (plain MPJPE) and
/// sets *fallback when given.
Tensor n_mpjpe_loss(const Tensor& pred, const Tensor& gt, bool* fallback = nullptr);
/// MPJPE of first temporal differences. Zero (with a warning) when T < 2.
Tensor velocity_loss(const Tensor& pred, const Tensor& gt);
/// Mean norm of the difference of second temporal differences. Zero (with a
/// warning) when T < 3.
Tensor accel_consistency_loss(const Tensor& pred, const Tensor& gt);

struct LossBreakdown {
  Tensor total;
  double l_m = 0.0;
  double l_s = 0.0;
  double l_v = 0.0;
  double l_d = 0.0;
};

/// L_m + lambda_s L_s + lambda_v L_v + lambda_d L_d.
LossBreakdown total_loss(const Tensor& pred, const Tensor& gt, const LossWeights& weights = {});

}  // namespace masc
