#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "masc/tensor.hpp"

namespace masc {

// Elementwise arithmetic with numpy-style broadcasting (right-aligned,
// extents must match or be 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
/// x / divisor, computed as a true division (not multiplication by 1/divisor).
Tensor div_scalar(const Tensor& x, double divisor);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

/// Euclidean norm over the last axis; the last axis is removed. The gradient
/// at a zero vector is taken as zero.
Tensor norm_last(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Contiguous slice [start, start + length) along `axis`.
Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

/// Batched matrix product a[..., m, k] x b[..., k, n] with broadcast batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  bool training = true;
  bool update_running_stats = true;
};

/// Normalizes over every axis except the last (the feature axis).
/// `running_mean` / `running_var` have one entry per feature; in training
/// mode they are updated in place (unbiased variance) when requested.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::vector<double>& running_mean,
                  std::vector<double>& running_var, const BatchNormOptions& options);

/// Pairwise cosine similarity of the rows of h[..., w, d] -> [..., w, w].
/// Norms are floored at kCosineNormFloor.
inline constexpr double kCosineNormFloor = 1e-8;
Tensor cosine_similarity_matrix(const Tensor& h);

/// Binary mask keeping, per row of s[..., w, w], the k largest entries
/// (ties go to the lower column index). Never part of the graph.
Tensor topk_mask(const Tensor& s, std::size_t k);

/// Compressed sparse row matrix with constant entries.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;  // rows + 1 entries
  std::vector<std::size_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
  static SparseMatrix from_dense(std::size_t rows, std::size_t cols, std::span<const double> dense);
  /// Each row of a binary mask divided by its row sum.
  static SparseMatrix row_normalized(std::size_t rows, std::size_t cols, std::span<const double> mask);
  std::vector<double> to_dense() const;
};

/// y[g] = A_g * x[g] for x[..., n, f] viewed as G groups of n x f blocks.
/// `matrices` holds either one matrix shared by every group or one per group.
Tensor sparse_aggregate(const Tensor& x, std::span<const SparseMatrix> matrices);

}  // namespace masc
