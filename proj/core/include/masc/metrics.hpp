#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masc/pose_sequence.hpp"

namespace masc {

// Evaluation metrics on 3D sequences in millimetres. Both arguments must have
// identical shapes with 3 channels; mismatches raise DimensionError.

double mpjpe(const PoseSequence& pred, const PoseSequence& gt);
/// Mean error of each joint over all frames.
std::vector<double> per_joint_mpjpe(const PoseSequence& pred, const PoseSequence& gt);
/// MPJPE after the least-squares global rescaling of `pred`. An all-zero
/// prediction falls back to plain MPJPE and sets *fallback.
double n_mpjpe(const PoseSequence& pred, const PoseSequence& gt, bool* fallback = nullptr);
double velocity_error(const PoseSequence& pred, const PoseSequence& gt);
double accel_error(const PoseSequence& pred, const PoseSequence& gt);

struct ProcrustesResult {
  std::vector<double> aligned;  // J x 3
  std::array<double, 9> rotation{};  // row-major
  std::array<double, 3> translation{};
  double scale = 1.0;
  bool degenerate = false;  // rank-deficient cross-covariance: translation and scale only
};

/// Similarity transform of `pred` (J x 3, row-major) that best matches `gt`
/// in the least-squares sense, with reflections excluded. Requires J >= 3.
ProcrustesResult procrustes_align(std::span<const double> pred, std::span<const double> gt, std::size_t joints);

/// Frame-wise Procrustes-aligned MPJPE. Counts fallback frames in *degenerate_frames.
double p_mpjpe(const PoseSequence& pred, const PoseSequence& gt, std::size_t* degenerate_frames = nullptr);

/// 5, 10, ..., 150 mm.
std::vector<double> default_auc_thresholds();
inline constexpr double kPckThresholdMm = 150.0;

struct PckAuc {
  double pck_pct = 0.0;
  double auc_pct = 0.0;
};

/// PCK counts joints whose error is strictly below the threshold. AUC is the
/// mean PCK over `thresholds` (ascending, non-empty).
PckAuc pck_auc(const PoseSequence& pred, const PoseSequence& gt, std::span<const double> thresholds,
               double pck_threshold = kPckThresholdMm);

struct MetricReport {
  double mpjpe_mm = 0.0;
  double p_mpjpe_mm = 0.0;
  double n_mpjpe_mm = 0.0;
  double pck_pct = 0.0;
  double auc_pct = 0.0;
  std::vector<double> per_joint_mpjpe;
  std::size_t frames = 0;
  std::size_t degenerate_frames = 0;
};

MetricReport evaluate(const PoseSequence& pred, const PoseSequence& gt);
/// Pools the frames of every pair (metrics are frame averages, so longer
/// sequences weigh more). N-MPJPE is the frame-weighted mean of per-sequence values.
MetricReport evaluate_set(std::span<const PoseSequence> preds, std::span<const PoseSequence> gts);

nlohmann::json metric_report_to_json(const MetricReport& report);

}  // namespace masc
