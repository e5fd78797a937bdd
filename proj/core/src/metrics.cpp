#include "masc/metrics.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "masc/errors.hpp"

namespace masc {

namespace {

void check_pair(const PoseSequence& pred, const PoseSequence& gt, const char* what) {
  require_same_shape(pred, gt, what);
  if (pred.channels != 3) throw DimensionError(std::string(what) + ": expected 3 channels");
}

double dist3(const double* a, const double* b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double mean_error(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size() / 3;
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += dist3(&a[3 * i], &b[3 * i]);
  return total / static_cast<double>(n);
}

// d-th order temporal difference, frames x (J*3) flattened.
std::vector<double> diff(std::span<const double> x, std::size_t frames, std::size_t stride, int order) {
  std::vector<double> cur(x.begin(), x.end());
  for (int o = 0; o < order; ++o) {
    --frames;
    std::vector<double> next(frames * stride);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t i = 0; i < stride; ++i) next[t * stride + i] = cur[(t + 1) * stride + i] - cur[t * stride + i];
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

double mpjpe(const PoseSequence& pred, const PoseSequence& gt) {
  check_pair(pred, gt, "mpjpe");
  return mean_error(pred.data, gt.data);
}

std::vector<double> per_joint_mpjpe(const PoseSequence& pred, const PoseSequence& gt) {
  check_pair(pred, gt, "per_joint_mpjpe");
  std::vector<double> out(pred.joints, 0.0);
  for (std::size_t t = 0; t < pred.frames; ++t) {
    for (std::size_t j = 0; j < pred.joints; ++j) out[j] += dist3(&pred.data[pred.index(t, j, 0)], &gt.data[gt.index(t, j, 0)]);
  }
  for (double& v : out) v /= static_cast<double>(pred.frames);
  return out;
}

double n_mpjpe(const PoseSequence& pred, const PoseSequence& gt, bool* fallback) {
  check_pair(pred, gt, "n_mpjpe");
  double pg = 0.0;
  double pp = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    pg += pred.data[i] * gt.data[i];
    pp += pred.data[i] * pred.data[i];
  }
  if (fallback) *fallback = pp == 0.0;
  if (pp == 0.0) {
    spdlog::warn("n_mpjpe: all-zero prediction, scale undefined; using plain MPJPE");
    return mean_error(pred.data, gt.data);
  }
  const double s = pg / pp;
  std::vector<double> scaled(pred.data.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = s * pred.data[i];
  return mean_error(scaled, gt.data);
}

double velocity_error(const PoseSequence& pred, const PoseSequence& gt) {
  check_pair(pred, gt, "velocity_error");
  if (pred.frames < 2) {
    spdlog::warn("velocity_error: fewer than 2 frames, returning 0");
    return 0.0;
  }
  const std::size_t stride = pred.joints * 3;
  return mean_error(diff(pred.data, pred.frames, stride, 1), diff(gt.data, gt.frames, stride, 1));
}

double accel_error(const PoseSequence& pred, const PoseSequence& gt) {
  check_pair(pred, gt, "accel_error");
  if (pred.frames < 3) {
    spdlog::warn("accel_error: fewer than 3 frames, returning 0");
    return 0.0;
  }
  const std::size_t stride = pred.joints * 3;
  return mean_error(diff(pred.data, pred.frames, stride, 2), diff(gt.data, gt.frames, stride, 2));
}

ProcrustesResult procrustes_align(std::span<const double> pred, std::span<const double> gt, std::size_t joints) {
  if (joints < 3) throw ParameterError("procrustes_align needs at least 3 joints");
  if (pred.size() != joints * 3 || gt.size() != joints * 3) throw DimensionError("procrustes_align: expected J x 3 frames");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
  const Eigen::Map<const Mat> p(pred.data(), static_cast<Eigen::Index>(joints), 3);
  const Eigen::Map<const Mat> g(gt.data(), static_cast<Eigen::Index>(joints), 3);
  const Eigen::RowVector3d mu_p = p.colwise().mean();
  const Eigen::RowVector3d mu_g = g.colwise().mean();
  const Mat x = p.rowwise() - mu_p;
  const Mat y = g.rowwise() - mu_g;
  const double xx = x.squaredNorm();

  ProcrustesResult out;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  double s = 0.0;
  const Eigen::Matrix3d h = x.transpose() * y;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (xx == 0.0 || sv(0) == 0.0 || sv(1) <= 1e-12 * sv(0)) {
    out.degenerate = true;
    s = xx == 0.0 ? 0.0 : (x.cwiseProduct(y)).sum() / xx;
  } else {
    const Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    // Rotation acts on row vectors: aligned = s * x * r^T.
    r = v * d.asDiagonal() * u.transpose();
    s = sv.dot(d) / xx;
  }
  const Mat aligned = (s * (x * r.transpose())).rowwise() + mu_g;
  out.aligned.assign(aligned.data(), aligned.data() + joints * 3);
  out.scale = s;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out.rotation[static_cast<std::size_t>(i * 3 + j)] = r(i, j);
  }
  const Eigen::RowVector3d t = mu_g - s * (mu_p * r.transpose());
  for (int i = 0; i < 3; ++i) out.translation[static_cast<std::size_t>(i)] = t(i);
  return out;
}

double p_mpjpe(const PoseSequence& pred, const PoseSequence& gt, std::size_t* degenerate_frames) {
  check_pair(pred, gt, "p_mpjpe");
  const std::size_t stride = pred.joints * 3;
  double total = 0.0;
  std::size_t degenerate = 0;
  for (std::size_t t = 0; t < pred.frames; ++t) {
    const std::span<const double> pf(pred.data.data() + t * stride, stride);
    const std::span<const double> gf(gt.data.data() + t * stride, stride);
    const auto res = procrustes_align(pf, gf, pred.joints);
    if (res.degenerate) ++degenerate;
    for (std::size_t j = 0; j < pred.joints; ++j) total += dist3(&res.aligned[3 * j], &gf[3 * j]);
  }
  if (degenerate_frames) *degenerate_frames = degenerate;
  const std::size_t n = pred.frames * pred.joints;
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

std::vector<double> default_auc_thresholds() {
  std::vector<double> out;
  for (int mm = 5; mm <= 150; mm += 5) out.push_back(static_cast<double>(mm));
  return out;
}

PckAuc pck_auc(const PoseSequence& pred, const PoseSequence& gt, std::span<const double> thresholds,
               double pck_threshold) {
  check_pair(pred, gt, "pck_auc");
  if (thresholds.empty()) throw ParameterError("pck_auc: threshold list is empty");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) throw ParameterError("pck_auc: thresholds must be ascending");
  }
  const std::size_t n = pred.frames * pred.joints;
  if (n == 0) throw ParameterError("pck_auc: empty sequence");
  std::vector<double> errors(n);
  for (std::size_t i = 0; i < n; ++i) errors[i] = dist3(&pred.data[3 * i], &gt.data[3 * i]);
  auto pck_at = [&](double thr) {
    std::size_t hits = 0;
    for (double e : errors) hits += e < thr ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
  };
  PckAuc out;
  out.pck_pct = pck_at(pck_threshold);
  double acc = 0.0;
  for (double thr : thresholds) acc += pck_at(thr);
  out.auc_pct = acc / static_cast<double>(thresholds.size());
  return out;
}

MetricReport evaluate(const PoseSequence& pred, const PoseSequence& gt) {
  MetricReport r;
  r.mpjpe_mm = mpjpe(pred, gt);
  r.p_mpjpe_mm = p_mpjpe(pred, gt, &r.degenerate_frames);
  r.n_mpjpe_mm = n_mpjpe(pred, gt);
  const auto thresholds = default_auc_thresholds();
  const auto pa = pck_auc(pred, gt, thresholds);
  r.pck_pct = pa.pck_pct;
  r.auc_pct = pa.auc_pct;
  r.per_joint_mpjpe = per_joint_mpjpe(pred, gt);
  r.frames = pred.frames;
  return r;
}

MetricReport evaluate_set(std::span<const PoseSequence> preds, std::span<const PoseSequence> gts) {
  if (preds.size() != gts.size()) throw DimensionError("evaluate_set: prediction and target counts differ");
  if (preds.empty()) throw ParameterError("evaluate_set: no sequences");
  PoseSequence all_p(0, preds[0].joints, 3, preds[0].fps);
  PoseSequence all_g(0, preds[0].joints, 3, preds[0].fps);
  double n_weighted = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_pair(preds[i], gts[i], "evaluate_set");
    if (preds[i].joints != all_p.joints) throw DimensionError("evaluate_set: joint counts differ between sequences");
    all_p.data.insert(all_p.data.end(), preds[i].data.begin(), preds[i].data.end());
    all_g.data.insert(all_g.data.end(), gts[i].data.begin(), gts[i].data.end());
    all_p.frames += preds[i].frames;
    all_g.frames += gts[i].frames;
    n_weighted += n_mpjpe(preds[i], gts[i]) * static_cast<double>(preds[i].frames);
  }
  MetricReport r = evaluate(all_p, all_g);
  r.n_mpjpe_mm = n_weighted / static_cast<double>(all_p.frames);
  return r;
}

nlohmann::json metric_report_to_json(const MetricReport& r) {
  return {{"mpjpe_mm", r.mpjpe_mm},
          {"p_mpjpe_mm", r.p_mpjpe_mm},
          {"n_mpjpe_mm", r.n_mpjpe_mm},
          {"pck_pct", r.pck_pct},
          {"auc_pct", r.auc_pct},
          {"per_joint_mpjpe", r.per_joint_mpjpe},
          {"frames", r.frames},
          {"degenerate_frames", r.degenerate_frames}};
}

}  // namespace masc
