#pragma once

// Straightforward loop implementations used as independent references.

#include <cstdint>
#include <random>
#include <vector>

#include "masc/pose_sequence.hpp"

namespace oracle {

masc::PoseSequence random_pose(std::size_t t, std::size_t j, std::mt19937_64& rng, double lo = -500.0,
                               double hi = 500.0);

double mpjpe(const masc::PoseSequence& p, const masc::PoseSequence& g);
double n_mpjpe(const masc::PoseSequence& p, const masc::PoseSequence& g);
double velocity(const masc::PoseSequence& p, const masc::PoseSequence& g);
double accel(const masc::PoseSequence& p, const masc::PoseSequence& g);
double pck(const masc::PoseSequence& p, const masc::PoseSequence& g, double threshold);
double auc(const masc::PoseSequence& p, const masc::PoseSequence& g);

/// Applies x -> s * R x + t to every joint; R from a random unit quaternion.
struct Similarity {
  double r[3][3];
  double s;
  double t[3];
};
Similarity random_similarity(std::mt19937_64& rng, double scale_lo = 0.5, double scale_hi = 2.0);
masc::PoseSequence apply(const Similarity& sim, const masc::PoseSequence& p);
/// Sum of squared joint errors of `p` after applying `sim`, against `g`.
double frame_error(const Similarity& sim, const double* p, const double* g, std::size_t joints);

// Dense reference for one STGC window stack.
struct StgcParams {
  std::vector<double> w_self, b_self, w_nei, b_nei;  // [D, D], [D]
  std::vector<double> gamma, beta;                   // [D]
};

/// h: [T, J, D] row-major (batch 1). Training-mode BN over all (t, j) rows.
std::vector<double> stgc(const std::vector<double>& h, std::size_t t, std::size_t j, std::size_t d, std::size_t w,
                         std::size_t k, const StgcParams& p, double eps = 1e-5);

}  // namespace oracle
