#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "masc/pose_sequence.hpp"
#include "masc/skeleton.hpp"

namespace masc {

enum class MotionKind { kGaitCycle, kReachTransition, kRandomSmooth };

std::string to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& name);

struct MotionSpec {
  MotionKind kind = MotionKind::kGaitCycle;
  int frames = 81;
  double fps = 50.0;
  double amplitude_mm = 250.0;
  int period_frames = 27;
  std::uint64_t seed = 0;

  /// Throws ParameterError unless frames >= 3, period_frames >= 2 and amplitude_mm > 0.
  void validate() const;
};

enum class ConfidenceModel { kIdeal, kNoiseInverse };

struct CameraSpec {
  double focal_px = 1000.0;
  std::array<double, 2> principal_point = {500.0, 500.0};
  std::array<double, 3> position_mm = {0.0, 4000.0, 0.0};
  std::array<double, 3> look_at_mm = {0.0, 0.0, 0.0};
  double noise_std_px = 0.0;
  ConfidenceModel confidence_model = ConfidenceModel::kIdeal;

  void validate() const;
};

/// Per-segment bone lengths of the default skeleton, in millimetres.
struct BoneLengths {
  double hip = 132.0;
  double thigh = 442.0;
  double shin = 454.0;
  double spine = 233.0;
  double thorax = 257.0;
  double neck = 121.0;
  double head = 115.0;
  double shoulder = 151.0;
  double upper_arm = 278.0;
  double forearm = 251.0;
};

/// Root-relative 3D motion (mm, z up, root at the origin) on the default
/// 17-joint skeleton, built by forward kinematics so bone lengths are exact.
/// Other topologies raise ParameterError.
PoseSequence generate_motion(const MotionSpec& spec, const SkeletonTopology& topo);

/// Pinhole projection to (u_px, v_px, confidence) with seeded Gaussian pixel
/// noise. A joint at or behind the image plane raises ParameterError naming
/// the frame and joint.
PoseSequence project(const PoseSequence& seq3d, const CameraSpec& cam, std::uint64_t seed);

/// Camera-frame coordinates (right, down, forward) of a world point.
std::array<double, 3> camera_coordinates(const CameraSpec& cam, const std::array<double, 3>& p);

nlohmann::json motion_to_json(const MotionSpec& spec);
MotionSpec motion_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const CameraSpec& cam);
CameraSpec camera_from_json(const nlohmann::json& j);

}  // namespace masc
