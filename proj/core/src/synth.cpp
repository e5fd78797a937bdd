#include "masc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "masc/errors.hpp"

namespace masc {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

// Unit direction in the sagittal plane: angle 0 points down, positive swings forward (+y).
Vec3 down_swing(double angle) { return {0.0, std::sin(angle), -std::cos(angle)}; }
Vec3 up_swing(double angle) { return {0.0, std::sin(angle), std::cos(angle)}; }

// Arm direction: forward flexion, then abduction about the forward axis (sign picks the side).
Vec3 arm_dir(double flex, double abduct, double side) {
  return {side * std::sin(abduct) * std::cos(flex), std::sin(flex), -std::cos(abduct) * std::cos(flex)};
}

struct Pose {
  double hip_r = 0, hip_l = 0, knee_r = 0, knee_l = 0;
  double trunk = 0, head = 0;
  double shoulder_r = 0, shoulder_l = 0, elbow_r = 0, elbow_l = 0;
  double abduct_r = 0.15, abduct_l = 0.15;
};

void forward_kinematics(const Pose& q, double yaw, const BoneLengths& b, PoseSequence& out, std::size_t t) {
  std::array<Vec3, 17> p{};
  p[0] = {0.0, 0.0, 0.0};
  p[1] = {-b.hip, 0.0, 0.0};
  p[4] = {b.hip, 0.0, 0.0};
  p[2] = p[1] + b.thigh * down_swing(q.hip_r);
  p[3] = p[2] + b.shin * down_swing(q.hip_r - q.knee_r);
  p[5] = p[4] + b.thigh * down_swing(q.hip_l);
  p[6] = p[5] + b.shin * down_swing(q.hip_l - q.knee_l);
  const Vec3 trunk = up_swing(q.trunk);
  p[7] = p[0] + b.spine * trunk;
  p[8] = p[7] + b.thorax * trunk;
  p[9] = p[8] + b.neck * trunk;
  p[10] = p[9] + b.head * up_swing(q.trunk + q.head);
  p[11] = p[8] + Vec3{b.shoulder, 0.0, 0.0};
  p[14] = p[8] + Vec3{-b.shoulder, 0.0, 0.0};
  p[12] = p[11] + b.upper_arm * arm_dir(q.shoulder_l, q.abduct_l, 1.0);
  p[13] = p[12] + b.forearm * arm_dir(q.shoulder_l + q.elbow_l, q.abduct_l, 1.0);
  p[15] = p[14] + b.upper_arm * arm_dir(q.shoulder_r, q.abduct_r, -1.0);
  p[16] = p[15] + b.forearm * arm_dir(q.shoulder_r + q.elbow_r, q.abduct_r, -1.0);
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  for (std::size_t j = 0; j < 17; ++j) {
    out.at(t, j, 0) = c * p[j][0] - s * p[j][1];
    out.at(t, j, 1) = s * p[j][0] + c * p[j][1];
    out.at(t, j, 2) = p[j][2];
  }
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

}  // namespace

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::kGaitCycle: return "gait_cycle";
    case MotionKind::kReachTransition: return "reach_transition";
    case MotionKind::kRandomSmooth: return "random_smooth";
  }
  return "unknown";
}

MotionKind motion_kind_from_string(const std::string& name) {
  if (name == "gait_cycle") return MotionKind::kGaitCycle;
  if (name == "reach_transition") return MotionKind::kReachTransition;
  if (name == "random_smooth") return MotionKind::kRandomSmooth;
  throw ParameterError("unknown motion kind '" + name + "'");
}

void MotionSpec::validate() const {
  if (frames < 3) throw ParameterError("motion needs at least 3 frames");
  if (period_frames < 2) throw ParameterError("period_frames must be >= 2");
  if (!(amplitude_mm > 0.0)) throw ParameterError("amplitude_mm must be positive");
  if (!(fps > 0.0)) throw ParameterError("fps must be positive");
}

void CameraSpec::validate() const {
  if (!(focal_px > 0.0)) throw ParameterError("focal_px must be positive");
  if (!(noise_std_px >= 0.0)) throw ParameterError("noise_std_px must be non-negative");
  const Vec3 f = look_at_mm - position_mm;
  if (dot(f, f) == 0.0) throw ParameterError("camera position coincides with look_at");
}

PoseSequence generate_motion(const MotionSpec& spec, const SkeletonTopology& topo) {
  spec.validate();
  if (topo != default_h36m_topology()) {
    throw ParameterError("motion synthesis supports only the default 17-joint skeleton");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double a = spec.amplitude_mm / 442.0;
  const double period = spec.period_frames;
  const double two_pi = 2.0 * std::numbers::pi;
  const double yaw = (unit(rng) - 0.5) * std::numbers::pi / 3.0;

  const auto frames = static_cast<std::size_t>(spec.frames);
  PoseSequence out(frames, 17, 3, spec.fps);
  const BoneLengths bones;

  // random_smooth: each angle is a seeded sum of sines slower than the period.
  constexpr int kAngles = 10;
  constexpr int kHarmonics = 3;
  std::array<std::array<double, 3 * kHarmonics>, kAngles> waves{};
  if (spec.kind == MotionKind::kRandomSmooth) {
    for (auto& w : waves) {
      for (int h = 0; h < kHarmonics; ++h) {
        w[static_cast<std::size_t>(3 * h)] = a * (unit(rng) - 0.5) / (h + 1);
        w[static_cast<std::size_t>(3 * h + 1)] = (0.2 + 0.8 * unit(rng)) / period;
        w[static_cast<std::size_t>(3 * h + 2)] = two_pi * unit(rng);
      }
    }
  }
  const double span = std::max(0.0, static_cast<double>(spec.frames) - period);
  const double onset = std::floor(unit(rng) * span);

  for (std::size_t t = 0; t < frames; ++t) {
    const double td = static_cast<double>(t);
    Pose q;
    switch (spec.kind) {
      case MotionKind::kGaitCycle: {
        const double ph = two_pi * td / period;
        q.hip_r = a * std::sin(ph);
        q.hip_l = -a * std::sin(ph);
        q.knee_r = 0.6 * a * (1.0 - std::cos(ph));
        q.knee_l = 0.6 * a * (1.0 + std::cos(ph));
        q.trunk = 0.05 + 0.05 * a * std::sin(2.0 * ph);
        q.head = 0.02 * std::sin(2.0 * ph);
        q.shoulder_r = -0.5 * a * std::sin(ph);
        q.shoulder_l = 0.5 * a * std::sin(ph);
        q.elbow_r = 0.2 * a * (1.0 - std::sin(ph));
        q.elbow_l = 0.2 * a * (1.0 + std::sin(ph));
        break;
      }
      case MotionKind::kReachTransition: {
        const double s = smoothstep((td - onset) / period);
        q.shoulder_r = 2.0 * a * s;
        q.elbow_r = 0.6 * a * s * (1.0 - s) * 4.0;
        q.abduct_r = 0.15 + 0.3 * a * s;
        q.shoulder_l = 0.3 * a * s;
        q.trunk = 0.05 + 0.3 * a * s;
        q.head = -0.2 * a * s;
        q.knee_r = 0.15 * a * s;
        q.knee_l = 0.15 * a * s;
        q.hip_r = 0.1 * a * s;
        q.hip_l = 0.1 * a * s;
        break;
      }
      case MotionKind::kRandomSmooth: {
        std::array<double, kAngles> ang{};
        for (int k = 0; k < kAngles; ++k) {
          const auto& w = waves[static_cast<std::size_t>(k)];
          for (int h = 0; h < kHarmonics; ++h) {
            ang[static_cast<std::size_t>(k)] += w[static_cast<std::size_t>(3 * h)] *
                                                std::sin(two_pi * w[static_cast<std::size_t>(3 * h + 1)] * td +
                                                         w[static_cast<std::size_t>(3 * h + 2)]);
          }
        }
        q.hip_r = ang[0];
        q.hip_l = ang[1];
        q.knee_r = std::abs(ang[2]);
        q.knee_l = std::abs(ang[3]);
        q.trunk = 0.05 + 0.3 * ang[4];
        q.head = 0.3 * ang[5];
        q.shoulder_r = ang[6];
        q.shoulder_l = ang[7];
        q.elbow_r = std::abs(ang[8]);
        q.elbow_l = std::abs(ang[9]);
        break;
      }
    }
    forward_kinematics(q, yaw, bones, out, t);
  }
  return out;
}

std::array<double, 3> camera_coordinates(const CameraSpec& cam, const std::array<double, 3>& p) {
  const Vec3 fwd = normalized(cam.look_at_mm - cam.position_mm);
  Vec3 right = cross(fwd, Vec3{0.0, 0.0, 1.0});
  if (dot(right, right) < 1e-24) right = cross(fwd, Vec3{0.0, 1.0, 0.0});
  right = normalized(right);
  const Vec3 down = cross(fwd, right);
  const Vec3 v = p - cam.position_mm;
  return {dot(v, right), dot(v, down), dot(v, fwd)};
}

PoseSequence project(const PoseSequence& seq3d, const CameraSpec& cam, std::uint64_t seed) {
  cam.validate();
  if (seq3d.channels != 3) throw DimensionError("project expects 3D joints");
  std::mt19937_64 rng(seed);
  const double sigma = cam.noise_std_px;
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  PoseSequence out(seq3d.frames, seq3d.joints, 3, seq3d.fps);
  for (std::size_t t = 0; t < seq3d.frames; ++t) {
    for (std::size_t j = 0; j < seq3d.joints; ++j) {
      const auto c = camera_coordinates(cam, {seq3d.at(t, j, 0), seq3d.at(t, j, 1), seq3d.at(t, j, 2)});
      if (!(c[2] > 0.0)) {
        throw ParameterError("joint " + std::to_string(j) + " in frame " + std::to_string(t) + " is behind the camera");
      }
      double nu = 0.0;
      double nv = 0.0;
      if (sigma > 0.0) {
        nu = noise(rng);
        nv = noise(rng);
      }
      out.at(t, j, 0) = cam.focal_px * c[0] / c[2] + cam.principal_point[0] + nu;
      out.at(t, j, 1) = cam.focal_px * c[1] / c[2] + cam.principal_point[1] + nv;
      double conf = 1.0;
      if (cam.confidence_model == ConfidenceModel::kNoiseInverse && sigma > 0.0) {
        conf = 1.0 / (1.0 + std::sqrt(nu * nu + nv * nv) / sigma);
      }
      out.at(t, j, 2) = conf;
    }
  }
  return out;
}

nlohmann::json motion_to_json(const MotionSpec& s) {
  return {{"kind", to_string(s.kind)},     {"frames", s.frames},
          {"fps", s.fps},                  {"amplitude_mm", s.amplitude_mm},
          {"period_frames", s.period_frames}, {"seed", s.seed}};
}

MotionSpec motion_from_json(const nlohmann::json& j) {
  MotionSpec s;
  try {
    s.kind = motion_kind_from_string(j.at("kind").get<std::string>());
    s.frames = j.value("frames", s.frames);
    s.fps = j.value("fps", s.fps);
    s.amplitude_mm = j.value("amplitude_mm", s.amplitude_mm);
    s.period_frames = j.value("period_frames", s.period_frames);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("motion spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json camera_to_json(const CameraSpec& c) {
  return {{"focal_px", c.focal_px},
          {"principal_point", c.principal_point},
          {"position_mm", c.position_mm},
          {"look_at_mm", c.look_at_mm},
          {"noise_std_px", c.noise_std_px},
          {"confidence_model", c.confidence_model == ConfidenceModel::kIdeal ? "ideal" : "noise_inverse"}};
}

CameraSpec camera_from_json(const nlohmann::json& j) {
  CameraSpec c;
  try {
    c.focal_px = j.value("focal_px", c.focal_px);
    c.principal_point = j.value("principal_point", c.principal_point);
    c.position_mm = j.value("position_mm", c.position_mm);
    c.look_at_mm = j.value("look_at_mm", c.look_at_mm);
    c.noise_std_px = j.value("noise_std_px", c.noise_std_px);
    const std::string model = j.value("confidence_model", std::string("ideal"));
    if (model == "ideal") {
      c.confidence_model = ConfidenceModel::kIdeal;
    } else if (model == "noise_inverse") {
      c.confidence_model = ConfidenceModel::kNoiseInverse;
    } else {
      throw ConfigError("unknown confidence model '" + model + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("camera spec: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace masc
