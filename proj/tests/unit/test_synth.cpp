#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "masc/dataset.hpp"
#include "masc/errors.hpp"
#include "masc/pose_io.hpp"
#include "masc/synth.hpp"

using namespace masc;
namespace fs = std::filesystem;

namespace {

std::vector<double> bone_lengths(const PoseSequence& s, std::size_t t, const SkeletonTopology& topo) {
  std::vector<double> out;
  for (const auto& [a, b] : topo.edges()) {
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += (s.at(t, a, c) - s.at(t, b, c)) * (s.at(t, a, c) - s.at(t, b, c));
    out.push_back(std::sqrt(d));
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("masc_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nlohmann::json small_manifest() {
  return nlohmann::json::parse(R"({
    "name": "t", "seed": 5,
    "sequences": [
      {"motion": {"kind": "gait_cycle", "frames": 27, "period_frames": 9}, "seed": 1, "count": 3},
      {"motion": {"kind": "reach_transition", "frames": 27}, "camera": {"noise_std_px": 2.0,
        "confidence_model": "noise_inverse"}, "seed": 2, "count": 2, "split": "eval"},
      {"motion": {"kind": "random_smooth", "frames": 27}, "seed": 3, "count": 2}
    ]})");
}

}  // namespace

TEST(Synth, BoneLengthsAreConstant) {
  const auto topo = default_h36m_topology();
  for (auto kind : {MotionKind::kGaitCycle, MotionKind::kReachTransition, MotionKind::kRandomSmooth}) {
    MotionSpec spec;
    spec.kind = kind;
    spec.seed = 3;
    const auto s = generate_motion(spec, topo);
    const auto ref = bone_lengths(s, 0, topo);
    for (std::size_t t = 1; t < s.frames; ++t) {
      const auto l = bone_lengths(s, t, topo);
      for (std::size_t b = 0; b < l.size(); ++b) EXPECT_NEAR(l[b], ref[b], 1e-6 * ref[b]) << to_string(kind);
    }
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.at(t, 0, c), 0.0);
  }
}

TEST(Synth, GaitIsPeriodicOnLowerBody) {
  const auto topo = default_h36m_topology();
  MotionSpec spec;
  spec.period_frames = 20;
  spec.frames = 60;
  spec.seed = 9;
  const auto s = generate_motion(spec, topo);
  for (std::size_t t = 0; t + 20 < s.frames; ++t)
    for (std::size_t j : topo.joints_in(BodyGroup::kLowerBody))
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(s.at(t, j, c), s.at(t + 20, j, c), 1e-9);
}

TEST(Synth, DeterministicInSeed) {
  MotionSpec spec;
  spec.kind = MotionKind::kRandomSmooth;
  spec.seed = 17;
  const auto topo = default_h36m_topology();
  EXPECT_EQ(generate_motion(spec, topo), generate_motion(spec, topo));
  auto other = spec;
  other.seed = 18;
  EXPECT_NE(generate_motion(spec, topo).data, generate_motion(other, topo).data);
}

TEST(Synth, InvalidSpecs) {
  MotionSpec spec;
  spec.frames = 2;
  EXPECT_THROW(generate_motion(spec, default_h36m_topology()), ParameterError);
  spec = MotionSpec{};
  spec.amplitude_mm = 0;
  EXPECT_THROW(spec.validate(), ParameterError);
  EXPECT_THROW(motion_kind_from_string("dance"), ParameterError);
}

TEST(Projection, PinholeExamples) {
  CameraSpec cam;
  PoseSequence pts(1, 2, 3);
  pts.at(0, 1, 0) = 100.0;  // off-axis point
  pts.at(0, 1, 2) = 50.0;
  const auto a = project(pts, cam, 0);
  EXPECT_NEAR(a.at(0, 0, 0), 500.0, 1e-9);
  EXPECT_NEAR(a.at(0, 0, 1), 500.0, 1e-9);
  EXPECT_EQ(a.at(0, 0, 2), 1.0);
  EXPECT_EQ(a.at(0, 1, 2), 1.0);
  auto cam2 = cam;
  cam2.focal_px *= 2.0;
  const auto b = project(pts, cam2, 0);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(b.at(0, 1, c) - 500.0, 2.0 * (a.at(0, 1, c) - 500.0), 1e-9);
}

TEST(Projection, NoiseAndConfidence) {
  MotionSpec spec;
  const auto s = generate_motion(spec, default_h36m_topology());
  CameraSpec cam;
  cam.noise_std_px = 3.0;
  cam.confidence_model = ConfidenceModel::kNoiseInverse;
  const auto clean = project(s, CameraSpec{}, 0);
  const auto noisy = project(s, cam, 4);
  EXPECT_EQ(noisy, project(s, cam, 4));
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t j = 0; j < 17; ++j) {
      const double du = noisy.at(t, j, 0) - clean.at(t, j, 0);
      const double dv = noisy.at(t, j, 1) - clean.at(t, j, 1);
      EXPECT_NEAR(noisy.at(t, j, 2), 1.0 / (1.0 + std::hypot(du, dv) / 3.0), 1e-9);
      EXPECT_GT(noisy.at(t, j, 2), 0.0);
      EXPECT_LE(noisy.at(t, j, 2), 1.0);
    }
  }
}

TEST(Projection, BehindCameraNamesJoint) {
  PoseSequence pts(2, 3, 3);
  pts.at(1, 2, 1) = 5000.0;
  try {
    project(pts, CameraSpec{}, 0);
    FAIL();
  } catch (const ParameterError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("frame 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("joint 2"), std::string::npos) << msg;
  }
}

TEST(Projection, ReprojectionIsExact) {
  const auto data = generate_dataset(manifest_from_json(small_manifest()));
  for (const auto& seq : data) {
    if (seq.camera.noise_std_px != 0.0) continue;
    EXPECT_EQ(project(seq.pose3d, seq.camera, 0), seq.pose2d);
  }
}

TEST(PoseIo, RoundTripAndErrors) {
  PoseSequence s(4, 17, 3, 25.0);
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = std::sin(static_cast<double>(i)) * 1e3;
  const auto bytes = encode_pose_sequence(s);
  EXPECT_EQ(bytes.size(), kPoseHeaderBytes + s.data.size() * 8);
  EXPECT_EQ(decode_pose_sequence(bytes), s);

  auto trunc = bytes;
  trunc.resize(bytes.size() - 5);
  try {
    decode_pose_sequence(trunc);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kTruncated);
    EXPECT_EQ(e.byte_offset(), trunc.size());
  }
  auto ver = bytes;
  ver[4] = 2;
  try {
    decode_pose_sequence(ver);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kVersionMismatch);
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  auto magic = bytes;
  magic[1] = 'X';
  try {
    decode_pose_sequence(magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kMalformedHeader);
  }

  const auto dir = scratch("io");
  write_pose_file(dir / "a.pseq", s);
  EXPECT_EQ(read_pose_file(dir / "a.pseq"), s);
  try {
    read_pose_file(dir / "a.pseq", std::array<std::size_t, 3>{4, 16, 3});
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kShapeMismatch);
  }
  EXPECT_THROW(read_pose_file(dir / "missing.pseq"), IoError);
}

TEST(Dataset, ParallelEqualsSerial) {
  const auto m = manifest_from_json(small_manifest());
  const auto serial = generate_dataset(m, 1);
  const auto parallel = generate_dataset(m, 4);
  ASSERT_EQ(serial.size(), 7u);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].pose2d, parallel[i].pose2d);
    EXPECT_EQ(serial[i].pose3d, parallel[i].pose3d);
  }
  EXPECT_NE(serial[0].pose3d.data, serial[1].pose3d.data);
}

TEST(Dataset, ThreadsFromEnv) {
  ::setenv("MASC_THREADS", "3", 1);
  EXPECT_EQ(threads_from_env(), 3u);
  ::setenv("MASC_THREADS", "zero", 1);
  EXPECT_THROW(threads_from_env(), ConfigError);
  ::unsetenv("MASC_THREADS");
  EXPECT_EQ(threads_from_env(), 1u);
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const auto m = manifest_from_json(small_manifest());
  const auto a = scratch("regen_a"), b = scratch("regen_b");
  write_dataset(a, m, generate_dataset(m, 1));
  write_dataset(b, m, generate_dataset(m, 3));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 1u + 2u * 7u);
  const auto ds = load_dataset(a);
  EXPECT_EQ(ds.train.size(), 5u);
  EXPECT_EQ(ds.eval.size(), 2u);
  EXPECT_EQ(ds.train[0].input.channels, 3u);
}

TEST(Dataset, ManifestErrors) {
  auto j = small_manifest();
  j["sequences"][0]["split"] = "test";
  EXPECT_THROW(manifest_from_json(j), ConfigError);
  j = small_manifest();
  j["sequences"] = nlohmann::json::array();
  EXPECT_THROW(manifest_from_json(j), ConfigError);
  EXPECT_THROW(load_manifest("/nonexistent/manifest.json"), IoError);
}

TEST(Dataset, SampleNormalization) {
  const auto data = generate_dataset(manifest_from_json(small_manifest()));
  const auto s = make_sample(data[0]);
  const auto& cam = data[0].camera;
  EXPECT_DOUBLE_EQ(s.input.at(3, 5, 0), (data[0].pose2d.at(3, 5, 0) - cam.principal_point[0]) / cam.focal_px);
  EXPECT_DOUBLE_EQ(s.input.at(3, 5, 1), (data[0].pose2d.at(3, 5, 1) - cam.principal_point[1]) / cam.focal_px);
  EXPECT_EQ(s.target, data[0].pose3d);
}
