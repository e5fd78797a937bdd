#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "masc/pose_sequence.hpp"
#include "masc/skeleton.hpp"
#include "masc/synth.hpp"

namespace masc {

struct ManifestEntry {
  MotionSpec motion;  // motion.seed is replaced by the derived per-sequence seed
  CameraSpec camera;
  std::uint64_t seed = 0;
  int count = 1;
  std::string split = "train";  // "train" or "eval"
};

/// {"name", "seed", optional "topology" (file path, relative to the manifest),
///  "sequences": [{"motion", "camera", "seed", "count", "split"}]}
struct DatasetManifest {
  std::string name = "synthetic";
  std::uint64_t seed = 0;
  SkeletonTopology topology = default_h36m_topology();
  std::vector<ManifestEntry> entries;
};

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);

struct GeneratedSequence {
  std::string id;
  std::string split;
  MotionKind kind = MotionKind::kGaitCycle;
  CameraSpec camera;
  PoseSequence pose2d;  // u_px, v_px, confidence
  PoseSequence pose3d;  // root-relative mm
};

/// The RNG stream of sequence i is seeded from (manifest seed, i, entry seed),
/// so the result does not depend on `threads`.
std::vector<GeneratedSequence> generate_dataset(const DatasetManifest& manifest, unsigned threads = 1);

/// Thread count from MASC_THREADS (default 1).
unsigned threads_from_env();

/// Writes index.json plus seq_XXXX.2d.pseq / seq_XXXX.3d.pseq files.
void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::vector<GeneratedSequence>& sequences);

struct Sample {
  std::string id;
  MotionKind kind = MotionKind::kGaitCycle;
  PoseSequence input;   // ((u - cx) / f, (v - cy) / f, confidence)
  PoseSequence target;  // mm
};

struct Dataset {
  std::string name;
  SkeletonTopology topology = default_h36m_topology();
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

/// Camera-normalized network input for one generated sequence.
Sample make_sample(const GeneratedSequence& seq);
Dataset make_dataset(const DatasetManifest& manifest, const std::vector<GeneratedSequence>& sequences);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace masc
