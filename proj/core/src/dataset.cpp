#include "masc/dataset.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "masc/errors.hpp"
#include "masc/pose_io.hpp"

namespace masc {

namespace {

std::string sequence_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", i);
  return buf;
}

struct Job {
  std::size_t entry;
  std::size_t index;
};

}  // namespace

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  try {
    m.name = j.value("name", m.name);
    m.seed = j.value("seed", m.seed);
    if (j.contains("topology")) {
      const auto& topo = j.at("topology");
      if (topo.is_string()) {
        const std::string name = topo.get<std::string>();
        if (name != "default") m.topology = load_topology(base_dir / name);
      } else {
        m.topology = topology_from_json(topo);
      }
    }
    for (const auto& e : j.at("sequences")) {
      ManifestEntry entry;
      entry.motion = motion_from_json(e.at("motion"));
      if (e.contains("camera")) entry.camera = camera_from_json(e.at("camera"));
      entry.seed = e.value("seed", entry.seed);
      entry.count = e.value("count", entry.count);
      entry.split = e.value("split", entry.split);
      if (entry.count < 1) throw ConfigError("manifest entry count must be >= 1");
      if (entry.split != "train" && entry.split != "eval") {
        throw ConfigError("manifest split must be \"train\" or \"eval\", got \"" + entry.split + "\"");
      }
      m.entries.push_back(entry);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset manifest: ") + e.what());
  }
  if (m.entries.empty()) throw ConfigError("dataset manifest lists no sequences");
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

unsigned threads_from_env() {
  const char* env = std::getenv("MASC_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("MASC_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<unsigned>(v);
}

std::vector<GeneratedSequence> generate_dataset(const DatasetManifest& manifest, unsigned threads) {
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < manifest.entries.size(); ++e) {
    for (int c = 0; c < manifest.entries[e].count; ++c) jobs.push_back({e, jobs.size()});
  }
  std::vector<GeneratedSequence> out(jobs.size());
  auto run = [&](std::size_t i) {
    const Job& job = jobs[i];
    const ManifestEntry& entry = manifest.entries[job.entry];
    std::seed_seq seq{static_cast<std::uint32_t>(manifest.seed), static_cast<std::uint32_t>(manifest.seed >> 32),
                      static_cast<std::uint32_t>(job.index), static_cast<std::uint32_t>(entry.seed),
                      static_cast<std::uint32_t>(entry.seed >> 32)};
    std::mt19937_64 rng(seq);
    MotionSpec motion = entry.motion;
    motion.seed = rng();
    const std::uint64_t camera_seed = rng();
    GeneratedSequence& g = out[i];
    g.id = sequence_id(job.index);
    g.split = entry.split;
    g.kind = motion.kind;
    g.camera = entry.camera;
    g.pose3d = generate_motion(motion, manifest.topology);
    g.pose2d = project(g.pose3d, entry.camera, camera_seed);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < jobs.size(); i += threads) run(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::vector<GeneratedSequence>& sequences) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());
  nlohmann::json index;
  index["name"] = manifest.name;
  index["topology"] = topology_to_json(manifest.topology);
  index["sequences"] = nlohmann::json::array();
  for (const auto& s : sequences) {
    write_pose_file(dir / (s.id + ".2d.pseq"), s.pose2d);
    write_pose_file(dir / (s.id + ".3d.pseq"), s.pose3d);
    index["sequences"].push_back({{"id", s.id},
                                  {"split", s.split},
                                  {"kind", to_string(s.kind)},
                                  {"frames", s.pose3d.frames},
                                  {"camera", camera_to_json(s.camera)}});
  }
  const std::string text = index.dump(2) + "\n";
  write_file_bytes(dir / "index.json", std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Sample make_sample(const GeneratedSequence& seq) {
  Sample s;
  s.id = seq.id;
  s.kind = seq.kind;
  s.target = seq.pose3d;
  s.input = seq.pose2d;
  const double f = seq.camera.focal_px;
  for (std::size_t t = 0; t < s.input.frames; ++t) {
    for (std::size_t j = 0; j < s.input.joints; ++j) {
      s.input.at(t, j, 0) = (seq.pose2d.at(t, j, 0) - seq.camera.principal_point[0]) / f;
      s.input.at(t, j, 1) = (seq.pose2d.at(t, j, 1) - seq.camera.principal_point[1]) / f;
    }
  }
  return s;
}

Dataset make_dataset(const DatasetManifest& manifest, const std::vector<GeneratedSequence>& sequences) {
  Dataset d;
  d.name = manifest.name;
  d.topology = manifest.topology;
  for (const auto& s : sequences) (s.split == "eval" ? d.eval : d.train).push_back(make_sample(s));
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "index.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset index '" + path.string() + "'");
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset index '" + path.string() + "' is not valid JSON: " + e.what());
  }
  Dataset d;
  try {
    d.name = index.value("name", std::string("synthetic"));
    d.topology = topology_from_json(index.at("topology"));
    const std::size_t joints = d.topology.num_joints();
    for (const auto& e : index.at("sequences")) {
      GeneratedSequence g;
      g.id = e.at("id").get<std::string>();
      g.split = e.value("split", std::string("train"));
      g.kind = motion_kind_from_string(e.at("kind").get<std::string>());
      g.camera = camera_from_json(e.at("camera"));
      const auto frames = e.at("frames").get<std::size_t>();
      g.pose2d = read_pose_file(dir / (g.id + ".2d.pseq"), std::array<std::size_t, 3>{frames, joints, 3});
      g.pose3d = read_pose_file(dir / (g.id + ".3d.pseq"), std::array<std::size_t, 3>{frames, joints, 3});
      (g.split == "eval" ? d.eval : d.train).push_back(make_sample(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset index '" + path.string() + "': " + e.what());
  }
  if (d.train.empty()) throw ConfigError("dataset '" + dir.string() + "' has no training sequences");
  spdlog::debug("loaded dataset {}: {} train, {} eval", d.name, d.train.size(), d.eval.size());
  return d;
}

}  // namespace masc
