#include "masc/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <queue>
#include <set>

#include <nlohmann/json.hpp>

#include "masc/errors.hpp"

namespace masc {

std::string to_string(BodyGroup group) {
  switch (group) {
    case BodyGroup::kLowerBody: return "lower_body";
    case BodyGroup::kTorso: return "torso";
    case BodyGroup::kUpperBody: return "upper_body";
  }
  return "unknown";
}

BodyGroup body_group_from_string(const std::string& name) {
  if (name == "lower_body") return BodyGroup::kLowerBody;
  if (name == "torso") return BodyGroup::kTorso;
  if (name == "upper_body") return BodyGroup::kUpperBody;
  throw ConfigError("unknown body group '" + name + "'");
}

SkeletonTopology::SkeletonTopology(std::size_t num_joints, std::vector<std::pair<std::size_t, std::size_t>> edges,
                                   std::vector<std::string> joint_names, std::vector<BodyGroup> groups)
    : num_joints_(num_joints),
      edges_(std::move(edges)),
      joint_names_(std::move(joint_names)),
      groups_(std::move(groups)) {
  if (num_joints_ == 0) throw ConfigError("skeleton needs at least one joint");
  if (joint_names_.size() != num_joints_) {
    throw ConfigError("skeleton has " + std::to_string(joint_names_.size()) + " names for " +
                      std::to_string(num_joints_) + " joints");
  }
  if (groups_.size() != num_joints_) throw ConfigError("body groups do not cover every joint exactly once");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [a, b] : edges_) {
    if (a >= num_joints_ || b >= num_joints_) {
      throw ConfigError("edge (" + std::to_string(a) + ", " + std::to_string(b) + ") out of range");
    }
    if (a == b) throw ConfigError("self-loop edge on joint " + std::to_string(a));
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw ConfigError("duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
    }
  }
  const auto adj = adjacency_lists();
  std::vector<bool> reached(num_joints_, false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  reached[0] = true;
  while (!frontier.empty()) {
    const std::size_t j = frontier.front();
    frontier.pop();
    for (std::size_t nb : adj[j]) {
      if (!reached[nb]) {
        reached[nb] = true;
        frontier.push(nb);
      }
    }
  }
  if (std::find(reached.begin(), reached.end(), false) != reached.end()) {
    throw ConfigError("skeleton graph is not connected");
  }
}

std::vector<std::size_t> SkeletonTopology::joints_in(BodyGroup group) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < num_joints_; ++j) {
    if (groups_[j] == group) out.push_back(j);
  }
  return out;
}

std::vector<std::vector<std::size_t>> SkeletonTopology::adjacency_lists() const {
  std::vector<std::vector<std::size_t>> adj(num_joints_);
  for (const auto& [a, b] : edges_) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

SkeletonTopology default_h36m_topology() {
  using G = BodyGroup;
  return SkeletonTopology(
      17,
      {{0, 1}, {1, 2}, {2, 3}, {0, 4}, {4, 5}, {5, 6}, {0, 7}, {7, 8},
       {8, 9}, {9, 10}, {8, 11}, {11, 12}, {12, 13}, {8, 14}, {14, 15}, {15, 16}},
      {"pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax", "neck", "head",
       "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist"},
      {G::kTorso, G::kLowerBody, G::kLowerBody, G::kLowerBody, G::kLowerBody, G::kLowerBody, G::kLowerBody,
       G::kTorso, G::kTorso, G::kTorso, G::kTorso, G::kUpperBody, G::kUpperBody, G::kUpperBody, G::kUpperBody,
       G::kUpperBody, G::kUpperBody});
}

nlohmann::json topology_to_json(const SkeletonTopology& topo) {
  nlohmann::json j;
  j["num_joints"] = topo.num_joints();
  j["edges"] = nlohmann::json::array();
  for (const auto& [a, b] : topo.edges()) j["edges"].push_back({a, b});
  j["joint_names"] = topo.joint_names();
  nlohmann::json groups = nlohmann::json::object();
  for (BodyGroup g : kBodyGroups) groups[to_string(g)] = topo.joints_in(g);
  j["groups"] = groups;
  return j;
}

SkeletonTopology topology_from_json(const nlohmann::json& j) {
  try {
    const auto num_joints = j.at("num_joints").get<std::size_t>();
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("each edge must be a pair of joint indices");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    auto names = j.at("joint_names").get<std::vector<std::string>>();
    std::vector<int> assigned(num_joints, -1);
    for (const auto& [group_name, members] : j.at("groups").items()) {
      const BodyGroup g = body_group_from_string(group_name);
      for (const auto& m : members) {
        const auto idx = m.get<std::size_t>();
        if (idx >= num_joints) throw ConfigError("group member " + std::to_string(idx) + " out of range");
        if (assigned[idx] != -1) throw ConfigError("joint " + std::to_string(idx) + " belongs to two groups");
        assigned[idx] = static_cast<int>(g);
      }
    }
    std::vector<BodyGroup> groups;
    for (std::size_t i = 0; i < num_joints; ++i) {
      if (assigned[i] == -1) throw ConfigError("joint " + std::to_string(i) + " has no body group");
      groups.push_back(static_cast<BodyGroup>(assigned[i]));
    }
    return SkeletonTopology(num_joints, std::move(edges), std::move(names), std::move(groups));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed topology JSON: ") + e.what());
  }
}

SkeletonTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topology file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("topology file '" + path + "' is not valid JSON: " + e.what());
  }
  return topology_from_json(j);
}

SpatialAdjacency k_hop_adjacency(const SkeletonTopology& topo, std::size_t hop) {
  if (hop < 1) throw ParameterError("hop count K must be >= 1");
  const std::size_t n = topo.num_joints();
  const auto adj = topo.adjacency_lists();

  // Boolean reachability within `hop` steps, grown one bone at a time.
  std::vector<std::uint8_t> reach(n * n, 0);
  std::vector<std::uint8_t> frontier(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) frontier[i * n + i] = 1;
  std::vector<std::uint8_t> visited = frontier;
  for (std::size_t step = 0; step < hop; ++step) {
    std::vector<std::uint8_t> next(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!frontier[i * n + j]) continue;
        for (std::size_t nb : adj[j]) {
          if (!visited[i * n + nb]) {
            next[i * n + nb] = 1;
            visited[i * n + nb] = 1;
          }
        }
      }
    }
    frontier = std::move(next);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) reach[i * n + j] = (i != j && visited[i * n + j]) ? 1 : 0;
  }

  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) degree[i] += reach[i * n + j];
  }
  SpatialAdjacency out;
  out.num_joints = n;
  out.hop = hop;
  out.matrix.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (reach[i * n + j]) out.matrix[i * n + j] = 1.0 / (std::sqrt(degree[i]) * std::sqrt(degree[j]));
    }
  }
  out.sparse = SparseMatrix::from_dense(n, n, out.matrix);
  return out;
}

}  // namespace masc
