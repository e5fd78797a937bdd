#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masc/ops.hpp"

namespace masc {

enum class BodyGroup { kLowerBody = 0, kTorso = 1, kUpperBody = 2 };

inline constexpr std::array<BodyGroup, 3> kBodyGroups = {BodyGroup::kLowerBody, BodyGroup::kTorso,
                                                         BodyGroup::kUpperBody};

std::string to_string(BodyGroup group);
BodyGroup body_group_from_string(const std::string& name);

/// Joint set, bone list and body-part grouping of a single skeleton.
/// Construction validates: edge indices in range, no duplicates or
/// self-loops, a connected graph, and groups that partition the joints.
class SkeletonTopology {
 public:
  SkeletonTopology(std::size_t num_joints, std::vector<std::pair<std::size_t, std::size_t>> edges,
                   std::vector<std::string> joint_names, std::vector<BodyGroup> groups);

  std::size_t num_joints() const noexcept { return num_joints_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const noexcept { return edges_; }
  const std::vector<std::string>& joint_names() const noexcept { return joint_names_; }
  const std::vector<BodyGroup>& groups() const noexcept { return groups_; }
  std::vector<std::size_t> joints_in(BodyGroup group) const;

  /// Neighbour lists (sorted) of the bone graph.
  std::vector<std::vector<std::size_t>> adjacency_lists() const;

  bool operator==(const SkeletonTopology& other) const = default;

 private:
  std::size_t num_joints_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::string> joint_names_;
  std::vector<BodyGroup> groups_;
};

/// Conventional 17-joint Human3.6M skeleton rooted at the pelvis.
SkeletonTopology default_h36m_topology();

nlohmann::json topology_to_json(const SkeletonTopology& topo);
SkeletonTopology topology_from_json(const nlohmann::json& j);
SkeletonTopology load_topology(const std::string& path);

/// Normalized K-hop spatial adjacency D^{-1/2} A D^{-1/2}, where A marks
/// joint pairs within K bones of each other (self excluded).
struct SpatialAdjacency {
  std::size_t num_joints = 0;
  std::size_t hop = 1;
  std::vector<double> matrix;  // row-major J x J
  SparseMatrix sparse;

  double at(std::size_t i, std::size_t j) const { return matrix[i * num_joints + j]; }
};

SpatialAdjacency k_hop_adjacency(const SkeletonTopology& topo, std::size_t hop);

}  // namespace masc
