#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masc/model.hpp"

namespace masc {

struct ModuleCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  bool per_sequence = false;  // cost independent of T (the window selector)
};

/// Closed-form cost of one forward pass over a single sequence of
/// cfg.seq_len frames. Only matmul and graph-aggregation multiplies count;
/// activations, softmax, BatchNorm and top-k selection are free.
struct CostReport {
  std::uint64_t params_total = 0;
  std::uint64_t macs_total = 0;
  std::uint64_t macs_static = 0;     // part of macs_total that does not grow with T
  std::uint64_t macs_per_frame = 0;  // (macs_total - macs_static) / T
  int seq_len = 0;
  std::vector<ModuleCost> modules;
};

CostReport count_cost(const ModelConfig& cfg, const SkeletonTopology& topo = default_h36m_topology());

nlohmann::json cost_report_to_json(const CostReport& report);
std::string cost_report_table(const CostReport& report);

}  // namespace masc
