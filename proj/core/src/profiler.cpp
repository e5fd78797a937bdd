#include "masc/profiler.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

namespace masc {

CostReport count_cost(const ModelConfig& cfg, const SkeletonTopology& topo) {
  cfg.validate();
  using u64 = std::uint64_t;
  const u64 t = static_cast<u64>(cfg.seq_len);
  const u64 j = static_cast<u64>(cfg.num_joints);
  const u64 d = static_cast<u64>(cfg.dim);
  const u64 c_in = static_cast<u64>(cfg.in_channels);
  const u64 c_out = static_cast<u64>(cfg.out_channels);
  const u64 k = static_cast<u64>(cfg.topk);
  const u64 s = cfg.temporal_scales.size();
  const u64 h = static_cast<u64>(cfg.selector_hidden());
  const u64 nnz = k_hop_adjacency(topo, static_cast<std::size_t>(cfg.hop)).sparse.nnz();

  CostReport r;
  r.seq_len = cfg.seq_len;
  auto add = [&](std::string name, u64 params, u64 macs, bool per_sequence = false) {
    r.modules.push_back({std::move(name), params, macs, per_sequence});
  };

  add("embed", c_in * d + d + j * d, t * j * c_in * d);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    if (cfg.flags.use_sagcn) add(p + "sagcn", 2 * (d * d + d) + 2, 2 * t * j * d * d + t * nnz * d);
    if (cfg.flags.use_amtm) {
      const bool multi = cfg.flags.multiscale_fusion;
      if (multi && cfg.flags.adaptive_aggregation) add(p + "amtm.selector", d * h + h + h * s + s, j * (d * h + h * s), true);
      for (u64 i = 0; i < s; ++i) {
        if (!multi && i != cfg.single_scale_index()) continue;
        const u64 w = static_cast<u64>(cfg.temporal_scales[i]);
        add(p + "amtm.stgc" + std::to_string(i), 2 * (d * d + d) + 2 * d,
            2 * t * j * d * d + t * k * j * d + t * w * j * d);
      }
    }
    add(p + "fusion", 2 * d * 2 + 2, t * j * 2 * d * 2);
  }
  add("layer_fusion", static_cast<u64>(cfg.num_layers), 0);
  add("head", d * c_out + c_out, t * j * d * c_out);

  for (const auto& m : r.modules) {
    r.params_total += m.params;
    r.macs_total += m.macs;
    if (m.per_sequence) r.macs_static += m.macs;
  }
  r.macs_per_frame = (r.macs_total - r.macs_static) / t;
  return r;
}

nlohmann::json cost_report_to_json(const CostReport& r) {
  nlohmann::json modules = nlohmann::json::array();
  for (const auto& m : r.modules) {
    modules.push_back({{"name", m.name}, {"params", m.params}, {"macs", m.macs}, {"per_sequence", m.per_sequence}});
  }
  return {{"params_total", r.params_total}, {"macs_total", r.macs_total}, {"macs_static", r.macs_static},
          {"macs_per_frame", r.macs_per_frame}, {"seq_len", r.seq_len},     {"modules", modules}};
}

std::string cost_report_table(const CostReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %18s\n", "module", "params", "macs");
  out += line;
  for (const auto& m : r.modules) {
    std::snprintf(line, sizeof line, "%-28s %14llu %18llu%s\n", m.name.c_str(), static_cast<unsigned long long>(m.params),
                  static_cast<unsigned long long>(m.macs), m.per_sequence ? "  (per sequence)" : "");
    out += line;
  }
  std::snprintf(line, sizeof line, "%-28s %14llu %18llu\n", "total", static_cast<unsigned long long>(r.params_total),
                static_cast<unsigned long long>(r.macs_total));
  out += line;
  std::snprintf(line, sizeof line, "macs/frame (T=%d): %llu\n", r.seq_len, static_cast<unsigned long long>(r.macs_per_frame));
  out += line;
  return out;
}

}  // namespace masc
