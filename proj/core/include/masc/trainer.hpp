#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masc/dataset.hpp"
#include "masc/losses.hpp"
#include "masc/metrics.hpp"
#include "masc/model.hpp"
#include "masc/optimizer.hpp"

namespace masc {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int epochs = 80;
  int batch_size = 6;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 writes only the final one
  int eval_every = 1;        // epochs between evaluations; 0 disables
  double lr_decay = 1.0;     // per-epoch multiplicative factor; 1 keeps the rate constant
  std::int64_t max_steps = 0;  // stop after this many optimizer steps; 0 = no limit

  void validate() const;
  AdamOptions adam() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

struct EpochLog {
  std::uint64_t step = 0;  // optimizer steps completed at the end of the epoch
  int epoch = 0;
  double l_m = 0.0;
  double l_s = 0.0;
  double l_v = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  std::optional<double> mpjpe_eval;
};

nlohmann::json epoch_log_to_json(const EpochLog& log);

struct StepInfo {
  std::uint64_t step = 0;  // 1-based index of the optimizer step just taken
  int epoch = 0;
  LossBreakdown loss;      // losses of the forward that produced this step's gradients
  const GateTrace* gates = nullptr;  // gates seen by that forward (parameters before the update)
};

struct TrainHooks {
  std::function<void(const StepInfo&, PoseLifter&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
  /// Record gates on every training forward (needed by on_step consumers).
  bool trace_gates = false;
};

struct TrainResult {
  std::uint64_t steps = 0;
  std::vector<EpochLog> log;
  double initial_train_mpjpe = 0.0;  // L_m of the first training forward
  double final_train_mpjpe = 0.0;    // training-set MPJPE after the last update (train-mode BN, stats frozen)
};

/// Deterministic training loop. When `out_dir` is given, writes train_log.jsonl,
/// periodic checkpoints, model.ckpt and trainer_state.bin there.
TrainResult train(PoseLifter& model, const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {},
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Training-mode MPJPE over `samples` without updating BatchNorm statistics.
double train_mode_mpjpe(PoseLifter& model, const std::vector<Sample>& samples, int batch_size);
/// Eval-mode predictions and metrics over `samples`.
MetricReport evaluate_model(PoseLifter& model, const std::vector<Sample>& samples);

// Ablation harness.
inline constexpr const char* kAblationVariants[] = {"baseline",        "only_amtm",           "only_sagcn",
                                                    "no_adaptive_agg", "no_multiscale_fusion", "full"};
AblationFlags ablation_flags(const std::string& variant);

struct AblationResult {
  std::string variant;
  std::size_t params = 0;
  std::uint64_t macs_per_frame = 0;
  MetricReport report;
  TrainResult training;
};

AblationResult run_ablation(const std::string& variant, ModelConfig model_cfg, const TrainConfig& train_cfg,
                            const Dataset& data);
nlohmann::json ablation_results_to_json(const std::vector<AblationResult>& results);
std::string ablation_table(const std::vector<AblationResult>& results);

// Scale-weight dump.
struct GroupGateRow {
  BodyGroup group = BodyGroup::kTorso;
  std::vector<double> weights;  // one per temporal scale, short to long
};

/// Per-joint selector weights averaged over layers and samples (eval mode),
/// then over the joints of each body group.
std::vector<GroupGateRow> gate_profile(PoseLifter& model, const std::vector<Sample>& samples);
std::string gate_profile_csv(const std::vector<GroupGateRow>& rows);

}  // namespace masc
