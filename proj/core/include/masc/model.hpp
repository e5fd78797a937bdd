#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masc/ops.hpp"
#include "masc/pose_sequence.hpp"
#include "masc/skeleton.hpp"
#include "masc/tensor.hpp"

namespace masc {

/// Component switches behind the ablation variants.
struct AblationFlags {
  bool use_amtm = true;
  bool use_sagcn = true;
  bool adaptive_aggregation = true;  // off: fixed 1/S average of the scale branches
  bool multiscale_fusion = true;     // off: AMTM keeps only its middle scale branch

  bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
  int num_layers = 16;
  int dim = 128;
  int num_joints = 17;
  int seq_len = 243;
  std::vector<int> temporal_scales = {9, 27, 81};
  int topk = 3;
  int hop = 1;
  int in_channels = 3;
  int out_channels = 3;
  /// Head outputs are multiplied by this to give millimetres.
  double output_scale_mm = 1000.0;
  AblationFlags flags;

  /// Throws ConfigError on any violated invariant (scale divisibility,
  /// ordering, k <= smallest scale, positive sizes).
  void validate() const;
  int selector_hidden() const { return dim / 4 > 0 ? dim / 4 : 1; }
  /// Index of the branch kept when multi-scale fusion is ablated.
  std::size_t single_scale_index() const { return temporal_scales.size() / 2; }

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json config_to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_model_config(const std::string& path);

/// Gate values observed during one forward pass, for invariant checks and
/// the scale-weight dump.
struct LayerGates {
  double w_self = 0.0;
  double w_nei = 0.0;
  std::vector<double> scale_weights;  // B x J x S, empty when AMTM runs a single branch
  std::vector<double> fusion;         // B x T x J x 2 (alpha, beta)
};

struct GateTrace {
  std::size_t batch = 0;
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t scales = 0;
  std::vector<LayerGates> layers;
  std::vector<double> layer_weights;  // progressive-fusion weights, one per layer
};

/// Recorded or replayed top-k routing masks, one entry per STGC call in
/// forward order. Replay freezes the temporal graphs so finite differences
/// see the same piecewise-smooth function as the analytic gradient.
struct RoutingTape {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<std::vector<SparseMatrix>> graphs;
  std::size_t cursor = 0;
};

struct ForwardContext {
  bool training = true;
  bool update_bn_stats = true;
  GateTrace* gates = nullptr;
  RoutingTape* routing = nullptr;
  /// When set, AMTM uses these constant per-scale weights instead of the selector.
  std::optional<std::vector<double>> forced_scale_weights;
};

/// Named trainable tensors plus non-trainable buffers (BatchNorm statistics).
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  std::vector<double>& add_buffer(const std::string& name, std::vector<double> values);

  const std::vector<std::pair<std::string, Tensor>>& params() const noexcept { return params_; }
  std::vector<std::pair<std::string, Tensor>>& params() noexcept { return params_; }
  const std::map<std::string, std::vector<double>>& buffers() const noexcept { return buffers_; }
  std::map<std::string, std::vector<double>>& buffers() noexcept { return buffers_; }

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::vector<double>> buffers_;
};

/// 2D-to-3D lifting network: joint embedding with positional encoding,
/// L blocks of (spatial GCN -> multi-scale sparse temporal GCN -> gated
/// fusion with the block input), softmax-weighted layer fusion, linear head.
class PoseLifter {
 public:
  PoseLifter(ModelConfig cfg, SkeletonTopology topo, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const SkeletonTopology& topology() const noexcept { return topo_; }
  const SpatialAdjacency& spatial_adjacency() const noexcept { return adjacency_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }

  /// x: [B, T, J, C_in] or [T, J, C_in]; returns millimetres with the same
  /// leading layout and C_out channels. Throws NumericFault naming the layer
  /// if an activation turns non-finite.
  Tensor forward(const Tensor& x, ForwardContext& ctx);

  /// Inference on one sequence (eval mode, no graph).
  PoseSequence predict(const PoseSequence& input) ;

  // Individual stages, exposed for tests and tools. Shapes are [B, T, J, D].
  Tensor embed(const Tensor& x) const;
  Tensor sagcn(const Tensor& x, int layer, ForwardContext& ctx) const;
  Tensor window_selector(const Tensor& h, int layer) const;
  Tensor stgc(const Tensor& h, int layer, std::size_t scale_index, ForwardContext& ctx);
  /// Returns the aggregated output; branch outputs are appended to `branches` when given.
  Tensor amtm(const Tensor& h, int layer, ForwardContext& ctx, std::vector<Tensor>* branches = nullptr);
  Tensor block(const Tensor& x, int layer, ForwardContext& ctx);

  /// Builds the row-normalized temporal graphs of one STGC call from
  /// features [B, T, J, D] at window length `window`.
  std::vector<SparseMatrix> temporal_graphs(const Tensor& h, std::size_t window) const;

 private:
  std::string prefix(int layer) const { return "block" + std::to_string(layer) + "."; }
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  SkeletonTopology topo_;
  SpatialAdjacency adjacency_;
  ParameterStore store_;
};

/// [T, J, C] view of a sequence as a leaf tensor with batch size 1.
Tensor to_tensor(const PoseSequence& seq);
/// Stack equally shaped sequences into [B, T, J, C].
Tensor stack_sequences(const std::vector<const PoseSequence*>& seqs);
PoseSequence to_pose_sequence(const Tensor& t, double fps, std::size_t batch_index = 0);

/// Split [T, ...] into [T/w, w, ...] windows and back. Pure reshapes.
Tensor partition_windows(const Tensor& h, std::size_t window);
Tensor unpartition_windows(const Tensor& windows);

}  // namespace masc
