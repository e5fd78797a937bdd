#include "masc/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "masc/errors.hpp"

namespace masc {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_layers <= 0) fail("num_layers must be positive");
  if (dim <= 0) fail("dim must be positive");
  if (num_joints <= 0) fail("num_joints must be positive");
  if (seq_len <= 0) fail("seq_len must be positive");
  if (in_channels <= 0 || out_channels <= 0) fail("channel counts must be positive");
  if (hop < 1) fail("hop must be >= 1");
  if (!(output_scale_mm > 0.0)) fail("output_scale_mm must be positive");
  if (temporal_scales.empty()) fail("at least one temporal scale is required");
  for (std::size_t i = 0; i < temporal_scales.size(); ++i) {
    const int w = temporal_scales[i];
    if (w <= 0) fail("temporal scales must be positive");
    if (i > 0 && w <= temporal_scales[i - 1]) fail("temporal scales must be strictly increasing");
    if (seq_len % w != 0) {
      fail("scale " + std::to_string(w) + " does not divide seq_len " + std::to_string(seq_len));
    }
  }
  if (topk < 1 || topk > temporal_scales.front()) {
    fail("topk must lie in [1, " + std::to_string(temporal_scales.front()) + "]");
  }
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {
      {"num_layers", cfg.num_layers},
      {"dim", cfg.dim},
      {"num_joints", cfg.num_joints},
      {"seq_len", cfg.seq_len},
      {"temporal_scales", cfg.temporal_scales},
      {"topk", cfg.topk},
      {"hop", cfg.hop},
      {"in_channels", cfg.in_channels},
      {"out_channels", cfg.out_channels},
      {"output_scale_mm", cfg.output_scale_mm},
      {"ablation",
       {{"use_amtm", cfg.flags.use_amtm},
        {"use_sagcn", cfg.flags.use_sagcn},
        {"adaptive_aggregation", cfg.flags.adaptive_aggregation},
        {"multiscale_fusion", cfg.flags.multiscale_fusion}}},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"num_layers", "dim",         "num_joints",  "seq_len",
                                              "temporal_scales", "topk",   "hop",         "in_channels",
                                              "out_channels",    "output_scale_mm", "ablation"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("model config: unknown key '" + key + "'");
  }
  ModelConfig cfg;
  try {
    cfg.num_layers = j.value("num_layers", cfg.num_layers);
    cfg.dim = j.value("dim", cfg.dim);
    cfg.num_joints = j.value("num_joints", cfg.num_joints);
    cfg.seq_len = j.value("seq_len", cfg.seq_len);
    cfg.temporal_scales = j.value("temporal_scales", cfg.temporal_scales);
    cfg.topk = j.value("topk", cfg.topk);
    cfg.hop = j.value("hop", cfg.hop);
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
    cfg.out_channels = j.value("out_channels", cfg.out_channels);
    cfg.output_scale_mm = j.value("output_scale_mm", cfg.output_scale_mm);
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      cfg.flags.use_amtm = a.value("use_amtm", cfg.flags.use_amtm);
      cfg.flags.use_sagcn = a.value("use_sagcn", cfg.flags.use_sagcn);
      cfg.flags.adaptive_aggregation = a.value("adaptive_aggregation", cfg.flags.adaptive_aggregation);
      cfg.flags.multiscale_fusion = a.value("multiscale_fusion", cfg.flags.multiscale_fusion);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  for (const auto& [existing, tensor] : params_) {
    if (existing == name) throw ContractError("duplicate parameter '" + name + "'");
  }
  t.set_requires_grad(true);
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

std::vector<double>& ParameterStore::add_buffer(const std::string& name, std::vector<double> values) {
  auto [it, inserted] = buffers_.emplace(name, std::move(values));
  if (!inserted) throw ContractError("duplicate buffer '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::param(const std::string& name) {
  for (auto& [existing, tensor] : params_) {
    if (existing == name) return tensor;
  }
  throw ContractError("no parameter named '" + name + "'");
}

const Tensor& ParameterStore::param(const std::string& name) const {
  for (const auto& [existing, tensor] : params_) {
    if (existing == name) return tensor;
  }
  throw ContractError("no parameter named '" + name + "'");
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

namespace {

void check_finite_activation(const Tensor& t, const std::string& where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericFault("non-finite activation in " + where);
  }
}

}  // namespace

PoseLifter::PoseLifter(ModelConfig cfg, SkeletonTopology topo, std::uint64_t seed)
    : cfg_(std::move(cfg)), topo_(std::move(topo)) {
  cfg_.validate();
  if (static_cast<std::size_t>(cfg_.num_joints) != topo_.num_joints()) {
    throw ConfigError("model expects " + std::to_string(cfg_.num_joints) + " joints but the skeleton has " +
                      std::to_string(topo_.num_joints()));
  }
  adjacency_ = k_hop_adjacency(topo_, static_cast<std::size_t>(cfg_.hop));
  init_params(seed);
}

void PoseLifter::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(cfg_.dim);
  const auto j = static_cast<std::size_t>(cfg_.num_joints);
  auto linear_params = [&](const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    store_.add(name + ".weight", Tensor::uniform({in, out}, -bound, bound, rng));
    store_.add(name + ".bias", Tensor::uniform({out}, -bound, bound, rng));
  };
  // Gating layers start at zero so every softmax gate is uniform at step 0.
  auto zero_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    store_.add(name + ".weight", Tensor::zeros({in, out}));
    store_.add(name + ".bias", Tensor::zeros({out}));
  };

  linear_params("embed", static_cast<std::size_t>(cfg_.in_channels), d);
  const double pos_bound = 1.0 / std::sqrt(static_cast<double>(d));
  store_.add("embed.pos", Tensor::uniform({1, j, d}, -pos_bound, pos_bound, rng));

  const std::size_t scales = cfg_.temporal_scales.size();
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = prefix(l);
    if (cfg_.flags.use_sagcn) {
      linear_params(p + "sagcn.self", d, d);
      linear_params(p + "sagcn.nei", d, d);
      store_.add(p + "sagcn.gate_logits", Tensor::zeros({2}));
    }
    if (cfg_.flags.use_amtm) {
      const bool multi = cfg_.flags.multiscale_fusion;
      if (multi && cfg_.flags.adaptive_aggregation) {
        const auto hidden = static_cast<std::size_t>(cfg_.selector_hidden());
        linear_params(p + "amtm.selector.fc1", d, hidden);
        zero_linear(p + "amtm.selector.fc2", hidden, scales);
      }
      for (std::size_t s = 0; s < scales; ++s) {
        if (!multi && s != cfg_.single_scale_index()) continue;
        const std::string sp = p + "amtm.stgc" + std::to_string(s);
        linear_params(sp + ".self", d, d);
        linear_params(sp + ".nei", d, d);
        store_.add(sp + ".bn.gamma", Tensor::ones({d}));
        store_.add(sp + ".bn.beta", Tensor::zeros({d}));
        store_.add_buffer(sp + ".bn.running_mean", std::vector<double>(d, 0.0));
        store_.add_buffer(sp + ".bn.running_var", std::vector<double>(d, 1.0));
      }
    }
    zero_linear(p + "fusion", 2 * d, 2);
  }
  store_.add("layer_fusion.logits", Tensor::zeros({static_cast<std::size_t>(cfg_.num_layers)}));
  linear_params("head", d, static_cast<std::size_t>(cfg_.out_channels));
}

Tensor PoseLifter::embed(const Tensor& x) const {
  if (x.ndim() != 4 || x.size(2) != static_cast<std::size_t>(cfg_.num_joints) ||
      x.size(3) != static_cast<std::size_t>(cfg_.in_channels)) {
    throw DimensionError("embed: expected [B, T, " + std::to_string(cfg_.num_joints) + ", " +
                         std::to_string(cfg_.in_channels) + "], got " + shape_str(x.shape()));
  }
  return add(linear(x, store_.param("embed.weight"), store_.param("embed.bias")), store_.param("embed.pos"));
}

Tensor PoseLifter::sagcn(const Tensor& x, int layer, ForwardContext& ctx) const {
  const std::string p = prefix(layer) + "sagcn.";
  const Tensor self_path = linear(x, store_.param(p + "self.weight"), store_.param(p + "self.bias"));
  const Tensor aggregated = sparse_aggregate(x, std::span<const SparseMatrix>(&adjacency_.sparse, 1));
  const Tensor nei_path = linear(aggregated, store_.param(p + "nei.weight"), store_.param(p + "nei.bias"));
  const Tensor gates = softmax(store_.param(p + "gate_logits"), 0);
  if (ctx.gates) {
    ctx.gates->layers[static_cast<std::size_t>(layer)].w_self = gates[0];
    ctx.gates->layers[static_cast<std::size_t>(layer)].w_nei = gates[1];
  }
  return relu(add(mul(self_path, narrow(gates, 0, 0, 1)), mul(nei_path, narrow(gates, 0, 1, 1))));
}

Tensor PoseLifter::window_selector(const Tensor& h, int layer) const {
  const std::string p = prefix(layer) + "amtm.selector.";
  const Tensor pooled = mean(h, 1);  // [B, J, D]
  const Tensor hidden = relu(linear(pooled, store_.param(p + "fc1.weight"), store_.param(p + "fc1.bias")));
  return softmax(linear(hidden, store_.param(p + "fc2.weight"), store_.param(p + "fc2.bias")), -1);
}

std::vector<SparseMatrix> PoseLifter::temporal_graphs(const Tensor& h, std::size_t window) const {
  NoGradGuard no_grad;
  const std::size_t b = h.size(0);
  const std::size_t t = h.size(1);
  const std::size_t features = h.numel() / (b * t);
  const std::size_t windows = b * (t / window);
  const Tensor frames(Shape{windows, window, features}, std::vector<double>(h.values().begin(), h.values().end()));
  Tensor scores = cosine_similarity_matrix(frames);
  // The diagonal is already the row maximum; making it strict keeps each
  // timestep in its own neighbourhood even when another frame is identical.
  auto sv = scores.mutable_values();
  for (std::size_t g = 0; g < windows; ++g) {
    for (std::size_t i = 0; i < window; ++i) sv[(g * window + i) * window + i] = std::numeric_limits<double>::infinity();
  }
  const Tensor mask = topk_mask(scores, static_cast<std::size_t>(cfg_.topk));
  std::vector<SparseMatrix> graphs;
  graphs.reserve(windows);
  const auto mv = mask.values();
  for (std::size_t g = 0; g < windows; ++g) {
    graphs.push_back(SparseMatrix::row_normalized(window, window, mv.subspan(g * window * window, window * window)));
  }
  return graphs;
}

Tensor PoseLifter::stgc(const Tensor& h, int layer, std::size_t scale_index, ForwardContext& ctx) {
  const auto window = static_cast<std::size_t>(cfg_.temporal_scales.at(scale_index));
  const std::size_t b = h.size(0);
  const std::size_t t = h.size(1);
  if (t % window != 0) {
    throw ConfigError("scale " + std::to_string(window) + " does not divide sequence length " + std::to_string(t));
  }
  const std::string p = prefix(layer) + "amtm.stgc" + std::to_string(scale_index) + ".";

  std::vector<SparseMatrix> graphs;
  if (ctx.routing && ctx.routing->mode == RoutingTape::Mode::kReplay) {
    if (ctx.routing->cursor >= ctx.routing->graphs.size()) throw ContractError("routing tape exhausted on replay");
    graphs = ctx.routing->graphs[ctx.routing->cursor++];
  } else {
    graphs = temporal_graphs(h, window);
    if (ctx.routing) ctx.routing->graphs.push_back(graphs);
  }

  const std::size_t windows = b * (t / window);
  const std::size_t features = h.numel() / (b * t);
  const Tensor nei = linear(h, store_.param(p + "nei.weight"), store_.param(p + "nei.bias"));
  const Tensor nei_agg =
      reshape(sparse_aggregate(reshape(nei, {windows, window, features}), graphs), h.shape());
  const Tensor self_path = linear(h, store_.param(p + "self.weight"), store_.param(p + "self.bias"));
  BatchNormOptions bn;
  bn.training = ctx.training;
  bn.update_running_stats = ctx.training && ctx.update_bn_stats;
  return relu(batch_norm(add(nei_agg, self_path), store_.param(p + "bn.gamma"), store_.param(p + "bn.beta"),
                         store_.buffers().at(p + "bn.running_mean"), store_.buffers().at(p + "bn.running_var"), bn));
}

Tensor PoseLifter::amtm(const Tensor& h, int layer, ForwardContext& ctx, std::vector<Tensor>* branches) {
  if (!cfg_.flags.multiscale_fusion) {
    Tensor single = stgc(h, layer, cfg_.single_scale_index(), ctx);
    if (branches) branches->push_back(single);
    return single;
  }
  const std::size_t scales = cfg_.temporal_scales.size();
  std::vector<Tensor> outs;
  outs.reserve(scales);
  for (std::size_t s = 0; s < scales; ++s) outs.push_back(stgc(h, layer, s, ctx));
  if (branches) branches->insert(branches->end(), outs.begin(), outs.end());

  if (ctx.forced_scale_weights) {
    const auto& w = *ctx.forced_scale_weights;
    if (w.size() != scales) throw DimensionError("forced scale weights need one entry per scale");
    Tensor out = scale(outs[0], w[0]);
    for (std::size_t s = 1; s < scales; ++s) out = add(out, scale(outs[s], w[s]));
    return out;
  }
  if (!cfg_.flags.adaptive_aggregation) {
    Tensor total = outs[0];
    for (std::size_t s = 1; s < scales; ++s) total = add(total, outs[s]);
    if (ctx.gates) {
      auto& lg = ctx.gates->layers[static_cast<std::size_t>(layer)];
      lg.scale_weights.assign(h.size(0) * h.size(2) * scales, 1.0 / static_cast<double>(scales));
    }
    return div_scalar(total, static_cast<double>(scales));
  }

  const Tensor weights = window_selector(h, layer);  // [B, J, S]
  if (ctx.gates) {
    ctx.gates->layers[static_cast<std::size_t>(layer)].scale_weights.assign(weights.values().begin(),
                                                                            weights.values().end());
  }
  const std::size_t b = h.size(0);
  const std::size_t j = h.size(2);
  Tensor out;
  for (std::size_t s = 0; s < scales; ++s) {
    const Tensor ws = reshape(narrow(weights, 2, s, 1), {b, 1, j, 1});
    out = s == 0 ? mul(outs[s], ws) : add(out, mul(outs[s], ws));
  }
  return out;
}

Tensor PoseLifter::block(const Tensor& x, int layer, ForwardContext& ctx) {
  const Tensor h = cfg_.flags.use_sagcn ? sagcn(x, layer, ctx) : x;
  const Tensor x_out = cfg_.flags.use_amtm ? amtm(h, layer, ctx) : h;
  const std::string p = prefix(layer) + "fusion.";
  const Tensor logits = linear(concat({x_out, x}, -1), store_.param(p + "weight"), store_.param(p + "bias"));
  const Tensor mix = softmax(logits, -1);
  if (ctx.gates) {
    ctx.gates->layers[static_cast<std::size_t>(layer)].fusion.assign(mix.values().begin(), mix.values().end());
  }
  return add(mul(x_out, narrow(mix, -1, 0, 1)), mul(x, narrow(mix, -1, 1, 1)));
}

Tensor PoseLifter::forward(const Tensor& x, ForwardContext& ctx) {
  const bool single = x.ndim() == 3;
  if (!single && x.ndim() != 4) throw DimensionError("forward expects [B, T, J, C] or [T, J, C], got " + shape_str(x.shape()));
  const Tensor input = single ? reshape(x, {1, x.size(0), x.size(1), x.size(2)}) : x;
  const std::size_t b = input.size(0);
  const std::size_t t = input.size(1);
  for (int w : cfg_.temporal_scales) {
    if (t % static_cast<std::size_t>(w) != 0) {
      throw ConfigError("sequence length " + std::to_string(t) + " is not divisible by scale " + std::to_string(w));
    }
  }
  if (ctx.gates) {
    *ctx.gates = GateTrace{};
    ctx.gates->batch = b;
    ctx.gates->frames = t;
    ctx.gates->joints = input.size(2);
    ctx.gates->scales = cfg_.temporal_scales.size();
    ctx.gates->layers.resize(static_cast<std::size_t>(cfg_.num_layers));
  }
  if (ctx.routing) ctx.routing->cursor = 0;

  Tensor current = embed(input);
  std::vector<Tensor> layer_outputs;
  layer_outputs.reserve(static_cast<std::size_t>(cfg_.num_layers));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    current = block(current, l, ctx);
    check_finite_activation(current, "layer " + std::to_string(l));
    layer_outputs.push_back(current);
  }
  const Tensor layer_weights = softmax(store_.param("layer_fusion.logits"), 0);
  if (ctx.gates) ctx.gates->layer_weights.assign(layer_weights.values().begin(), layer_weights.values().end());
  Tensor fused = mul(layer_outputs[0], narrow(layer_weights, 0, 0, 1));
  for (std::size_t l = 1; l < layer_outputs.size(); ++l) {
    fused = add(fused, mul(layer_outputs[l], narrow(layer_weights, 0, l, 1)));
  }
  Tensor out = scale(linear(fused, store_.param("head.weight"), store_.param("head.bias")), cfg_.output_scale_mm);
  check_finite_activation(out, "regression head");
  if (single) out = reshape(out, {t, input.size(2), out.size(-1)});
  return out;
}

PoseSequence PoseLifter::predict(const PoseSequence& input) {
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.training = false;
  const Tensor out = forward(to_tensor(input), ctx);
  return to_pose_sequence(out, input.fps);
}

Tensor to_tensor(const PoseSequence& seq) {
  return Tensor({seq.frames, seq.joints, seq.channels}, seq.data);
}

Tensor stack_sequences(const std::vector<const PoseSequence*>& seqs) {
  if (seqs.empty()) throw ParameterError("stack_sequences: empty batch");
  const PoseSequence& first = *seqs.front();
  std::vector<double> values;
  values.reserve(seqs.size() * first.data.size());
  for (const PoseSequence* s : seqs) {
    require_same_shape(first, *s, "stack_sequences");
    values.insert(values.end(), s->data.begin(), s->data.end());
  }
  return Tensor({seqs.size(), first.frames, first.joints, first.channels}, std::move(values));
}

PoseSequence to_pose_sequence(const Tensor& t, double fps, std::size_t batch_index) {
  const bool batched = t.ndim() == 4;
  if (!batched && t.ndim() != 3) throw DimensionError("to_pose_sequence expects rank 3 or 4, got " + shape_str(t.shape()));
  const std::size_t off = batched ? 1 : 0;
  PoseSequence seq(t.size(static_cast<int>(off)), t.size(static_cast<int>(off + 1)), t.size(static_cast<int>(off + 2)), fps);
  if (batched && batch_index >= t.size(0)) throw DimensionError("batch index out of range");
  const auto v = t.values().subspan(batch_index * seq.data.size(), seq.data.size());
  std::copy(v.begin(), v.end(), seq.data.begin());
  return seq;
}

Tensor partition_windows(const Tensor& h, std::size_t window) {
  if (h.ndim() < 3) throw DimensionError("partition expects [..., T, J, D], got " + shape_str(h.shape()));
  const std::size_t time_axis = h.ndim() - 3;
  const std::size_t t = h.shape()[time_axis];
  if (window == 0 || t % window != 0) {
    throw ConfigError("window " + std::to_string(window) + " does not divide T=" + std::to_string(t));
  }
  Shape shape(h.shape().begin(), h.shape().begin() + static_cast<std::ptrdiff_t>(time_axis));
  shape.push_back(t / window);
  shape.push_back(window);
  shape.insert(shape.end(), h.shape().end() - 2, h.shape().end());
  return reshape(h, shape);
}

Tensor unpartition_windows(const Tensor& windows) {
  if (windows.ndim() < 4) throw DimensionError("unpartition expects [..., N, w, J, D], got " + shape_str(windows.shape()));
  const std::size_t axis = windows.ndim() - 4;
  Shape shape(windows.shape().begin(), windows.shape().begin() + static_cast<std::ptrdiff_t>(axis));
  shape.push_back(windows.shape()[axis] * windows.shape()[axis + 1]);
  shape.insert(shape.end(), windows.shape().end() - 2, windows.shape().end());
  return reshape(windows, shape);
}

}  // namespace masc
