#include "masc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "masc/checkpoint.hpp"
#include "masc/errors.hpp"
#include "masc/pose_io.hpp"
#include "masc/profiler.hpp"

namespace masc {

void TrainConfig::validate() const {
  try {
    adam().validate();
    loss_weights.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 0 || eval_every < 0) throw ConfigError("checkpoint_every and eval_every must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

AdamOptions TrainConfig::adam() const {
  AdamOptions o;
  o.lr = lr;
  o.beta1 = beta1;
  o.beta2 = beta2;
  o.eps = eps;
  o.weight_decay = weight_decay;
  return o;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"betas", {c.beta1, c.beta2}},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"loss_weights",
           {{"lambda_s", c.loss_weights.lambda_s},
            {"lambda_v", c.loss_weights.lambda_v},
            {"lambda_d", c.loss_weights.lambda_d}}},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_every", c.eval_every},
          {"lr_decay", c.lr_decay},
          {"max_steps", c.max_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"lr",   "betas",        "eps",      "weight_decay",
                                                 "epochs", "batch_size", "seed",     "loss_weights",
                                                 "checkpoint_every", "eval_every", "lr_decay", "max_steps"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("train config: betas needs two values");
      c.beta1 = b[0];
      c.beta2 = b[1];
    }
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      c.loss_weights.lambda_s = w.value("lambda_s", c.loss_weights.lambda_s);
      c.loss_weights.lambda_v = w.value("lambda_v", c.loss_weights.lambda_v);
      c.loss_weights.lambda_d = w.value("lambda_d", c.loss_weights.lambda_d);
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.max_steps = j.value("max_steps", c.max_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("train config '" + path + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

nlohmann::json epoch_log_to_json(const EpochLog& log) {
  nlohmann::json j = {{"step", log.step}, {"epoch", log.epoch}, {"L_m", log.l_m}, {"L_s", log.l_s},
                      {"L_v", log.l_v},   {"L_d", log.l_d},     {"total", log.total}};
  j["mpjpe_eval"] = log.mpjpe_eval ? nlohmann::json(*log.mpjpe_eval) : nlohmann::json(nullptr);
  return j;
}

namespace {

struct Batch {
  Tensor input;
  Tensor target;
};

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> idx) {
  std::vector<const PoseSequence*> in;
  std::vector<const PoseSequence*> gt;
  for (std::size_t i : idx) {
    in.push_back(&samples[i].input);
    gt.push_back(&samples[i].target);
  }
  return {stack_sequences(in), stack_sequences(gt)};
}

void require_topology(const PoseLifter& model, const Dataset& data) {
  if (!(model.topology() == data.topology)) {
    throw ConfigError("dataset skeleton does not match the model's skeleton");
  }
}

double eval_mpjpe(PoseLifter& model, const std::vector<Sample>& samples) {
  double total = 0.0;
  std::size_t frames = 0;
  for (const auto& s : samples) {
    total += mpjpe(model.predict(s.input), s.target) * static_cast<double>(s.target.frames);
    frames += s.target.frames;
  }
  return total / static_cast<double>(frames);
}

void write_trainer_state(const std::filesystem::path& path, AdamW& opt, const std::mt19937_64& rng) {
  std::vector<std::uint8_t> out{'M', 'T', 'R', 'S'};
  le::put_u32(out, 1);
  le::put_u64(out, opt.step_count());
  std::ostringstream rs;
  rs << rng;
  const std::string rng_state = rs.str();
  le::put_u64(out, rng_state.size());
  out.insert(out.end(), rng_state.begin(), rng_state.end());
  le::put_u64(out, opt.params().size());
  for (std::size_t k = 0; k < opt.params().size(); ++k) {
    const std::string& name = opt.params()[k].first;
    le::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    le::put_u64(out, opt.first_moments()[k].size());
    for (double v : opt.first_moments()[k]) le::put_f64(out, v);
    for (double v : opt.second_moments()[k]) le::put_f64(out, v);
  }
  write_file_bytes(path, out);
}

std::string epoch_file(int epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "ckpt_epoch%04d.ckpt", epoch);
  return buf;
}

}  // namespace

double train_mode_mpjpe(PoseLifter& model, const std::vector<Sample>& samples, int batch_size) {
  NoGradGuard no_grad;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(static_cast<std::size_t>(batch_size), order.size() - start);
    const Batch b = make_batch(samples, std::span<const std::size_t>(order).subspan(start, n));
    ForwardContext ctx;
    ctx.training = true;
    ctx.update_bn_stats = false;
    const Tensor pred = model.forward(b.input, ctx);
    const std::size_t points = pred.numel() / 3;
    total += mpjpe_loss(pred, b.target).item() * static_cast<double>(points);
    count += points;
  }
  return total / static_cast<double>(count);
}

MetricReport evaluate_model(PoseLifter& model, const std::vector<Sample>& samples) {
  std::vector<PoseSequence> preds;
  std::vector<PoseSequence> gts;
  for (const auto& s : samples) {
    preds.push_back(model.predict(s.input));
    gts.push_back(s.target);
  }
  return evaluate_set(preds, gts);
}

TrainResult train(PoseLifter& model, const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks,
                  const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  require_topology(model, data);
  if (data.train.empty()) throw ConfigError("no training sequences");
  const std::vector<Sample>& eval_set = data.eval.empty() ? data.train : data.eval;

  std::ofstream log_file;
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir->string() + "': " + ec.message());
    log_file.open(*out_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log_file) throw IoError("cannot write '" + (*out_dir / "train_log.jsonl").string() + "'");
  }

  AdamW opt(model.parameters().params(), cfg.adam());
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  TrainResult result;
  std::uint64_t step = 0;
  const auto limit_reached = [&] { return cfg.max_steps > 0 && step >= static_cast<std::uint64_t>(cfg.max_steps); };
  for (int epoch = 1; epoch <= cfg.epochs && !limit_reached(); ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size() && !limit_reached(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      const Batch b = make_batch(data.train, std::span<const std::size_t>(order).subspan(start, n));
      GateTrace trace;
      ForwardContext ctx;
      ctx.training = true;
      ctx.update_bn_stats = true;
      if (hooks.trace_gates) ctx.gates = &trace;
      const Tensor pred = model.forward(b.input, ctx);
      LossBreakdown loss = total_loss(pred, b.target, cfg.loss_weights);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        char msg[256];
        std::snprintf(msg, sizeof msg, "non-finite loss at step %llu (L_m=%g L_s=%g L_v=%g L_d=%g)",
                      static_cast<unsigned long long>(step + 1), loss.l_m, loss.l_s, loss.l_v, loss.l_d);
        throw NumericFault(msg);
      }
      if (step == 0) result.initial_train_mpjpe = loss.l_m;
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      ++step;
      if (hooks.on_step) {
        StepInfo info;
        info.step = step;
        info.epoch = epoch;
        info.loss = loss;
        info.gates = hooks.trace_gates ? &trace : nullptr;
        hooks.on_step(info, model);
      }
      log.l_m += loss.l_m;
      log.l_s += loss.l_s;
      log.l_v += loss.l_v;
      log.l_d += loss.l_d;
      log.total += total;
      ++batches;
    }
    if (batches == 0) break;
    const double nb = static_cast<double>(batches);
    log.l_m /= nb;
    log.l_s /= nb;
    log.l_v /= nb;
    log.l_d /= nb;
    log.total /= nb;
    log.step = step;
    if (cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      log.mpjpe_eval = eval_mpjpe(model, eval_set);
    }
    spdlog::info("epoch {} step {} loss {:.4f} L_m {:.3f}{}", epoch, step, log.total, log.l_m,
                 log.mpjpe_eval ? " eval " + std::to_string(*log.mpjpe_eval) : std::string());
    if (log_file) log_file << epoch_log_to_json(log).dump() << '\n';
    if (hooks.on_epoch) hooks.on_epoch(log);
    result.log.push_back(log);
    if (out_dir && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(*out_dir / epoch_file(epoch), model);
    }
    if (cfg.lr_decay != 1.0) opt.set_lr(opt.options().lr * cfg.lr_decay);
  }
  result.steps = step;
  result.final_train_mpjpe = train_mode_mpjpe(model, data.train, cfg.batch_size);
  if (step == 0) result.initial_train_mpjpe = result.final_train_mpjpe;
  if (out_dir) {
    log_file.close();
    save_checkpoint(*out_dir / "model.ckpt", model);
    write_trainer_state(*out_dir / "trainer_state.bin", opt, rng);
  }
  return result;
}

AblationFlags ablation_flags(const std::string& variant) {
  AblationFlags f;
  if (variant == "full") return f;
  if (variant == "baseline") {
    f.use_amtm = false;
    f.use_sagcn = false;
  } else if (variant == "only_amtm") {
    f.use_sagcn = false;
  } else if (variant == "only_sagcn") {
    f.use_amtm = false;
  } else if (variant == "no_adaptive_agg") {
    f.adaptive_aggregation = false;
  } else if (variant == "no_multiscale_fusion") {
    f.multiscale_fusion = false;
  } else {
    throw ConfigError("unknown ablation variant '" + variant + "'");
  }
  return f;
}

AblationResult run_ablation(const std::string& variant, ModelConfig model_cfg, const TrainConfig& train_cfg,
                            const Dataset& data) {
  model_cfg.flags = ablation_flags(variant);
  PoseLifter model(model_cfg, data.topology, train_cfg.seed);
  AblationResult r;
  r.variant = variant;
  r.params = model.parameters().count();
  r.macs_per_frame = count_cost(model_cfg, data.topology).macs_per_frame;
  r.training = train(model, train_cfg, data);
  r.report = evaluate_model(model, data.eval.empty() ? data.train : data.eval);
  return r;
}

nlohmann::json ablation_results_to_json(const std::vector<AblationResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    out.push_back({{"variant", r.variant},
                   {"params", r.params},
                   {"macs_per_frame", r.macs_per_frame},
                   {"steps", r.training.steps},
                   {"metrics", metric_report_to_json(r.report)}});
  }
  return out;
}

std::string ablation_table(const std::vector<AblationResult>& results) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-22s %10s %14s %12s %12s\n", "variant", "params", "MACs/frame", "MPJPE(mm)",
                "P-MPJPE(mm)");
  out += line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-22s %10zu %14llu %12.2f %12.2f\n", r.variant.c_str(), r.params,
                  static_cast<unsigned long long>(r.macs_per_frame), r.report.mpjpe_mm, r.report.p_mpjpe_mm);
    out += line;
  }
  return out;
}

std::vector<GroupGateRow> gate_profile(PoseLifter& model, const std::vector<Sample>& samples) {
  const ModelConfig& cfg = model.config();
  if (!cfg.flags.use_amtm) throw ConfigError("model has no temporal branches, so there are no scale weights to dump");
  if (samples.empty()) throw ConfigError("gate dump needs at least one sequence");
  const std::size_t j = static_cast<std::size_t>(cfg.num_joints);
  const std::size_t s = cfg.temporal_scales.size();
  std::vector<double> per_joint(j * s, 0.0);
  std::size_t count = 0;
  for (const auto& sample : samples) {
    if (sample.input.joints != j) throw ConfigError("sequence joint count does not match the model");
    NoGradGuard no_grad;
    GateTrace trace;
    ForwardContext ctx;
    ctx.training = false;
    ctx.gates = &trace;
    model.forward(to_tensor(sample.input), ctx);
    for (const auto& layer : trace.layers) {
      for (std::size_t jj = 0; jj < j; ++jj) {
        for (std::size_t k = 0; k < s; ++k) {
          per_joint[jj * s + k] += layer.scale_weights.empty()
                                       ? (k == cfg.single_scale_index() ? 1.0 : 0.0)
                                       : layer.scale_weights[jj * s + k];
        }
      }
      ++count;
    }
  }
  for (double& v : per_joint) v /= static_cast<double>(count);
  const auto& topo = model.topology();
  std::vector<GroupGateRow> rows;
  for (BodyGroup g : kBodyGroups) {
    const auto members = topo.joints_in(g);
    if (members.empty()) continue;
    GroupGateRow row;
    row.group = g;
    row.weights.assign(s, 0.0);
    for (std::size_t m : members) {
      for (std::size_t k = 0; k < s; ++k) row.weights[k] += per_joint[m * s + k];
    }
    for (double& v : row.weights) v /= static_cast<double>(members.size());
    rows.push_back(row);
  }
  return rows;
}

std::string gate_profile_csv(const std::vector<GroupGateRow>& rows) {
  const std::size_t s = rows.empty() ? 0 : rows.front().weights.size();
  std::string out = "group";
  if (s == 3) {
    out += ",w_short,w_med,w_long";
  } else {
    for (std::size_t k = 0; k < s; ++k) out += ",w_scale" + std::to_string(k);
  }
  out += '\n';
  char buf[40];
  for (const auto& r : rows) {
    out += to_string(r.group);
    for (double w : r.weights) {
      std::snprintf(buf, sizeof buf, ",%.12f", w);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace masc
