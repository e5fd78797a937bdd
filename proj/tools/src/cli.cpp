#include "masc_cli/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "masc/checkpoint.hpp"
#include "masc/dataset.hpp"
#include "masc/errors.hpp"
#include "masc/grad_check.hpp"
#include "masc/profiler.hpp"
#include "masc/trainer.hpp"

namespace masc::cli {

namespace {

namespace fs = std::filesystem;

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
    return;
  }
  const fs::path p(out_path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw IoError("cannot write '" + out_path + "'");
}

const std::vector<Sample>& eval_samples(const Dataset& d) { return d.eval.empty() ? d.train : d.eval; }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-lifting network: data generation, training, evaluation and profiling"};
  app.require_subcommand(1, 1);
  bool quiet = false;
  app.add_flag("--quiet", quiet, "Only log warnings and errors");

  std::string manifest_path, out_path, model_cfg_path, train_cfg_path, data_dir, ckpt_path, variant = "all",
      format = "json";
  std::optional<std::uint64_t> seed;
  std::size_t samples = 20;
  double tolerance = 1e-3;
  bool with_ops = false;

  auto* gen = app.add_subcommand("gen-data", "Materialize a synthetic dataset from a manifest");
  gen->add_option("manifest", manifest_path, "Dataset manifest JSON")->required();
  gen->add_option("--out", out_path, "Output directory")->required();

  auto* trn = app.add_subcommand("train", "Train a model and write logs and checkpoints");
  trn->add_option("--config", model_cfg_path, "Model config JSON")->required();
  trn->add_option("--train", train_cfg_path, "Train config JSON")->required();
  trn->add_option("--data", data_dir, "Dataset directory")->required();
  trn->add_option("--out", out_path, "Output directory")->required();
  trn->add_option("--seed", seed, "Override the train config seed");

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint, print a metric report");
  evl->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  evl->add_option("--data", data_dir, "Dataset directory")->required();
  evl->add_option("--out", out_path, "Write the JSON report here instead of stdout");

  auto* abl = app.add_subcommand("ablate", "Train and compare ablation variants");
  abl->add_option("--variant", variant, "Variant name or 'all'");
  abl->add_option("--config", model_cfg_path, "Model config JSON")->required();
  abl->add_option("--train", train_cfg_path, "Train config JSON")->required();
  abl->add_option("--data", data_dir, "Dataset directory")->required();
  abl->add_option("--out", out_path, "Write the JSON results here");
  abl->add_option("--seed", seed, "Override the train config seed");

  auto* prof = app.add_subcommand("profile", "Analytic parameter and MAC counts");
  prof->add_option("--config", model_cfg_path, "Model config JSON")->required();
  prof->add_option("--out", out_path, "Write the report here instead of stdout");
  prof->add_option("--format", format, "json or table")->check(CLI::IsMember({"json", "table"}));

  auto* dump = app.add_subcommand("dump-gates", "CSV of per-body-group temporal scale weights");
  dump->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  dump->add_option("--data", data_dir, "Dataset directory")->required();
  dump->add_option("--out", out_path, "Write the CSV here instead of stdout");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check; nonzero exit on failure");
  gc->add_option("--config", model_cfg_path, "Model config JSON")->required();
  gc->add_option("--samples", samples, "Parameters sampled");
  gc->add_option("--tolerance", tolerance, "Maximum relative error");
  gc->add_option("--seed", seed, "Seed for parameters, inputs and sampling");
  gc->add_flag("--ops", with_ops, "Also check every primitive op");
  gc->add_option("--out", out_path, "Write the JSON report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*gen) {
      const DatasetManifest manifest = load_manifest(manifest_path);
      const auto sequences = generate_dataset(manifest, threads_from_env());
      write_dataset(out_path, manifest, sequences);
      spdlog::info("wrote {} sequences to {}", sequences.size(), out_path);
    } else if (*trn) {
      const ModelConfig mcfg = load_model_config(model_cfg_path);
      TrainConfig tcfg = load_train_config(train_cfg_path);
      if (seed) tcfg.seed = *seed;
      const Dataset data = load_dataset(data_dir);
      PoseLifter model(mcfg, data.topology, tcfg.seed);
      const TrainResult r = train(model, tcfg, data, {}, fs::path(out_path));
      const nlohmann::json summary = {{"steps", r.steps},
                                      {"initial_train_mpjpe", r.initial_train_mpjpe},
                                      {"final_train_mpjpe", r.final_train_mpjpe},
                                      {"checkpoint", (fs::path(out_path) / "model.ckpt").string()}};
      out << summary.dump(2) << '\n';
    } else if (*evl) {
      auto model = load_checkpoint(ckpt_path);
      const Dataset data = load_dataset(data_dir);
      if (!(model->topology() == data.topology)) throw ConfigError("dataset skeleton does not match the checkpoint");
      const MetricReport report = evaluate_model(*model, eval_samples(data));
      emit(metric_report_to_json(report).dump(2) + "\n", out_path, out);
    } else if (*abl) {
      const ModelConfig mcfg = load_model_config(model_cfg_path);
      TrainConfig tcfg = load_train_config(train_cfg_path);
      if (seed) tcfg.seed = *seed;
      const Dataset data = load_dataset(data_dir);
      std::vector<std::string> variants;
      if (variant == "all") {
        variants.assign(std::begin(kAblationVariants), std::end(kAblationVariants));
      } else {
        ablation_flags(variant);
        variants.push_back(variant);
      }
      std::vector<AblationResult> results;
      for (const auto& v : variants) {
        spdlog::info("ablation variant {}", v);
        results.push_back(run_ablation(v, mcfg, tcfg, data));
      }
      if (!quiet || out_path.empty()) err << ablation_table(results);
      emit(ablation_results_to_json(results).dump(2) + "\n", out_path, out);
    } else if (*prof) {
      const ModelConfig mcfg = load_model_config(model_cfg_path);
      const CostReport report = count_cost(mcfg);
      emit(format == "table" ? cost_report_table(report) : cost_report_to_json(report).dump(2) + "\n", out_path, out);
    } else if (*dump) {
      auto model = load_checkpoint(ckpt_path);
      const Dataset data = load_dataset(data_dir);
      if (!(model->topology() == data.topology)) {
        throw ConfigError("dataset skeleton or body groups do not match the checkpoint");
      }
      emit(gate_profile_csv(gate_profile(*model, eval_samples(data))), out_path, out);
    } else if (*gc) {
      const ModelConfig mcfg = load_model_config(model_cfg_path);
      GradCheckOptions opt;
      opt.samples = samples;
      opt.tolerance = tolerance;
      opt.seed = seed.value_or(0);
      nlohmann::json report;
      bool passed = true;
      if (with_ops) {
        nlohmann::json ops = nlohmann::json::object();
        for (const auto& r : op_gradient_suite(opt.seed, std::min(tolerance, 1e-4))) {
          ops[r.op] = {{"passed", r.report.passed}, {"max_rel_error", r.report.max_rel_error}};
          passed = passed && r.report.passed;
        }
        report["ops"] = ops;
      }
      const GradCheckReport model_report = check_model_gradients(mcfg, default_h36m_topology(), opt);
      passed = passed && model_report.passed;
      report["model"] = grad_report_to_json(model_report);
      report["passed"] = passed;
      emit(report.dump(2) + "\n", out_path, out);
      err << (passed ? "grad-check passed" : "grad-check FAILED") << ": max rel. error "
          << model_report.max_rel_error << " at " << model_report.worst.name << "[" << model_report.worst.index
          << "]\n";
      return passed ? kOk : kNumeric;
    }
  } catch (const NumericFault& e) {
    err << "numeric fault: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}

}  // namespace masc::cli
