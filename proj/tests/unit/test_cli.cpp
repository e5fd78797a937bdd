#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "masc/pose_io.hpp"
#include "masc_cli/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "masc");
  args.insert(args.begin() + 1, "--quiet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = masc::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("masc_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

nlohmann::json toy_model() {
  return {{"num_layers", 1}, {"dim", 8}, {"seq_len", 27}, {"temporal_scales", {3, 9, 27}}, {"topk", 2}};
}

std::string slurp(const fs::path& p) {
  const auto b = masc::read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, masc::cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, masc::cli::kUsage);
  EXPECT_EQ(run({"profile"}).code, masc::cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, masc::cli::kOk);
}

TEST(Cli, Profile) {
  const auto dir = scratch("profile");
  write(dir / "m.json", toy_model());
  const auto r = run({"profile", "--config", (dir / "m.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_GT(j["params_total"].get<long>(), 0);
  const auto t = run({"profile", "--config", (dir / "m.json").string(), "--format", "table"});
  EXPECT_NE(t.out.find("embed"), std::string::npos);
  auto bad = toy_model();
  bad["topk"] = 7;
  write(dir / "bad.json", bad);
  EXPECT_EQ(run({"profile", "--config", (dir / "bad.json").string()}).code, masc::cli::kUsage);
  EXPECT_EQ(run({"profile", "--config", (dir / "missing.json").string()}).code, masc::cli::kIo);
}

TEST(Cli, GradCheck) {
  const auto dir = scratch("grad");
  write(dir / "m.json", toy_model());
  const auto ok = run({"grad-check", "--config", (dir / "m.json").string(), "--samples", "10"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto j = nlohmann::json::parse(ok.out);
  EXPECT_TRUE(j["model"]["passed"].get<bool>());
  EXPECT_FALSE(j["model"]["worst"]["param"].get<std::string>().empty());
  const auto fail =
      run({"grad-check", "--config", (dir / "m.json").string(), "--samples", "10", "--tolerance", "1e-30"});
  EXPECT_EQ(fail.code, masc::cli::kNumeric);
}

TEST(Cli, EndToEndAndIdempotent) {
  const auto dir = scratch("e2e");
  write(dir / "m.json", toy_model());
  write(dir / "t.json", {{"epochs", 2}, {"batch_size", 2}, {"seed", 3}});
  write(dir / "manifest.json",
        nlohmann::json::parse(R"({"name": "e2e", "seed": 1, "sequences": [
          {"motion": {"kind": "gait_cycle", "frames": 27, "period_frames": 9}, "count": 2},
          {"motion": {"kind": "reach_transition", "frames": 27}, "split": "eval"}]})"));
  const auto data = (dir / "data").string();
  ASSERT_EQ(run({"gen-data", (dir / "manifest.json").string(), "--out", data}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "index.json"));

  for (const char* out : {"run_a", "run_b"}) {
    const auto r = run({"train", "--config", (dir / "m.json").string(), "--train", (dir / "t.json").string(), "--data",
                        data, "--out", (dir / out).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"model.ckpt", "train_log.jsonl", "trainer_state.bin"})
    EXPECT_EQ(slurp(dir / "run_a" / f), slurp(dir / "run_b" / f)) << f;

  const auto ckpt = (dir / "run_a" / "model.ckpt").string();
  const auto e1 = run({"eval", ckpt, "--data", data});
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, run({"eval", ckpt, "--data", data}).out);
  const auto report = nlohmann::json::parse(e1.out);
  EXPECT_LE(report["p_mpjpe_mm"].get<double>(), report["mpjpe_mm"].get<double>() + 1e-9);

  const auto g = run({"dump-gates", ckpt, "--data", data});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(g.out, run({"dump-gates", ckpt, "--data", data}).out);
  std::istringstream lines(g.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "group,w_short,w_med,w_long");
  int rows = 0;
  while (std::getline(lines, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    double sum = 0.0;
    while (std::getline(cells, cell, ',')) sum += std::stod(cell);
    EXPECT_NEAR(sum, 1.0, 1e-9) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 3);

  EXPECT_EQ(run({"eval", (dir / "nope.ckpt").string(), "--data", data}).code, masc::cli::kIo);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run({"eval", (dir / "junk.ckpt").string(), "--data", data}).code, masc::cli::kIo);
}

TEST(Cli, AblateSingleVariant) {
  const auto dir = scratch("ablate");
  write(dir / "m.json", toy_model());
  write(dir / "t.json", {{"epochs", 1}, {"batch_size", 2}});
  write(dir / "manifest.json", nlohmann::json::parse(R"({"sequences": [
          {"motion": {"kind": "random_smooth", "frames": 27}, "count": 2},
          {"motion": {"kind": "random_smooth", "frames": 27}, "split": "eval"}]})"));
  const auto data = (dir / "data").string();
  ASSERT_EQ(run({"gen-data", (dir / "manifest.json").string(), "--out", data}).code, 0);
  const auto r = run({"ablate", "--variant", "baseline", "--config", (dir / "m.json").string(), "--train",
                      (dir / "t.json").string(), "--data", data});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out).size(), 1u);
  EXPECT_EQ(run({"ablate", "--variant", "bogus", "--config", (dir / "m.json").string(), "--train",
                 (dir / "t.json").string(), "--data", data})
                .code,
            masc::cli::kUsage);
}
