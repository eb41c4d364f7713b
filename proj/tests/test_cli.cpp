#include "hymlab/report.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace hymlab;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = HYMLAB_CONFIG_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "hymlab_test_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string err;
};

Result run_cli(const std::string& args, const fs::path& errfile) {
  const std::string cmd = std::string(HYMLAB_CLI) + " " + args + " >/dev/null 2>" + errfile.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(errfile)};
}

json summary(const fs::path& dir) { return json::parse(slurp(dir / "summary.json")); }

std::string write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(Cli, ChernOnFlatLineIsZero) {
  const auto out = scratch("chern_flat");
  const auto r = run_cli("chern --config " + (kConfigs / "chern_flat_line.json").string() + " --out " + out.string(), out / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = summary(out);
  for (const char* k : {"geometry", "chern", "flow", "pipeline", "projectivization", "errors"}) EXPECT_TRUE(s.contains(k)) << k;
  for (const auto& [k, v] : s["chern"]["numbers"].items()) EXPECT_LT(std::abs(v.get<double>()), 1e-10) << k;
  EXPECT_LT(s["chern"]["energy_identity"]["relative_residual"].get<double>(), 1e-10);
  EXPECT_TRUE(s["errors"].empty());
}

TEST(Cli, ConfigErrorIsStructured) {
  const auto out = scratch("bad");
  const auto cfg = write_config(out, "{\n \"bundle\": {\"builtin\": \"trivial\"},\n \"flow\": {\"dt\": \"fast\"}\n}");
  const auto r = run_cli("flow --config " + cfg + " --out " + out.string(), out / "err");
  EXPECT_NE(r.code, 0);
  const json e = json::parse(r.err);
  EXPECT_EQ(e["error"]["kind"], "config");
  EXPECT_NE(e["error"]["message"].get<std::string>().find("/flow/dt"), std::string::npos);

  const auto cfg2 = write_config(out, "{\n \"bundle\": {\"builtin\": \"trivial\"}\n \"flow\": {}\n}");
  const auto r2 = run_cli("flow --config " + cfg2 + " --out " + out.string(), out / "err");
  EXPECT_NE(r2.code, 0);
  EXPECT_NE(json::parse(r2.err)["error"]["message"].get<std::string>().find("line 3"), std::string::npos) << r2.err;
}

TEST(Cli, UsageErrorIsStructured) {
  const auto out = scratch("usage");
  const auto r = run_cli("flow --threads 2", out / "err");
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(json::parse(r.err)["error"]["kind"], "usage");
}

TEST(Cli, FlowIsBitReproducible) {
  const auto a = scratch("repro_a"), b = scratch("repro_b");
  const std::string cfg = (kConfigs / "flow_random_metric.json").string();
  ASSERT_EQ(run_cli("flow --config " + cfg + " --out " + a.string(), a / "err").code, 0);
  ASSERT_EQ(run_cli("flow --config " + cfg + " --out " + b.string(), b / "err").code, 0);
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  EXPECT_EQ(slurp(a / "trace.csv"), slurp(b / "trace.csv"));
  EXPECT_EQ(slurp(a / "checkpoints" / "final.bin"), slurp(b / "checkpoints" / "final.bin"));
}

TEST(Cli, ResumeReproducesTraceTail) {
  const auto full = scratch("full"), res = scratch("resume");
  const std::string cfg = (kConfigs / "flow_random_metric.json").string();
  ASSERT_EQ(run_cli("flow --config " + cfg + " --out " + full.string(), full / "err").code, 0);
  const fs::path ck = full / "checkpoints" / "step_0000000025.bin";
  ASSERT_TRUE(fs::exists(ck));
  const auto r = run_cli("flow --config " + cfg + " --out " + res.string() + " --resume " + ck.string(), res / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = read_trace_csv(full / "trace.csv");
  const auto b = read_trace_csv(res / "trace.csv");
  ASSERT_EQ(b.front().step, 25u);
  ASSERT_EQ(a.size(), 25 + b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& x = a[25 + i];
    const auto& y = b[i];
    EXPECT_EQ(x.step, y.step);
    EXPECT_NEAR(x.t, y.t, 1e-12);
    EXPECT_NEAR(x.ym, y.ym, 1e-12);
    EXPECT_NEAR(x.sup_F, y.sup_F, 1e-12);
    EXPECT_NEAR(x.he_residual, y.he_residual, 1e-12);
    EXPECT_NEAR(x.min_eig_H, y.min_eig_H, 1e-12);
  }
  const auto ca = read_checkpoint(full / "checkpoints" / "final.bin");
  const auto cb = read_checkpoint(res / "checkpoints" / "final.bin");
  EXPECT_LT(sup_abs(ca.H - cb.H), 1e-12);
  EXPECT_NEAR(ca.dissipated, cb.dissipated, 1e-12);
}

TEST(Cli, LargeStepIsHalved) {
  const auto out = scratch("large");
  const auto r = run_cli("flow --config " + (kConfigs / "flow_large_step.json").string() + " --out " + out.string(), out / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  const json f = summary(out)["flow"];
  EXPECT_GT(f["halvings"].get<int>(), 0);
  EXPECT_LT(f["dt"].get<double>(), 0.05);
  EXPECT_TRUE(f["ym_nonincreasing"].get<bool>());
}

TEST(Cli, PositivityLossFailsWithSummary) {
  const auto out = scratch("positivity");
  const auto cfg = write_config(out, R"({
    "geometry": {"grid": [8, 8, 8, 8]},
    "bundle": {"direct_sum": [{"builtin": "flux_line", "k": [1, 1]}, {"builtin": "flux_line", "k": [-1, -1]}]},
    "flow": {"dt": 0.01, "horizon": 10}
  })");
  const auto r = run_cli("flow --config " + cfg + " --out " + out.string(), out / "err");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["error"]["kind"], "positivity");
  const json s = summary(out);
  EXPECT_EQ(s["flow"]["status"], "positivity_lost");
  EXPECT_EQ(s["errors"].size(), 1u);
}

TEST(Cli, ApproxFlatSupFColumnIsMonotone) {
  const auto out = scratch("approx");
  const auto r = run_cli("approx-flat --config " + (kConfigs / "approx_flat_extension.json").string() + " --out " + out.string(), out / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  const json p = summary(out)["pipeline"];
  const auto sup = p["sup_F"].get<std::vector<double>>();
  ASSERT_EQ(sup.size(), 5u);
  for (std::size_t i = 1; i < sup.size(); ++i) EXPECT_LE(sup[i], sup[i - 1]);
  EXPECT_TRUE(p["final_below_target"].get<bool>());
  const auto trace = read_trace_csv(out / "trace.csv");
  EXPECT_EQ(trace.front().eps, 1.0);
  EXPECT_EQ(trace.back().eps, 0.0625);
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "stage_4.bin"));
}

TEST(Cli, PerturbedWritesCheckpoint) {
  const auto out = scratch("perturbed");
  const auto r = run_cli("perturbed --eps 0.25 --config " + (kConfigs / "perturbed_extension.json").string() + " --out " + out.string(), out / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  const json f = summary(out)["flow"];
  EXPECT_EQ(f["eps"].get<double>(), 0.25);
  EXPECT_LT(f["residual"].get<double>(), 1e-8);
  EXPECT_EQ(read_checkpoint(out / "checkpoints" / "perturbed.bin").eps, 0.25);
}

TEST(Cli, SeedOverridesMetric) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  const std::string cfg = (kConfigs / "chern_flat_line.json").string();
  ASSERT_EQ(run_cli("chern --seed 3 --config " + cfg + " --out " + a.string(), a / "err").code, 0);
  ASSERT_EQ(run_cli("chern --seed 4 --config " + cfg + " --out " + b.string(), b / "err").code, 0);
  EXPECT_NE(summary(a)["chern"]["energy_identity"]["ym_energy"], summary(b)["chern"]["energy_identity"]["ym_energy"]);
}
