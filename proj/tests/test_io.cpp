#include "hymlab/report.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace hymlab;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    return e.what();
  }
  ADD_FAILURE() << "config accepted: " << text;
  return {};
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const auto geom = make_flat_torus({8, 8, 8, 8}, {1, 1.5, 1, 2});
  const auto E = extension_bundle(geom.grid_ptr(), constant_class(geom.grid(), {0.5, 0.0}));
  Checkpoint c;
  c.shape = geom.grid().shape();
  c.periods = geom.grid().periods();
  c.H = random_smooth_metric(E, 3, 0.4);
  c.t = 0.123;
  c.step = 77;
  c.dt = 1.0 / 3.0;
  c.dissipated = 1e-300;
  c.eps = 0.0625;
  std::stringstream ss;
  write_checkpoint(ss, c);
  EXPECT_EQ(ss.str().size(), 8 + 4 + 4 + 4 * 4 + 4 * 8 + 4 + 8 + 5 * 8 + geom.points() * 4 * 16);
  const Checkpoint d = read_checkpoint(ss);
  EXPECT_EQ(d.shape, c.shape);
  EXPECT_EQ(d.periods, c.periods);
  EXPECT_EQ(d.t, c.t);
  EXPECT_EQ(d.step, c.step);
  EXPECT_EQ(d.dt, c.dt);
  EXPECT_EQ(d.dissipated, c.dissipated);
  EXPECT_EQ(d.eps, c.eps);
  EXPECT_EQ(d.H.rank(), 2);
  EXPECT_EQ(d.H.raw(), c.H.raw());
}

TEST(Checkpoint, HeaderIsLittleEndian) {
  Checkpoint c;
  c.shape = {8, 8, 8, 8};
  c.periods = {1, 1, 1, 1};
  c.H = EndField::identity(1, 4096);
  std::stringstream ss;
  write_checkpoint(ss, c);
  const std::string s = ss.str();
  EXPECT_EQ(s.substr(0, 8), "HYMLABCK");
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 1u);  // version
  EXPECT_EQ(s[9], 0);
  EXPECT_EQ(static_cast<unsigned char>(s[12]), 4u);  // ndim
  EXPECT_EQ(static_cast<unsigned char>(s[16]), 8u);  // shape[0]
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("NOTACKPT0000");
  EXPECT_THROW(read_checkpoint(bad), Error);
  Checkpoint c;
  c.shape = {8, 8, 8, 8};
  c.periods = {1, 1, 1, 1};
  c.H = EndField::identity(2, 4096);
  std::stringstream ss;
  write_checkpoint(ss, c);
  std::stringstream cut(ss.str().substr(0, ss.str().size() - 5));
  try {
    read_checkpoint(cut);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  c.H = EndField::identity(2, 100);
  std::stringstream mismatch;
  EXPECT_THROW(write_checkpoint(mismatch, c), Error);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "hymlab_test_io";
  std::filesystem::remove_all(dir);
  Checkpoint c;
  c.shape = {8, 8, 8, 8};
  c.periods = {1, 1, 1, 1};
  c.H = EndField::identity(1, 4096);
  c.step = 5;
  write_checkpoint(dir / "sub" / "a.bin", c);
  EXPECT_EQ(read_checkpoint(dir / "sub" / "a.bin").step, 5u);
  EXPECT_FALSE(std::filesystem::exists(dir / "sub" / "a.bin.tmp"));
  EXPECT_THROW(read_checkpoint(dir / "missing.bin"), Error);
  std::filesystem::remove_all(dir);
}

TEST(TraceCsv, RoundTripIsExact) {
  std::vector<FlowSample> v(3);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i].step = 10 * i;
    v[i].t = 0.1 * i + 1.0 / 3.0;
    v[i].eps = 0.0625;
    v[i].ym = std::exp(-double(i)) * 0.125;
    v[i].sup_F = 1e-17 * (i + 1);
    v[i].he_residual = std::sqrt(2.0) * i;
    v[i].min_eig_H = 0.9;
    v[i].dt = 1e-3;
  }
  std::stringstream ss;
  write_trace_csv(ss, v);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "# hymlab-trace v1");
  EXPECT_NE(text.find("step,t,eps,ym_energy,sup_F,he_residual,min_eig_H,dt\n"), std::string::npos);
  const auto w = read_trace_csv(ss);
  ASSERT_EQ(w.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(w[i].step, v[i].step);
    EXPECT_EQ(w[i].t, v[i].t);
    EXPECT_EQ(w[i].ym, v[i].ym);
    EXPECT_EQ(w[i].sup_F, v[i].sup_F);
    EXPECT_EQ(w[i].he_residual, v[i].he_residual);
  }
}

TEST(TraceCsv, RejectsMalformed) {
  std::stringstream nohdr("step,t,eps,ym_energy,sup_F,he_residual,min_eig_H,dt\n");
  EXPECT_THROW(read_trace_csv(nohdr), Error);
  std::stringstream cols("# hymlab-trace v1\nstep,t\n");
  EXPECT_THROW(read_trace_csv(cols), Error);
  std::stringstream shortrow("# hymlab-trace v1\nstep,t,eps,ym_energy,sup_F,he_residual,min_eig_H,dt\n1,2,3\n");
  EXPECT_THROW(read_trace_csv(shortrow), Error);
  std::stringstream junk("# hymlab-trace v1\nstep,t,eps,ym_energy,sup_F,he_residual,min_eig_H,dt\n1,2,3,x,5,6,7,8\n");
  try {
    read_trace_csv(junk);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ym_energy"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Config, DefaultsAndFields) {
  const auto c = parse_config(R"({
    // comments are allowed
    "geometry": {"kind": "sheared", "grid": [8, 8, 12, 8], "amplitude": 0.1},
    "bundle": {"direct_sum": [{"builtin": "flux_line", "k": [1, 0]}, {"dual": {"builtin": "flux_line", "k": [1, 0]}}]},
    "metric": {"name": "random_smooth", "seed": 4, "compare_seed": 5},
    "flow": {"dt": 0.01, "schedule": [1, 0.5], "gauge": true},
    "strict": true
  })");
  EXPECT_EQ(c.geometry.kind, "sheared");
  EXPECT_EQ(c.geometry.grid, (std::vector<int>{8, 8, 12, 8}));
  EXPECT_EQ(c.geometry.periods, (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(c.bundle.op, "direct_sum");
  EXPECT_EQ(detail::node_rank(c.bundle), 2);
  EXPECT_EQ(c.metric.seed, 4u);
  EXPECT_EQ(*c.metric.compare_seed, 5u);
  EXPECT_EQ(c.flow.schedule.size(), 2u);
  EXPECT_TRUE(c.flow.gauge);
  EXPECT_TRUE(c.strict);
  EXPECT_EQ(c.output.directory, "out");
}

TEST(Config, SyntaxErrorsReportLineAndColumn) {
  const std::string msg = error_of("{\n  \"bundle\": {\"builtin\": \"trivial\"},\n  \"flow\": {\"dt\": 1e-3,,}\n}");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(Config, FieldErrorsNameTheField) {
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "trivial"}, "flow": {"dt": -1}})").find("/flow/dt"), std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "nope"}})").find("/bundle/builtin"), std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "trivial"}, "geometry": {"grid": [8, 8, 8, 9]}})").find("/geometry/grid/3"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "trivial"}, "flow": {"dtt": 1}})").find("/flow/dtt"), std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "flux_line", "k": [1]}})").find("/bundle/k"), std::string::npos);
  EXPECT_NE(error_of(R"({"geometry": {}})").find("/bundle"), std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "trivial", "rank": 2}, "metric": {"name": "diag", "diag": [1]}})").find("/metric/diag"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "trivial"}, "flow": {"schedule": [1, 0]}})").find("/flow/schedule/1"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"builtin": "trivial"}, "nef": {"lines": [{"builtin": "extension", "b": [0, 0]}]}})")
                .find("/nef/lines/0"),
            std::string::npos);
}

TEST(Config, HugeGridRejectedBeforeAllocation) {
  const std::string msg = error_of(R"({"bundle": {"builtin": "trivial"}, "geometry": {"grid": [256, 256, 256, 256]}})");
  EXPECT_NE(msg.find("points"), std::string::npos);
  EXPECT_NE(error_of(R"({"bundle": {"tensor": [{"builtin": "trivial", "rank": 3}, {"builtin": "trivial", "rank": 2}]}})")
                .find("rank"),
            std::string::npos);
}

TEST(Config, BuildersMatchDirectConstruction) {
  const auto c = parse_config(R"({
    "geometry": {"grid": [8, 8, 8, 8]},
    "bundle": {"builtin": "extension", "b": [[0.5, 0.1], 0], "exact": {"amplitude": 0.05, "axis": 1}},
    "metric": {"name": "random_smooth", "seed": 9, "amplitude": 0.2}
  })");
  const Geometry g = build_geometry(c.geometry);
  const BundleSpec s = build_bundle(c.bundle, g.grid_ptr());
  EXPECT_EQ(s.rank, 2);
  const Field u = sine_field(g.grid(), 0.05, 1);
  ExtensionClass e = exact_class(g.grid(), u);
  for (auto& x : e.beta[0]) x += cd(0.5, 0.1);
  const BundleSpec ref = extension_bundle(g.grid_ptr(), e);
  EXPECT_EQ(s.a[0].raw(), ref.a[0].raw());
  EXPECT_EQ(s.a[1].raw(), ref.a[1].raw());
  EXPECT_EQ(build_metric(c.metric, s).raw(), random_smooth_metric(s, 9, 0.2).raw());
}

TEST(Config, PredictedNefResidual) {
  GeometryConfig g;
  g.periods = {1, 2, 1.5, 1};
  BundleNode L;
  L.op = "flux_line";
  L.k = {1, -1};
  EXPECT_NEAR(*predicted_nef_residual(L, g, 0.1), 0.1 - kPi / 0.75, 1e-15);
  L.k = {2, 0};
  EXPECT_EQ(*predicted_nef_residual(L, g, 0.01), 0.01);
  L.op = "det";
  EXPECT_FALSE(predicted_nef_residual(L, g, 0.0));
  g.kind = "sheared";
  g.amplitude = 0.1;
  L.op = "flux_line";
  EXPECT_FALSE(predicted_nef_residual(L, g, 0.0));
}

TEST(Report, SummaryHasAllSections) {
  const json s = empty_summary();
  for (const char* k : {"geometry", "chern", "flow", "pipeline", "projectivization", "errors"}) EXPECT_TRUE(s.contains(k)) << k;
  const json e = error_json(Error(ErrorKind::convergence, "stalled", {1.0, 0.5}));
  EXPECT_EQ(e["kind"], "convergence");
  EXPECT_EQ(e["history"].size(), 2u);
}

TEST(Report, BundledConfigsParse) {
  std::size_t n = 0;
  for (const auto& f : std::filesystem::directory_iterator(HYMLAB_CONFIG_DIR)) {
    if (f.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(f.path())) << f.path();
    ++n;
  }
  EXPECT_GE(n, 10u);
}
