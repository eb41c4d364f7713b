// hymlab: config-driven experiment runner.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hymlab/report.hpp"

using namespace hymlab;
namespace fs = std::filesystem;

namespace {

struct Args {
  std::string config;
  std::string out;
  int threads = 1;
  bool strict = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> eps;
  std::vector<double> eps_list;
  std::string resume;
};

struct Run {
  ExperimentConfig cfg;
  fs::path out;
  bool strict = false;
  json summary = empty_summary();

  void write_summary() const {
    std::ofstream os(out / "summary.json");
    if (!os) throw Error(ErrorKind::io, "cannot write " + (out / "summary.json").string());
    os << summary.dump(2) << '\n';
  }
};

Run prepare(const Args& a) {
  Run r;
  r.cfg = load_config(a.config);
  if (a.seed) r.cfg.metric.seed = *a.seed;
  r.strict = a.strict || r.cfg.strict;
  r.out = a.out.empty() ? fs::path(r.cfg.output.directory) : fs::path(a.out);
  fs::create_directories(r.out);
  set_threads(a.threads);
  return r;
}

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%010llu.bin", static_cast<unsigned long long>(step));
  return buf;
}

Checkpoint make_checkpoint(const Geometry& g, const EndField& H) {
  Checkpoint c;
  c.shape = g.grid().shape();
  c.periods = g.grid().periods();
  c.H = H;
  return c;
}

FlowOptions flow_options(const ExperimentConfig& c) {
  FlowOptions o;
  o.dt = c.flow.dt;
  o.horizon = c.flow.horizon;
  o.stabilization = c.flow.stabilization;
  o.dt_min = c.flow.dt_min;
  o.energy_tol = c.flow.energy_tol;
  o.plateau_tol = c.flow.plateau_tol;
  o.plateau_window = c.flow.plateau_window;
  o.max_steps = c.flow.max_steps;
  o.sample_stride = c.output.sample_stride;
  return o;
}

void write_trace(const fs::path& path, const std::vector<FlowSample>& samples) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_trace_csv(os, samples);
}

void cmd_check_geometry(Run& r) {
  const Geometry g = build_geometry(r.cfg.geometry);
  json j = geometry_json(g);
  if (j["rho1"].get<double>() > 1e-12) {
    const Geometry corrected = gauduchon_correct(g);
    const double after = gauduchon_residual(corrected).rho1;
    j["corrected"] = json{{"rho1", after}, {"reduction", after > 0.0 ? json(j["rho1"].get<double>() / after) : json(nullptr)}};
  }
  r.summary["geometry"] = j;
}

void cmd_chern(Run& r) {
  const Geometry g = build_geometry(r.cfg.geometry);
  r.summary["geometry"] = geometry_json(g);
  const BundleSpec s = build_bundle(r.cfg.bundle, g.grid_ptr());
  const EndField H = build_metric(r.cfg.metric, s);
  const ChernReport rep = chern_report(s, H, g, r.strict);
  json j = chern_json(rep);
  j["bundle"] = s.name;
  j["rank"] = s.rank;
  j["energy_identity"] = energy_json(energy_identity(s, H, g, rep.lambda));
  j["bogomolov_detail"] = bogomolov_json(bogomolov_quantity(s, H, g));
  j["flux_pairings"] = flux_pairings(curvature(H, s, g), g);
  j["integrability_residual"] = integrability_residual(s);
  if (const auto cs = r.cfg.metric.compare_seed) {
    const EndField H2 = random_smooth_metric(s, *cs, r.cfg.metric.amplitude);
    j["transgression"] = json{{"compare_seed", *cs}, {"max_abs_diff", transgression_check(s, H, H2, g)}};
  }
  r.summary["chern"] = j;
}

void cmd_flow(Run& r, const Args& a) {
  const Geometry g = build_geometry(r.cfg.geometry);
  r.summary["geometry"] = geometry_json(g);
  const BundleSpec s = build_bundle(r.cfg.bundle, g.grid_ptr());
  const double lambda = lambda_of(s, g, r.strict);
  FlowOptions o = flow_options(r.cfg);
  EndField H0;
  if (!a.resume.empty()) {
    const Checkpoint c = read_checkpoint(a.resume);
    require(c.shape == g.grid().shape() && c.periods == g.grid().periods(), ErrorKind::mismatch,
            "checkpoint " + a.resume + " was written on a different grid");
    require(c.H.rank() == s.rank, ErrorKind::mismatch, "checkpoint " + a.resume + " has the wrong rank");
    H0 = c.H;
    o.t_start = c.t;
    o.step_start = c.step;
    o.dissipated_start = c.dissipated;
    o.dt = c.dt;
  } else {
    H0 = build_metric(r.cfg.metric, s);
  }
  const fs::path ckdir = r.out / "checkpoints";
  fs::create_directories(ckdir);
  const std::size_t stride = r.cfg.output.checkpoint_stride;
  const FlowCallback cb = [&](const FlowState& st) {
    if (stride == 0 || st.step == o.step_start || st.step % stride) return;
    Checkpoint c = make_checkpoint(g, *st.H);
    c.t = st.t;
    c.step = st.step;
    c.dt = st.dt;
    c.dissipated = st.dissipated;
    write_checkpoint(ckdir / step_name(st.step), c);
  };
  const FlowTrace tr = hym_flow(s, H0, g, lambda, o, cb);
  write_trace(r.out / "trace.csv", tr.samples);
  Checkpoint fin = make_checkpoint(g, tr.H);
  fin.t = tr.t;
  fin.step = tr.step;
  fin.dt = tr.dt;
  fin.dissipated = tr.dissipated;
  write_checkpoint(ckdir / "final.bin", fin);
  json j = flow_json(tr);
  j["lambda"] = lambda;
  j["bundle"] = s.name;
  j["resumed_from"] = a.resume.empty() ? json(nullptr) : json(a.resume);
  j["t_start"] = o.t_start;
  j["step_start"] = o.step_start;
  r.summary["flow"] = j;
  if (r.cfg.flow.gauge) {
    require(a.resume.empty(), ErrorKind::precondition, "the gauge comparison starts from the configured metric, not a checkpoint");
    const GaugeFlowResult gr = gauge_flow(s, H0, g, lambda, o, true);
    r.summary["flow"]["gauge"] = json{{"max_relation", gr.max_relation},
                                      {"final_relation", gr.relation.empty() ? 0.0 : gr.relation.back()},
                                      {"status", to_string(gr.trace.status)}};
  }
  if (tr.status == FlowStatus::positivity_lost) throw Error(ErrorKind::positivity, tr.message);
}

void cmd_perturbed(Run& r, const Args& a) {
  const Geometry g = build_geometry(r.cfg.geometry);
  r.summary["geometry"] = geometry_json(g);
  const BundleSpec s = build_bundle(r.cfg.bundle, g.grid_ptr());
  const double eps = a.eps ? *a.eps : r.cfg.flow.eps;
  const double lambda = lambda_of(s, g, r.strict);
  const EndField K = trace_normalize(build_metric(r.cfg.metric, s), lambda, s, g);
  PerturbedOptions po;
  po.tol = r.cfg.flow.perturbed_tol;
  po.stabilization = r.cfg.flow.stabilization;
  const PerturbedResult pr = perturbed_solve(s, K, eps, g, po);
  Checkpoint c = make_checkpoint(g, pr.H);
  c.eps = eps;
  c.t = pr.t;
  c.step = pr.steps;
  fs::create_directories(r.out / "checkpoints");
  write_checkpoint(r.out / "checkpoints" / "perturbed.bin", c);
  r.summary["flow"] = json{{"mode", "perturbed"},
                           {"eps", eps},
                           {"lambda", lambda},
                           {"residual", pr.residual},
                           {"steps", pr.steps},
                           {"t", pr.t},
                           {"history", pr.history},
                           {"he_residual", he_residual(pr.H, s, g, lambda)},
                           {"sup_F", sup_curvature(curvature(pr.H, s, g), pr.H, g)}};
}

void cmd_approx_flat(Run& r) {
  const Geometry g = build_geometry(r.cfg.geometry);
  r.summary["geometry"] = geometry_json(g);
  const BundleSpec s = build_bundle(r.cfg.bundle, g.grid_ptr());
  PipelineOptions po;
  po.schedule = r.cfg.flow.schedule;
  po.flow = flow_options(r.cfg);
  po.perturbed.tol = r.cfg.flow.perturbed_tol;
  po.perturbed.stabilization = r.cfg.flow.stabilization;
  po.target_ratio = r.cfg.flow.target_ratio;
  po.strict = r.strict;
  const PipelineReport rep = approx_flat_pipeline(s, g, po);
  std::vector<FlowSample> all;
  fs::create_directories(r.out / "checkpoints");
  for (std::size_t i = 0; i < rep.stages.size(); ++i) {
    const auto& st = rep.stages[i];
    all.insert(all.end(), st.trace.samples.begin(), st.trace.samples.end());
    if (st.trace.H.empty()) continue;
    Checkpoint c = make_checkpoint(g, st.trace.H);
    c.eps = st.eps;
    c.t = st.trace.t;
    c.step = st.trace.step;
    c.dt = st.trace.dt;
    c.dissipated = st.trace.dissipated;
    write_checkpoint(r.out / "checkpoints" / ("stage_" + std::to_string(i) + ".bin"), c);
  }
  write_trace(r.out / "trace.csv", all);
  r.summary["pipeline"] = pipeline_json(rep);
  r.summary["chern"] = chern_json(rep.chern);
  for (const auto& e : rep.errors) r.summary["errors"].push_back(json{{"kind", "pipeline"}, {"message", e}});
}

void cmd_segre(Run& r) {
  const Geometry g = build_geometry(r.cfg.geometry);
  r.summary["geometry"] = geometry_json(g);
  const BundleSpec s = build_bundle(r.cfg.bundle, g.grid_ptr());
  const EndField H = build_metric(r.cfg.metric, s);
  const auto& pc = r.cfg.projectivization;
  const FiberedGrid fg = build_fibered_grid(s, H, g, pc.fiber_res);
  json checks = json::array();
  for (int k = 0; k <= 2; ++k) checks.push_back(segre_json(segre_check(fg, k)));
  const Field phi = sine_field(g.grid(), pc.phi_amplitude, pc.phi_axis);
  r.summary["projectivization"] = json{{"bundle", s.name},
                                       {"fiber_res", pc.fiber_res},
                                       {"quadrature_self_test", quadrature_self_test(fg)},
                                       {"segre", checks},
                                       {"metric_change", metric_change_json(oe1_metric_change_invariance(fg, phi))}};
}

void cmd_nef_cert(Run& r, const Args& a) {
  const Geometry g = build_geometry(r.cfg.geometry);
  r.summary["geometry"] = geometry_json(g);
  const std::vector<double> eps = a.eps_list.empty() ? r.cfg.nef.eps : a.eps_list;
  std::vector<BundleNode> lines = r.cfg.nef.lines;
  if (lines.empty()) lines.push_back(r.cfg.bundle);
  json out = json::array();
  for (const auto& node : lines) {
    const BundleSpec L = build_bundle(node, g.grid_ptr());
    require(L.rank == 1, ErrorKind::precondition, "nef-cert needs line bundles, got rank " + std::to_string(L.rank));
    const EndField h0 = build_metric(r.cfg.metric, L);
    const EndField Id = identity_metric(L);
    json j{{"bundle", L.name}, {"deg", degree(L, Id, g, r.strict)}};
    try {
      const HarmonicLine hl = harmonic_line_metric(L, g, &h0);
      j["harmonic"] = json{{"flatness_defect", hl.flatness_defect},
                           {"c1sq_term", hl.c1sq_term},
                           {"mean_residual", hl.mean_residual}};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::precondition) throw;
      j["harmonic"] = nullptr;
      j["harmonic_skipped"] = e.what();
    }
    json res = json::array();
    bool all_match = true;
    for (double e : eps) {
      const double v = nef_residual(L, Id, e, g);
      const auto pred = predicted_nef_residual(node, r.cfg.geometry, e);
      json row{{"eps", e}, {"nef_residual", v}, {"predicted", pred ? json(*pred) : json(nullptr)}};
      if (pred) {
        auto sign = [](double x) { return std::abs(x) < 1e-9 ? 0 : (x > 0 ? 1 : -1); };
        const bool match = sign(v) == sign(*pred);
        row["sign_match"] = match;
        row["error"] = std::abs(v - *pred);
        all_match = all_match && match;
      }
      res.push_back(row);
    }
    j["residuals"] = res;
    j["signs_match"] = all_match;
    out.push_back(j);
  }
  r.summary["chern"] = json{{"nef", out}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hymlab: Hermitian Yang-Mills experiments on discretized complex tori"};
  app.require_subcommand(1);
  Args a;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", a.out, "output directory, overrides output.directory");
    sub->add_option("--threads", a.threads, "FFT worker cap")->check(CLI::Range(1, 256));
    sub->add_flag("--strict", a.strict, "fail instead of warn when degrees are ill defined");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { a.seed = v; }, "metric seed override");
  };
  auto* geo = app.add_subcommand("check-geometry", "Gauduchon and Kaehler residuals of the background metric");
  auto* chern = app.add_subcommand("chern", "Chern numbers, energy identity and Bogomolov quantity");
  auto* flow = app.add_subcommand("flow", "Hermitian Yang-Mills flow with trace and checkpoints");
  auto* pert = app.add_subcommand("perturbed", "solve the perturbed Hermitian-Einstein equation");
  auto* flat = app.add_subcommand("approx-flat", "perturbed solves and flows along the eps schedule");
  auto* segre = app.add_subcommand("segre", "Segre push-forward checks on the projectivization");
  auto* nef = app.add_subcommand("nef-cert", "harmonic line metrics and nef residuals");
  for (auto* s : {geo, chern, flow, pert, flat, segre, nef}) common(s);
  flow->add_option("--resume", a.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  pert->add_option_function<double>("--eps", [&](const double& v) { a.eps = v; }, "perturbation parameter");
  nef->add_option("--eps", a.eps_list, "eps values, overrides nef.eps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  std::optional<Run> run;
  try {
    run = prepare(a);
    if (geo->parsed()) cmd_check_geometry(*run);
    if (chern->parsed()) cmd_chern(*run);
    if (flow->parsed()) cmd_flow(*run, a);
    if (pert->parsed()) cmd_perturbed(*run, a);
    if (flat->parsed()) cmd_approx_flat(*run);
    if (segre->parsed()) cmd_segre(*run);
    if (nef->parsed()) cmd_nef_cert(*run, a);
    run->write_summary();
  } catch (const Error& e) {
    const json err = error_json(e);
    std::cerr << json{{"error", err}}.dump() << '\n';
    if (run) {
      run->summary["errors"].push_back(err);
      try {
        run->write_summary();
      } catch (const Error&) {
      }
    }
    return e.kind() == ErrorKind::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 0;
}
