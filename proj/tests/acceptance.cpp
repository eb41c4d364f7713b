// Acceptance suite: one PASS/FAIL line per criterion, experiments loaded from configs/.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hymlab/report.hpp"

using namespace hymlab;

namespace {

const std::filesystem::path kConfigs = HYMLAB_CONFIG_DIR;

ExperimentConfig cfg(const std::string& name) { return load_config(kConfigs / (name + ".json")); }

struct Setup {
  ExperimentConfig c;
  Geometry g;
  BundleSpec s;
  EndField H;
};

Setup setup(const std::string& name) {
  ExperimentConfig c = cfg(name);
  Geometry g = build_geometry(c.geometry);
  BundleSpec s = build_bundle(c.bundle, g.grid_ptr());
  EndField H = build_metric(c.metric, s);
  return {std::move(c), std::move(g), std::move(s), std::move(H)};
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

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void criterion(const std::string& name, const std::function<bool(std::ostringstream&)>& body) {
  std::ostringstream detail;
  detail.precision(4);
  bool ok = false;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail << " exception: " << e.what();
  }
  if (!ok) ++failures;
  std::printf("%s %s:%s (%.1f s)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.str().c_str(), seconds_since(t0));
  std::fflush(stdout);
}

double frac_dist(double x) { return std::abs(x - std::round(x)); }

}  // namespace

int main() {
  criterion("geometry identities", [](std::ostringstream& d) {
    const auto t0 = std::chrono::steady_clock::now();
    const Geometry flat = build_geometry(cfg("geometry_flat").geometry);
    const auto rf = gauduchon_residual(flat);
    const Geometry sh = build_geometry(cfg("geometry_sheared").geometry);
    const double rs = gauduchon_residual(sh).rho1;
    const double dw = kahler_residual(sh);
    const Geometry conf = build_geometry(cfg("geometry_conformal").geometry);
    const double before = gauduchon_residual(conf).rho1;
    const double after = gauduchon_residual(gauduchon_correct(conf)).rho1;
    const double reduction = after > 0.0 ? before / after : INFINITY;
    const double t = seconds_since(t0);
    d << " flat rho1 " << rf.rho1 << " rho2 " << rf.rho2 << "; sheared rho1 " << rs << " |d omega| " << dw
      << "; conformal rho1 " << before << " -> " << after << " (x" << reduction << "); " << t << " s";
    return rf.rho1 < 1e-12 && rf.rho2 < 1e-12 && rs < 1e-10 && dw > 1e-2 && reduction >= 1e4 && t < 10.0;
  });

  criterion("Chern-Weil energy identity", [](std::ostringstream& d) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    int pairs = 0;
    for (const char* name : {"chern_extension", "chern_flat_line", "chern_flux_line", "chern_flux_sum", "chern_metric_independence"}) {
      const Setup x = setup(name);
      std::vector<EndField> metrics{x.H};
      if (x.c.metric.compare_seed) metrics.push_back(random_smooth_metric(x.s, *x.c.metric.compare_seed, x.c.metric.amplitude));
      for (const auto& H : metrics) {
        const auto e = energy_identity(x.s, H, x.g);
        worst = std::max(worst, e.residual);
        ++pairs;
      }
    }
    const Setup ext = setup("chern_extension");
    const auto e = energy_identity(ext.s, ext.H, ext.g);
    const double b = std::abs(ext.c.bundle.b[0]);
    const double closed = 2.0 * std::pow(b, 4) * ext.g.volume();
    const double cf = std::max(std::abs(e.lhs - closed), std::abs(e.mean_energy - closed));
    const double t = seconds_since(t0);
    d << " " << pairs << " pairs, worst residual " << worst << "; extension int|F|^2 " << e.lhs << ", int|iLF|^2 "
      << e.mean_energy << " vs 2|b|^4 Vol " << closed << "; " << t << " s";
    return pairs >= 6 && worst < 1e-7 && cf < 1e-7 && t < 60.0;
  });

  criterion("metric independence", [](std::ostringstream& d) {
    double dev[2];
    int i = 0;
    for (const char* name : {"chern_metric_independence_flat", "chern_metric_independence"}) {
      const Setup x = setup(name);
      dev[i++] = transgression_check(x.s, x.H, random_smooth_metric(x.s, *x.c.metric.compare_seed, x.c.metric.amplitude), x.g);
    }
    d << " flat " << dev[0] << ", sheared " << dev[1];
    return dev[0] < 1e-7 && dev[1] < 1e-6;
  });

  criterion("flux quantization", [](std::ostringstream& d) {
    const Setup x = setup("chern_flux_line");
    double worst = 0.0;
    int lines = 0;
    for (int k1 = -3; k1 <= 3; ++k1)
      for (int k2 = -3; k2 <= 3; ++k2) {
        const BundleSpec L = flux_line(x.g.grid_ptr(), {k1, k2});
        const EndField h = random_smooth_metric(L, x.c.metric.seed + lines, x.c.metric.amplitude);
        const Curvature F = curvature(h, L, x.g);
        const auto nums = chern_numbers(F, 1, x.g);
        worst = std::max({worst, frac_dist(nums.ch1), frac_dist(nums.c1sq)});
        const auto fp = flux_pairings(F, x.g);
        worst = std::max({worst, std::abs(fp[0] - k1), std::abs(fp[1] - k2)});
        ++lines;
      }
    d << " " << lines << " lines, worst distance to the integers " << worst;
    return worst < 1e-6;
  });

  criterion("Bogomolov inequality", [](std::ostringstream& d) {
    double lo = INFINITY;
    for (const char* name : {"chern_extension", "chern_flat_line", "chern_metric_independence"}) {
      const Setup x = setup(name);
      lo = std::min(lo, bogomolov_quantity(x.s, x.H, x.g).quantity);
    }
    {
      const Setup x = setup("chern_extension");
      lo = std::min(lo, bogomolov_quantity(x.s, random_smooth_metric(x.s, 21, 0.3), x.g).quantity);
    }
    const Setup neg = setup("chern_flux_sum");
    const double q = bogomolov_quantity(neg.s, neg.H, neg.g).normalized;
    d << " min over flat/extension " << lo << "; flux sum normalized " << q;
    return lo >= -1e-7 && q < -0.1;
  });

  double gauge_r[2] = {0.0, 0.0};
  criterion("flow energy dissipation", [&](std::ostringstream& d) {
    bool ok = true;
    int i = 0;
    for (const char* name : {"flow_extension", "flow_extension_half_step"}) {
      const Setup x = setup(name);
      const double lambda = lambda_of(x.s, x.g);
      const FlowOptions o = flow_options(x.c);
      const FlowTrace tr = hym_flow(x.s, x.H, x.g, lambda, o);
      const double bal = tr.energy_balance();
      const double tol = i == 0 ? 1e-2 : 2.5e-3;
      d << " dt " << o.dt << ": " << tr.step << " steps, nonincreasing " << tr.ym_nonincreasing() << ", balance " << bal << ";";
      ok = ok && tr.step >= 1000 && tr.ym_nonincreasing() && tr.status == FlowStatus::completed && bal < tol;
      if (x.c.flow.gauge) gauge_r[i] = gauge_flow(x.s, x.H, x.g, lambda, o, true).max_relation;
      ++i;
    }
    return ok;
  });

  criterion("gauge equivalence", [&](std::ostringstream& d) {
    const double floor = 1e-12;
    d << " discrepancy " << gauge_r[0] << " at dt 1e-3, " << gauge_r[1] << " at dt 5e-4";
    return gauge_r[0] < 1e-4 && gauge_r[1] <= std::max(0.55 * gauge_r[0], floor);
  });

  criterion("approximate-flat pipeline", [](std::ostringstream& d) {
    const auto t0 = std::chrono::steady_clock::now();
    const Setup x = setup("approx_flat_extension");
    PipelineOptions po;
    po.schedule = x.c.flow.schedule;
    po.flow = flow_options(x.c);
    po.perturbed.tol = x.c.flow.perturbed_tol;
    po.target_ratio = x.c.flow.target_ratio;
    const PipelineReport r = approx_flat_pipeline(x.s, x.g, po);
    const double t = seconds_since(t0);
    d << " sup|F| per stage";
    for (const auto& st : r.stages) d << " " << st.sup_F_after;
    d << "; final " << r.final_sup_F << " vs 0.1 x " << r.initial_sup_F << "; he_residual monotone "
      << r.he_residual_monotone << "; " << t << " s";
    return r.errors.empty() && r.sup_F_monotone && r.final_below_target && r.he_residual_monotone && t < 600.0;
  });

  criterion("negative control", [](std::ostringstream& d) {
    const Setup x = setup("approx_flat_negative_control");
    PipelineOptions po;
    po.schedule = x.c.flow.schedule;
    po.flow = flow_options(x.c);
    const PipelineReport r = approx_flat_pipeline(x.s, x.g, po);
    // decoupled metric: each summand keeps i Lambda F = sum_a pi k_a / A_a
    double decoupled2 = 0.0;
    for (const auto& child : x.c.bundle.children) {
      double m = 0.0;
      for (std::size_t a = 0; a < child.k.size(); ++a)
        m += kPi * child.k[a] / (0.5 * x.c.geometry.periods[2 * a] * x.c.geometry.periods[2 * a + 1]);
      decoupled2 += (m - r.lambda) * (m - r.lambda);
    }
    const double decoupled = std::sqrt(decoupled2);
    double min_he = INFINITY;
    for (const auto& st : r.stages) min_he = std::min(min_he, st.min_he_residual_flow);
    d << " hypothesis_violated " << r.hypothesis_violated << ", min he_residual " << min_he << " vs 0.9 x "
      << decoupled;
    return r.hypothesis_violated && !r.stages.empty() && min_he > 0.9 * decoupled;
  });

  criterion("nef and flat line certification", [](std::ostringstream& d) {
    const ExperimentConfig c = cfg("nef_lines");
    const Geometry g = build_geometry(c.geometry);
    double defect = 0.0;
    int flat = 0, signs = 0, mismatches = 0;
    for (const auto& node : c.nef.lines) {
      const BundleSpec L = build_bundle(node, g.grid_ptr());
      const EndField Id = identity_metric(L);
      const bool nef0 = nef_residual(L, Id, 0.0, g) >= -1e-12;
      if (std::abs(degree(L, Id, g)) < 1e-8 && nef0) {
        const EndField h0 = build_metric(c.metric, L);
        defect = std::max(defect, harmonic_line_metric(L, g, &h0).flatness_defect);
        ++flat;
      }
      for (double e : c.nef.eps) {
        const auto pred = predicted_nef_residual(node, c.geometry, e);
        if (!pred) continue;
        const double v = nef_residual(L, Id, e, g);
        auto sign = [](double x) { return std::abs(x) < 1e-9 ? 0 : (x > 0 ? 1 : -1); };
        if (sign(v) != sign(*pred)) ++mismatches;
        ++signs;
      }
    }
    d << " " << flat << " degree-0 nef lines, worst flatness defect " << defect << "; " << signs << " sign checks, "
      << mismatches << " mismatches";
    return flat >= 2 && defect < 1e-9 && signs >= 12 && mismatches == 0;
  });

  criterion("Segre push-forward", [](std::ostringstream& d) {
    bool ok = true;
    for (const char* name : {"segre_trivial", "segre_extension"}) {
      const Setup x = setup(name);
      const auto& pc = x.c.projectivization;
      const FiberedGrid fg = build_fibered_grid(x.s, x.H, x.g, pc.fiber_res);
      const double tol[3] = {1e-4, 1e-4, 2e-3};
      d << " " << x.s.name << " (fiber " << pc.fiber_res << "):";
      for (int k = 0; k <= 2; ++k) {
        const auto c = segre_check(fg, k);
        const double err = std::max(c.integrated, c.pointwise);
        d << " k" << k << " " << err;
        ok = ok && err < tol[k];
      }
      const double inv = oe1_metric_change_invariance(fg, sine_field(x.g.grid(), pc.phi_amplitude, pc.phi_axis)).value;
      d << ", metric change " << inv << ";";
      ok = ok && inv < 1e-4 && pc.fiber_res == 64;
    }
    return ok;
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
