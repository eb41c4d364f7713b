#pragma once

#include "hymlab/chern_weil.hpp"

#include <deque>
#include <functional>
#include <optional>

namespace hymlab {

struct FlowOptions {
  double dt = 1e-3;
  /// Final flow time.
  double horizon = 1.0;
  /// kappa in the smoothing filter 1/(1 + 2 dt kappa P_0); 0 disables it.
  double stabilization = 1.0;
  double dt_min = 1e-7;
  /// A step is rejected when YM rises by more than energy_tol * dt^2 * YM.
  double energy_tol = 10.0;
  std::size_t sample_stride = 1;
  /// Stop once sup|F| changes by less than this fraction over plateau_window steps; 0 disables.
  double plateau_tol = 0.0;
  std::size_t plateau_window = 100;
  std::size_t max_steps = 10'000'000;
  /// Keep |F|^2 snapshots every this many steps; 0 keeps none.
  std::size_t retain_stride = 0;
  /// Starting time and step, used when resuming.
  double t_start = 0.0;
  std::size_t step_start = 0;
  double dissipated_start = 0.0;
};

struct FlowSample {
  std::size_t step = 0;
  double t = 0.0;
  double eps = 0.0;
  double ym = 0.0;
  double sup_F = 0.0;
  double he_residual = 0.0;
  double min_eig_H = 0.0;
  double dt = 0.0;
  double dissipation = 0.0;  ///< integral of |dA/dt|^2 = 2 integral of |dbar_E Phi|^2
};

struct Snapshot {
  double t = 0.0;
  std::vector<double> F2;
};

enum class FlowStatus { completed, plateau, positivity_lost, step_limit };

inline const char* to_string(FlowStatus s) {
  switch (s) {
    case FlowStatus::completed: return "completed";
    case FlowStatus::plateau: return "plateau";
    case FlowStatus::positivity_lost: return "positivity_lost";
    case FlowStatus::step_limit: return "step_limit";
  }
  return "unknown";
}

struct FlowTrace {
  std::vector<FlowSample> samples;
  std::vector<Snapshot> history;
  FlowStatus status = FlowStatus::completed;
  std::string message;
  int halvings = 0;
  double ym0 = 0.0;
  double ym_final = 0.0;
  /// 2 times the time integral of the dissipation, by the trapezoid rule.
  double dissipated = 0.0;
  EndField H;
  double t = 0.0;
  std::size_t step = 0;
  double dt = 0.0;

  /// |YM(T) + 2 int D - YM(0)| relative to the energy lost.
  double energy_balance() const {
    const double drop = ym0 - ym_final;
    const double r = std::abs(ym_final + dissipated - ym0);
    return drop > 0.0 ? r / drop : r;
  }
  bool ym_nonincreasing(double rtol = 0.0) const {
    for (std::size_t i = 1; i < samples.size(); ++i)
      if (samples[i].ym > samples[i - 1].ym * (1.0 + rtol)) return false;
    return true;
  }
};

/// Curvature data at one metric.
struct FlowEval {
  ChernConnection conn;
  EndField Phi;
  std::vector<double> F2;
  double ym = 0.0;
  double sup_F = 0.0;
};

inline FlowEval evaluate(const EndField& H, const OperatorData& op, const Geometry& geom) {
  FlowEval e;
  e.conn = chern_connection(H, op, geom.grid());
  e.Phi = mean_curvature(e.conn.F, geom);
  e.F2 = curvature_norm2(e.conn.F, H, geom);
  e.ym = geom.integrate_real(Field(e.F2.begin(), e.F2.end()));
  for (double x : e.F2) e.sup_F = std::max(e.sup_F, x);
  e.sup_F = std::sqrt(e.sup_F);
  return e;
}

/// Pointwise sum W_{mk} tr(a_k H^{-1} a_m^dagger H) for a (0,1) form a_k dzbar_k.
inline std::vector<double> form01_norm2(const std::vector<EndField>& a, const EndField& H, const Geometry& geom) {
  const int n = geom.complex_dim();
  std::vector<double> out(H.points());
  for (std::size_t p = 0; p < H.points(); ++p) {
    const Mat h = H.mat(p), hi = mat_inv(h);
    cd s = 0.0;
    for (int m = 0; m < n; ++m)
      for (int k = 0; k < n; ++k) s += geom.weights().at(p)(m, k) * (a[k].mat(p) * hi * a[m].mat(p).adjoint() * h).trace();
    out[p] = std::max(0.0, s.real());
  }
  return out;
}

/// dbar_E X = sum (dbar_k X + [a~_k, X]) dzbar_k.
inline std::vector<EndField> dbar_end(const EndField& X, const OperatorData& op, const Grid& g) {
  const int n = g.complex_dim();
  const EndSpectrum sp(X, g);
  std::vector<EndField> out(n);
  for (int k = 0; k < n; ++k) {
    out[k] = sp.derivative(k, true);
    for (std::size_t p = 0; p < X.points(); ++p) {
      const Mat A = op.A[k].mat(p), x = X.mat(p);
      out[k].at(p) += A * x - x * A;
    }
  }
  return out;
}

/// Integral of |dA/dt|^2 = 2 integral of |dbar_E Phi|_H^2.
inline double dissipation(const EndField& Phi, const EndField& H, const OperatorData& op, const Geometry& geom) {
  const auto n2 = form01_norm2(dbar_end(Phi, op, geom.grid()), H, geom);
  return 2.0 * geom.integrate_real(Field(n2.begin(), n2.end()));
}

namespace detail {

/// Applies 1/(1 + 2 dt kappa P_0) to every entry; constant entries are untouched.
inline EndField smooth(const EndField& M, double dt, double kappa, const Field& P0, const Grid& g) {
  if (kappa == 0.0) return M;
  Field sym(P0.size());
  for (std::size_t i = 0; i < P0.size(); ++i) sym[i] = 1.0 / (1.0 + 2.0 * dt * kappa * P0[i].real());
  EndField out = M;
  const EndSpectrum sp(M, g);
  if (sp.all_constant()) return out;
  const EndField f = sp.apply(sym);
  for (int i = 0; i < M.rank(); ++i)
    for (int j = 0; j < M.rank(); ++j) {
      const Field e = M.entry(i, j);
      if (!is_constant(e)) out.set_entry(i, j, f.entry(i, j));
    }
  return out;
}

/// H <- H^{1/2} exp(dt H^{-1/2} M~ H^{-1/2}) H^{1/2} with M = H S and M~ its smoothed version.
/// Without smoothing this is H exp(dt S).
inline EndField metric_step(const EndField& H, const EndField& S, double dt, double kappa, const Field& P0,
                            const Grid& g) {
  const EndField M = smooth(H * S, dt, kappa, P0, g);
  EndField out(H.rank(), H.points());
  for (std::size_t p = 0; p < H.points(); ++p) {
    const Mat h = H.mat(p);
    Mat s, si;
    mat_sqrt_pair(h, s, si);
    const Mat m = hermitian_part(M.mat(p));
    out.at(p) = hermitian_part(s * mat_exp(hermitian_part(dt * si * m * si)) * s);
  }
  return out;
}

inline EndField shifted(EndField X, double lambda) {
  for (std::size_t p = 0; p < X.points(); ++p)
    for (int i = 0; i < X.rank(); ++i) X.at(p)(i, i) -= lambda;
  return X;
}

inline double eigen_floor(const EndField& H) { return eigen_range(H).min_eig; }

inline bool is_uniform(const EndField& X) {
  for (std::size_t p = 1; p < X.points(); ++p)
    if (X.at(p) != X.at(0)) return false;
  return true;
}

inline EndField first_point(const EndField& X) {
  EndField out(X.rank(), 1);
  out.at(0) = X.at(0);
  return out;
}

inline EndField broadcast(const EndField& X, std::size_t points) {
  EndField out(X.rank(), points);
  for (std::size_t p = 0; p < points; ++p) out.at(p) = X.at(0);
  return out;
}

/// Bundle and geometry on a single-point grid when every input is spatially constant.
struct Uniform {
  std::optional<Geometry> geom;
  BundleSpec spec;
};

inline std::optional<Uniform> uniform_reduction(const BundleSpec& s, const Geometry& geom,
                                                std::initializer_list<const EndField*> fields) {
  if (geom.points() == 1 || !geom.is_constant()) return std::nullopt;
  for (const EndField* f : fields)
    if (f && !is_uniform(*f)) return std::nullopt;
  for (const auto& a : s.a)
    if (!is_uniform(a)) return std::nullopt;
  Uniform u;
  const GridPtr g = Grid::single_point(geom.grid().periods());
  u.geom.emplace(g, first_point(geom.metric()), geom.kind());
  u.spec = s;
  u.spec.grid = g;
  for (auto& a : u.spec.a) a = first_point(a);
  return u;
}

}  // namespace detail

struct FlowState {
  std::size_t step = 0;
  double t = 0.0;
  double dt = 0.0;
  double dissipated = 0.0;
  double ym = 0.0;
  double sup_F = 0.0;
  const EndField* H = nullptr;
};

using FlowCallback = std::function<void(const FlowState&)>;

/// HYM flow H^{-1} dH/dt = -2(i Lambda F - lambda Id), explicit multiplicative steps.
///
/// Steps that raise YM beyond the tolerance are retried with half the step down to dt_min,
/// after which the run fails. Loss of positivity ends the run with status positivity_lost.
inline FlowTrace hym_flow(const BundleSpec& s, const EndField& H0, const Geometry& geom, double lambda,
                          const FlowOptions& opts = {}, const FlowCallback& cb = {}) {
  require(opts.dt > 0.0 && opts.horizon >= opts.t_start, ErrorKind::precondition, "flow needs dt > 0 and horizon >= start");
  require(H0.rank() == s.rank && H0.points() == geom.points(), ErrorKind::mismatch, "metric does not match bundle");
  require_metric(H0);
  if (auto u = detail::uniform_reduction(s, geom, {&H0})) {
    const std::size_t P = geom.points();
    FlowCallback wrapped;
    if (cb)
      wrapped = [&](const FlowState& st) {
        const EndField Hb = detail::broadcast(*st.H, P);
        FlowState full = st;
        full.H = &Hb;
        cb(full);
      };
    FlowTrace tr = hym_flow(u->spec, detail::first_point(H0), *u->geom, lambda, opts, wrapped);
    tr.H = detail::broadcast(tr.H, P);
    for (auto& snap : tr.history) snap.F2.assign(P, snap.F2.front());
    return tr;
  }
  const OperatorData op = operator_data(s);
  const Field P0 = laplace_symbol_mean(geom);
  const Grid& g = geom.grid();

  FlowTrace tr;
  tr.H = H0;
  tr.t = opts.t_start;
  tr.step = opts.step_start;
  tr.dt = opts.dt;
  tr.dissipated = opts.dissipated_start;
  FlowEval ev = evaluate(tr.H, op, geom);
  double D = dissipation(ev.Phi, tr.H, op, geom);
  tr.ym0 = ev.ym;
  tr.ym_final = ev.ym;

  auto record = [&] {
    FlowSample smp;
    smp.step = tr.step;
    smp.t = tr.t;
    smp.ym = ev.ym;
    smp.sup_F = ev.sup_F;
    smp.he_residual = he_residual(ev.Phi, tr.H, lambda);
    smp.min_eig_H = detail::eigen_floor(tr.H);
    smp.dt = tr.dt;
    smp.dissipation = D;
    tr.samples.push_back(smp);
  };
  auto retain = [&] {
    if (opts.retain_stride > 0 && tr.step % opts.retain_stride == 0) tr.history.push_back({tr.t, ev.F2});
  };
  record();
  retain();
  if (cb) cb({tr.step, tr.t, tr.dt, tr.dissipated, ev.ym, ev.sup_F, &tr.H});

  std::deque<double> recent{ev.sup_F};
  const double T = opts.horizon;
  const double t_eps = 1e-12 * std::max(1.0, T);
  std::vector<double> ym_hist{ev.ym};
  while (tr.t < T - t_eps) {
    if (tr.step - opts.step_start >= opts.max_steps) {
      tr.status = FlowStatus::step_limit;
      break;
    }
    const double h = std::min(tr.dt, T - tr.t);
    EndField Hn;
    try {
      Hn = detail::metric_step(tr.H, detail::shifted(ev.Phi, lambda) * (-2.0), h, opts.stabilization, P0, g);
      require_metric(Hn);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::positivity) throw;
      tr.status = FlowStatus::positivity_lost;
      tr.message = e.what();
      break;
    }
    FlowEval evn = evaluate(Hn, op, geom);
    const double allowed = opts.energy_tol * h * h * ev.ym + 1e-13 * tr.ym0 + 1e-20;
    if (evn.ym > ev.ym + allowed) {
      if (tr.dt / 2 < opts.dt_min) {
        std::ostringstream os;
        os << "flow unstable: energy rose from " << ev.ym << " to " << evn.ym << " at dt " << tr.dt
           << " after halving to the floor";
        throw Error(ErrorKind::convergence, os.str(), ym_hist);
      }
      tr.dt /= 2;
      ++tr.halvings;
      continue;
    }
    const double Dn = dissipation(evn.Phi, Hn, op, geom);
    tr.dissipated += h * (D + Dn);
    tr.t += h;
    ++tr.step;
    tr.H = std::move(Hn);
    ev = std::move(evn);
    D = Dn;
    tr.ym_final = ev.ym;
    ym_hist.push_back(ev.ym);
    if (tr.step % std::max<std::size_t>(opts.sample_stride, 1) == 0 || tr.t >= T - t_eps) record();
    retain();
    if (cb) cb({tr.step, tr.t, tr.dt, tr.dissipated, ev.ym, ev.sup_F, &tr.H});
    if (opts.plateau_tol > 0.0) {
      recent.push_back(ev.sup_F);
      if (recent.size() > opts.plateau_window) {
        recent.pop_front();
        const double ref = std::max(recent.back(), 1e-300);
        if (std::abs(recent.front() - recent.back()) / ref < opts.plateau_tol) {
          tr.status = FlowStatus::plateau;
          break;
        }
      }
    }
  }
  if (tr.samples.back().step != tr.step) record();
  return tr;
}

struct PerturbedOptions {
  double tol = 1e-8;
  double dt = 0.05;
  double dt_max = 1.0;
  double dt_min = 1e-8;
  double stabilization = 1.0;
  std::size_t max_steps = 20000;
  /// Starting metric; K when null.
  const EndField* initial = nullptr;
};

struct PerturbedResult {
  EndField H;
  double residual = 0.0;
  std::size_t steps = 0;
  double t = 0.0;
  std::vector<double> history;
};

/// Residual i Lambda F_H - lambda Id + eps log(K^{-1} H).
inline EndField perturbed_residual(const EndField& H, const EndField& K, double eps, double lambda,
                                   const OperatorData& op, const Geometry& geom) {
  EndField R = detail::shifted(mean_curvature(chern_connection(H, op, geom.grid()).F, geom), lambda);
  const EndField L = endo_log(inverse(K) * H, K);
  for (std::size_t p = 0; p < R.points(); ++p) R.at(p) += eps * L.mat(p);
  return R;
}

/// Solves i Lambda F_H - lambda Id + eps log(K^{-1} H) = 0 by the damped flow
/// H^{-1} dH/dt = -2 (residual) with an adaptive step.
inline PerturbedResult perturbed_solve(const BundleSpec& s, const EndField& K, double eps, const Geometry& geom,
                                       const PerturbedOptions& opts = {}) {
  if (!(eps > 0.0 && eps <= 1.0)) {
    std::ostringstream os;
    os << "perturbation parameter must lie in (0, 1], got " << eps;
    throw Error(ErrorKind::precondition, os.str());
  }
  require(K.rank() == s.rank && K.points() == geom.points(), ErrorKind::mismatch, "metric does not match bundle");
  require_metric(K);
  if (auto u = detail::uniform_reduction(s, geom, {&K, opts.initial})) {
    PerturbedOptions o = opts;
    EndField init;
    if (opts.initial) {
      init = detail::first_point(*opts.initial);
      o.initial = &init;
    }
    PerturbedResult r = perturbed_solve(u->spec, detail::first_point(K), eps, *u->geom, o);
    r.H = detail::broadcast(r.H, geom.points());
    return r;
  }
  const double lambda = lambda_of(s, geom);
  const OperatorData op = operator_data(s);
  {
    const Field t = trace(mean_curvature(chern_connection(K, op, geom.grid()).F, geom));
    double d = 0.0;
    for (const cd& x : t) d = std::max(d, std::abs(x.real() - s.rank * lambda));
    if (d > 1e-6 * (1.0 + std::abs(s.rank * lambda))) {
      std::ostringstream os;
      os << "reference metric is not trace normalized: sup |tr(i Lambda F) - r lambda| = " << d;
      throw Error(ErrorKind::precondition, os.str());
    }
  }
  const Field P0 = laplace_symbol_mean(geom);
  PerturbedResult out;
  out.H = opts.initial ? *opts.initial : K;
  require_metric(out.H);
  EndField R = perturbed_residual(out.H, K, eps, lambda, op, geom);
  out.residual = endo_norm(R, out.H, NormKind::sup);
  out.history.push_back(out.residual);
  double dt = opts.dt;
  while (out.residual >= opts.tol) {
    if (out.steps >= opts.max_steps) {
      std::ostringstream os;
      os << "perturbed equation did not converge in " << opts.max_steps << " steps, residual " << out.residual;
      throw Error(ErrorKind::convergence, os.str(), out.history);
    }
    EndField Hn;
    bool ok = true;
    try {
      Hn = detail::metric_step(out.H, R * (-2.0), dt, opts.stabilization, P0, geom.grid());
      require_metric(Hn);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::positivity) throw;
      ok = false;
    }
    EndField Rn;
    double rn = 0.0;
    if (ok) {
      Rn = perturbed_residual(Hn, K, eps, lambda, op, geom);
      rn = endo_norm(Rn, Hn, NormKind::sup);
      ok = rn < out.residual;
    }
    if (!ok) {
      dt /= 2;
      if (dt < opts.dt_min) {
        std::ostringstream os;
        os << "perturbed solve stalled at residual " << out.residual << " with step below " << opts.dt_min;
        throw Error(ErrorKind::convergence, os.str(), out.history);
      }
      continue;
    }
    out.H = std::move(Hn);
    R = std::move(Rn);
    out.residual = rn;
    out.t += dt;
    ++out.steps;
    out.history.push_back(rn);
    if (rn < 0.8 * out.history[out.history.size() - 2]) dt = std::min(dt * 1.25, opts.dt_max);
  }
  return out;
}

/// sigma with sigma^dagger H_0 sigma = H, the H_0-self-adjoint square root of H_0^{-1} H.
inline EndField sigma_of(const EndField& H0, const EndField& H) { return endo_sqrt(inverse(H0) * H, H0); }

/// sup_x | |F(A, H_0)|^2_{H_0} - |F(dbar_E, H)|^2_H |.
inline double gauge_relation_residual(const BundleSpec& s, const std::vector<EndField>& A, const EndField& H0,
                                      const EndField& H, const Geometry& geom) {
  const auto a = curvature_norm2(chern_connection(H0, operator_data(s, A), geom.grid()).F, H0, geom);
  const auto b = curvature_norm2(curvature(H, s, geom), H, geom);
  double m = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) m = std::max(m, std::abs(a[p] - b[p]));
  return m;
}

struct GaugeFlowResult {
  FlowTrace trace;                 ///< samples of the connection flow measured with H_0
  std::vector<EndField> A;         ///< final (0,1) operator
  EndField sigma;                  ///< accumulated complex gauge transformation
  EndField H_sigma;                ///< sigma^dagger H_0 sigma
  EndField H;                      ///< co-evolved metric flow, empty when not co-evolved
  std::vector<double> relation;    ///< gauge relation residual at each sample
  double max_relation = 0.0;
};

/// Connection form of the flow: dA/dt = i(dbar_A - del_A) Lambda F_A at fixed H_0, realized
/// by H_0-self-adjoint complex gauge steps g ~ exp(-dt (Phi_A - lambda)). The stabilization acts
/// in the frame of sigma^dagger H_0 sigma, so g is the metric step pulled back by sigma and
/// equals exp(-dt (Phi_A - lambda)) without stabilization. With coevolve the metric flow runs
/// alongside and the gauge relation is recorded.
inline GaugeFlowResult gauge_flow(const BundleSpec& s, const EndField& H0, const Geometry& geom, double lambda,
                                  const FlowOptions& opts = {}, bool coevolve = true) {
  require(opts.dt > 0.0, ErrorKind::precondition, "flow needs dt > 0");
  require_metric(H0);
  if (auto u = detail::uniform_reduction(s, geom, {&H0})) {
    const std::size_t P = geom.points();
    GaugeFlowResult r = gauge_flow(u->spec, detail::first_point(H0), *u->geom, lambda, opts, coevolve);
    for (auto& a : r.A) a = detail::broadcast(a, P);
    r.sigma = detail::broadcast(r.sigma, P);
    r.H_sigma = detail::broadcast(r.H_sigma, P);
    if (!r.H.empty()) r.H = detail::broadcast(r.H, P);
    r.trace.H = detail::broadcast(r.trace.H, P);
    return r;
  }
  const Grid& g = geom.grid();
  const int n = geom.complex_dim();
  const Field P0 = laplace_symbol_mean(geom);
  const OperatorData op0 = operator_data(s);
  const EndField H0inv = inverse(H0);

  GaugeFlowResult out;
  out.A = op0.A;
  out.sigma = EndField::identity(s.rank, geom.points());
  if (coevolve) out.H = H0;
  FlowTrace& tr = out.trace;
  tr.H = H0;
  tr.dt = opts.dt;
  tr.t = opts.t_start;
  tr.step = opts.step_start;

  OperatorData op = op0;
  FlowEval ev = evaluate(H0, op, geom);
  FlowEval evh = coevolve ? ev : FlowEval{};
  tr.ym0 = ev.ym;
  tr.ym_final = ev.ym;
  double D = dissipation(ev.Phi, H0, op, geom);

  auto relation = [&] {
    if (!coevolve) return 0.0;
    double m = 0.0;
    for (std::size_t p = 0; p < ev.F2.size(); ++p) m = std::max(m, std::abs(ev.F2[p] - evh.F2[p]));
    return m;
  };
  auto record = [&] {
    FlowSample smp;
    smp.step = tr.step;
    smp.t = tr.t;
    smp.ym = ev.ym;
    smp.sup_F = ev.sup_F;
    smp.he_residual = he_residual(ev.Phi, H0, lambda);
    smp.min_eig_H = detail::eigen_floor(out.H.empty() ? H0 : out.H);
    smp.dt = tr.dt;
    smp.dissipation = D;
    tr.samples.push_back(smp);
    out.relation.push_back(relation());
    out.max_relation = std::max(out.max_relation, out.relation.back());
  };
  record();

  const double T = opts.horizon;
  const double t_eps = 1e-12 * std::max(1.0, T);
  while (tr.t < T - t_eps) {
    if (tr.step - opts.step_start >= opts.max_steps) {
      tr.status = FlowStatus::step_limit;
      break;
    }
    const double h = std::min(tr.dt, T - tr.t);
    // gauge step: the metric step of H_sigma = sigma^dagger H_0 sigma, pulled back by sigma
    EndField gs;
    try {
      const EndField si = inverse(out.sigma);
      const EndField Hs = adjoint(out.sigma) * H0 * out.sigma;
      const EndField S = detail::shifted(si * ev.Phi * out.sigma, lambda) * (-2.0);
      const EndField Hn = detail::metric_step(Hs, S, h, opts.stabilization, P0, g);
      gs = endo_sqrt(H0inv * adjoint(si) * Hn * si, H0);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::positivity) throw;
      tr.status = FlowStatus::positivity_lost;
      tr.message = e.what();
      break;
    }
    const EndField gi = inverse(gs);
    const EndSpectrum gsp(gs, g);
    for (int k = 0; k < n; ++k) {
      const EndField dg = gsp.derivative(k, true);
      for (std::size_t p = 0; p < geom.points(); ++p) {
        const Mat gm = gs.mat(p), gim = gi.mat(p);
        out.A[k].at(p) = gm * out.A[k].mat(p) * gim - dg.mat(p) * gim;
      }
    }
    out.sigma = gs * out.sigma;
    op = operator_data(s, out.A);
    ev = evaluate(H0, op, geom);
    if (coevolve) {
      EndField Hn;
      try {
        Hn = detail::metric_step(out.H, detail::shifted(evh.Phi, lambda) * (-2.0), h, opts.stabilization, P0, g);
        require_metric(Hn);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::positivity) throw;
        tr.status = FlowStatus::positivity_lost;
        tr.message = e.what();
        break;
      }
      out.H = std::move(Hn);
      evh = evaluate(out.H, op0, geom);
    }
    const double Dn = dissipation(ev.Phi, H0, op, geom);
    tr.dissipated += h * (D + Dn);
    D = Dn;
    tr.t += h;
    ++tr.step;
    tr.ym_final = ev.ym;
    if (tr.step % std::max<std::size_t>(opts.sample_stride, 1) == 0 || tr.t >= T - t_eps) record();
  }
  if (tr.samples.back().step != tr.step) record();
  out.H_sigma = adjoint(out.sigma) * H0 * out.sigma;
  return out;
}

/// Scaled parabolic energy R^{2-2n} int_{t0-R^2}^{t0+R^2} int_{B_R(x0)} |F|^2, with balls of the
/// flat coordinate metric and retained snapshots interpolated linearly in time.
inline double local_energy(const FlowTrace& tr, const Geometry& geom, const std::vector<double>& x0, double t0,
                           double R) {
  const Grid& g = geom.grid();
  const int d = g.real_dim();
  require(static_cast<int>(x0.size()) == d, ErrorKind::precondition, "center needs one coordinate per real direction");
  double side_min = std::numeric_limits<double>::infinity();
  for (int k = 0; k < d; ++k) side_min = std::min(side_min, g.side(k));
  if (!(R > 0.0 && R <= side_min / 4)) {
    std::ostringstream os;
    os << "radius " << R << " must lie in (0, " << side_min / 4 << "]";
    throw Error(ErrorKind::precondition, os.str());
  }
  const double a = t0 - R * R, b = t0 + R * R;
  const auto& hs = tr.history;
  const double tol = 1e-12 * std::max(1.0, std::abs(b));
  if (hs.size() < 2 || hs.front().t > a + tol || hs.back().t < b - tol) {
    std::ostringstream os;
    os << "retained history does not cover [" << a << ", " << b << "]";
    throw Error(ErrorKind::precondition, os.str());
  }
  std::vector<char> inside(g.points());
  for (std::size_t p = 0; p < g.points(); ++p) {
    double r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      double dx = std::fmod(g.x(p, k) - x0[k], g.side(k));
      if (dx > g.side(k) / 2) dx -= g.side(k);
      if (dx < -g.side(k) / 2) dx += g.side(k);
      r2 += dx * dx;
    }
    inside[p] = r2 <= R * R;
  }
  auto ball = [&](const std::vector<double>& F2) {
    Field f(F2.size());
    for (std::size_t p = 0; p < F2.size(); ++p) f[p] = inside[p] ? F2[p] : 0.0;
    return geom.integrate_real(f);
  };
  std::vector<double> ts, es;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const double e = ball(hs[i].F2);
    if (i + 1 < hs.size() && hs[i].t < a && hs[i + 1].t > a) {
      const double e1 = ball(hs[i + 1].F2);
      ts.push_back(a);
      es.push_back(e + (e1 - e) * (a - hs[i].t) / (hs[i + 1].t - hs[i].t));
    }
    if (hs[i].t >= a - tol && hs[i].t <= b + tol) {
      ts.push_back(std::clamp(hs[i].t, a, b));
      es.push_back(e);
    }
    if (i + 1 < hs.size() && hs[i].t < b && hs[i + 1].t > b) {
      const double e1 = ball(hs[i + 1].F2);
      ts.push_back(b);
      es.push_back(e + (e1 - e) * (b - hs[i].t) / (hs[i + 1].t - hs[i].t));
    }
  }
  double integral = 0.0;
  for (std::size_t i = 1; i < ts.size(); ++i) integral += 0.5 * (ts[i] - ts[i - 1]) * (es[i] + es[i - 1]);
  return std::pow(R, 2 - 2 * geom.complex_dim()) * integral;
}

struct BochnerReport {
  std::vector<double> lhs;      ///< (Delta - d/dt)|F|^2
  std::vector<double> grad2;    ///< |nabla_A F|^2
  std::vector<double> normF;    ///< |F|
  std::vector<double> dt_F2;    ///< d/dt |F|^2
  double worst_margin = 0.0;    ///< min over points of lhs - 2|nabla F|^2
  double empirical_constant = 0.0;
  double sup_time_derivative = 0.0;
};

/// Terms of the Bochner inequality from two consecutive metrics along the flow.
///
/// Delta_g = -2P on functions. The covariant derivative uses the Chern connection on End E
/// and coordinate derivatives on form indices. empirical_constant is the smallest C with
/// lhs >= 2|nabla F|^2 - C((1 + |F|)|F|^2 + |F||nabla F|) at every point.
inline BochnerReport bochner_monitor(const BundleSpec& s, const Geometry& geom, const EndField& H_prev, double t_prev,
                                     const EndField& H, double t) {
  require(t > t_prev, ErrorKind::precondition, "Bochner monitor needs two states at increasing times");
  const Grid& g = geom.grid();
  const int n = geom.complex_dim();
  const std::size_t P = geom.points();
  const OperatorData op = operator_data(s);
  const FlowEval prev = evaluate(H_prev, op, geom);
  const FlowEval cur = evaluate(H, op, geom);

  BochnerReport rep;
  Field f(P);
  for (std::size_t p = 0; p < P; ++p) f[p] = cur.F2[p];
  const Field lap = laplace_operator(geom)(f);
  rep.lhs.resize(P);
  rep.dt_F2.resize(P);
  rep.normF.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    rep.dt_F2[p] = (cur.F2[p] - prev.F2[p]) / (t - t_prev);
    rep.lhs[p] = -2.0 * lap[p].real() - rep.dt_F2[p];
    rep.normF[p] = std::sqrt(cur.F2[p]);
    rep.sup_time_derivative = std::max(rep.sup_time_derivative, std::abs(rep.dt_F2[p]));
  }

  // D_l F and D_lbar F for every direction l.
  const auto& F = cur.conn.F;
  std::vector<std::vector<EndField>> DF(n), DbF(n);
  for (int l = 0; l < n; ++l) {
    DF[l].resize(n * n);
    DbF[l].resize(n * n);
  }
  for (int q = 0; q < n * n; ++q) {
    const EndSpectrum sp(F.F[q], g);
    for (int l = 0; l < n; ++l) {
      DF[l][q] = sp.derivative(l, false);
      DbF[l][q] = sp.derivative(l, true);
      for (std::size_t p = 0; p < P; ++p) {
        const Mat x = F.F[q].mat(p);
        const Mat psi = cur.conn.psi[l].mat(p), A = op.A[l].mat(p);
        DF[l][q].at(p) += psi * x - x * psi;
        DbF[l][q].at(p) += A * x - x * A;
      }
    }
  }
  rep.grad2.assign(P, 0.0);
  const EndField& W = geom.weights();
  for (std::size_t p = 0; p < P; ++p) {
    const Mat h = H.mat(p), hi = mat_inv(h);
    auto inner = [&](const std::vector<EndField>& X, const std::vector<EndField>& Y) {
      cd s2 = 0.0;
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          for (int l = 0; l < n; ++l)
            for (int m = 0; m < n; ++m)
              s2 += W.at(p)(j, l) * W.at(p)(m, k) * (X[j * n + k].mat(p) * hi * Y[l * n + m].mat(p).adjoint() * h).trace();
      return s2;
    };
    cd s2 = 0.0;
    for (int l = 0; l < n; ++l)
      for (int m = 0; m < n; ++m) s2 += W.at(p)(l, m) * (inner(DF[l], DF[m]) + inner(DbF[m], DbF[l]));
    rep.grad2[p] = std::max(0.0, s2.real());
  }
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < P; ++p) {
    const double margin = rep.lhs[p] - 2.0 * rep.grad2[p];
    rep.worst_margin = std::min(rep.worst_margin, margin);
    const double nf = rep.normF[p];
    const double denom = (1.0 + nf) * nf * nf + nf * std::sqrt(rep.grad2[p]);
    if (margin < 0.0 && denom > 0.0) rep.empirical_constant = std::max(rep.empirical_constant, -margin / denom);
  }
  return rep;
}

struct PipelineOptions {
  std::vector<double> schedule{1.0, 0.5, 0.25, 0.125, 0.0625};
  FlowOptions flow{.dt = 1e-2, .horizon = 10.0, .plateau_tol = 1e-4};
  PerturbedOptions perturbed{};
  /// Final sup|F| must fall below this fraction of the identity-metric value.
  double target_ratio = 0.1;
  bool strict = false;
  /// Keep the flow traces of every stage.
  bool keep_traces = true;
};

struct PipelineStage {
  double eps = 0.0;
  bool ok = false;
  std::string error_kind;
  std::string error;
  double perturbed_residual = 0.0;
  double he_residual = 0.0;   ///< he_residual(H_eps), NaN when the perturbed solve failed
  double sup_F_start = 0.0;   ///< sup|F| at H_eps
  double sup_F_after = 0.0;   ///< sup|F| at the end of the flow stage
  double ym_start = 0.0;
  double ym_after = 0.0;
  double min_he_residual_flow = 0.0;  ///< smallest he_residual sampled along the flow
  /// The perturbed solve failed and the flow started from the previous stage's metric (or K).
  bool fallback_start = false;
  FlowStatus flow_status = FlowStatus::completed;
  FlowTrace trace;
};

struct PipelineReport {
  ChernReport chern;
  bool hypothesis_violated = false;
  double lambda = 0.0;
  double initial_sup_F = 0.0;   ///< sup|F| of the identity metric
  std::vector<PipelineStage> stages;
  bool sup_F_monotone = false;
  bool he_residual_monotone = false;
  bool final_below_target = false;
  double final_sup_F = 0.0;
  std::vector<std::string> errors;
};

/// For each eps: K trace normalized, H_eps from the perturbed equation, then the flow from H_eps.
/// Failures are recorded per stage and the remaining stages still run. When the perturbed
/// solve fails the stage still flows, from the last good metric.
inline PipelineReport approx_flat_pipeline(const BundleSpec& s, const Geometry& geom, const PipelineOptions& opts = {}) {
  PipelineReport rep;
  const EndField Id = identity_metric(s);
  rep.chern = chern_report(s, Id, geom, opts.strict);
  rep.hypothesis_violated = !(rep.chern.ch1_vanishes && rep.chern.ch2_vanishes);
  rep.lambda = rep.chern.lambda;
  rep.initial_sup_F = sup_curvature(curvature(Id, s, geom), Id, geom);
  const EndField K = trace_normalize(Id, rep.lambda, s, geom);

  const EndField* warm = nullptr;
  EndField last;
  for (double eps : opts.schedule) {
    PipelineStage st;
    st.eps = eps;
    EndField start;
    try {
      PerturbedOptions po = opts.perturbed;
      po.initial = warm;
      const PerturbedResult pr = perturbed_solve(s, K, eps, geom, po);
      last = pr.H;
      warm = &last;
      st.perturbed_residual = pr.residual;
      const Curvature F = curvature(pr.H, s, geom);
      st.he_residual = he_residual(mean_curvature(F, geom), pr.H, rep.lambda);
      st.ok = true;
      start = pr.H;
    } catch (const Error& e) {
      st.error_kind = to_string(e.kind());
      st.error = e.what();
      st.fallback_start = true;
      st.perturbed_residual = std::numeric_limits<double>::quiet_NaN();
      st.he_residual = std::numeric_limits<double>::quiet_NaN();
      start = warm ? *warm : K;
    }
    try {
      FlowTrace tr = hym_flow(s, start, geom, rep.lambda, opts.flow);
      for (auto& smp : tr.samples) smp.eps = eps;
      st.sup_F_start = tr.samples.front().sup_F;
      st.ym_start = tr.samples.front().ym;
      st.sup_F_after = tr.samples.back().sup_F;
      st.ym_after = tr.samples.back().ym;
      st.min_he_residual_flow = std::numeric_limits<double>::infinity();
      for (const auto& smp : tr.samples) st.min_he_residual_flow = std::min(st.min_he_residual_flow, smp.he_residual);
      st.flow_status = tr.status;
      if (tr.status == FlowStatus::positivity_lost && st.ok) {
        st.ok = false;
        st.error_kind = to_string(ErrorKind::positivity);
        st.error = tr.message;
      }
      if (opts.keep_traces) st.trace = std::move(tr);
    } catch (const Error& e) {
      if (st.ok) {
        st.error_kind = to_string(e.kind());
        st.error = e.what();
      }
      st.ok = false;
    }
    if (!st.ok) {
      std::ostringstream os;
      os << "eps " << eps << ": " << st.error;
      rep.errors.push_back(os.str());
    }
    rep.stages.push_back(std::move(st));
  }

  bool all_ok = !rep.stages.empty();
  for (const auto& st : rep.stages) all_ok = all_ok && st.ok;
  rep.sup_F_monotone = all_ok;
  rep.he_residual_monotone = all_ok;
  for (std::size_t i = 1; all_ok && i < rep.stages.size(); ++i) {
    const auto& a = rep.stages[i - 1];
    const auto& b = rep.stages[i];
    if (b.sup_F_after > a.sup_F_after * (1.0 + 1e-9) + 1e-14) rep.sup_F_monotone = false;
    if (b.he_residual > a.he_residual * (1.0 + 1e-9) + 1e-14) rep.he_residual_monotone = false;
  }
  if (all_ok) {
    rep.final_sup_F = rep.stages.back().sup_F_after;
    rep.final_below_target = rep.final_sup_F <= opts.target_ratio * rep.initial_sup_F;
  }
  return rep;
}

}  // namespace hymlab
