#pragma once

#include "hymlab/hermitian.hpp"

#include <Eigen/Eigenvalues>

namespace hymlab {

/// X = (i/2pi) F as an endomorphism-valued form.
inline Form<EndField> chern_weil_form(const Curvature& F) { return F.form().scaled(kI / (2.0 * kPi)); }

/// Power traces p_k = tr(X^k) for k = 1..kmax.
inline std::vector<Form<Field>> power_traces(const Form<EndField>& X, int kmax) {
  std::vector<Form<Field>> p;
  Form<EndField> Xk = X;
  for (int k = 1; k <= kmax; ++k) {
    if (k > 1) Xk = wedge(Xk, X);
    p.push_back(trace(Xk));
  }
  return p;
}

/// Chern forms c_0..c_m, m = min(r, n), from det(Id + t X) via Newton's identities.
inline std::vector<Form<Field>> chern_forms(const Curvature& F, int r) {
  const int n = F.n;
  const int m = std::min(r, n);
  const std::size_t P = F.points();
  const auto p = power_traces(chern_weil_form(F), m);
  std::vector<Form<Field>> c{zero_form(n, Field(P, 1.0))};
  for (int k = 1; k <= m; ++k) {
    Form<Field> ck(n);
    for (int i = 1; i <= k; ++i) {
      const double s = (i % 2 == 1) ? 1.0 : -1.0;
      ck += wedge(c[k - i], p[i - 1]).scaled(s / k);
    }
    c.push_back(std::move(ck));
  }
  return c;
}

/// Segre forms s_0..s_kmax from s_k + c_1 s_{k-1} + ... + c_k = 0.
inline std::vector<Form<Field>> segre_forms(const std::vector<Form<Field>>& c, int kmax) {
  const int n = c.front().dim();
  const std::size_t P = c.front().begin()->second.size();
  std::vector<Form<Field>> s{zero_form(n, Field(P, 1.0))};
  for (int k = 1; k <= kmax; ++k) {
    Form<Field> sk(n);
    for (int i = 1; i <= k && i < static_cast<int>(c.size()); ++i) sk -= wedge(c[i], s[k - i]);
    s.push_back(std::move(sk));
  }
  return s;
}

/// Chern character forms ch_k = tr(X^k)/k!.
inline std::vector<Form<Field>> chern_character_forms(const Curvature& F, int kmax) {
  auto p = power_traces(chern_weil_form(F), kmax);
  double fact = 1.0;
  for (int k = 1; k <= kmax; ++k) {
    fact *= k;
    p[k - 1] = p[k - 1].scaled(1.0 / fact);
  }
  return p;
}

/// Integral of a (k,k) form against omega^{n-k}/(n-k)!.
inline double pair_with_omega(const Form<Field>& a, int k, const Geometry& geom) {
  const int n = geom.complex_dim();
  double fact = 1.0;
  for (int i = 2; i <= n - k; ++i) fact *= i;
  const Form<Field> top = wedge(a.part(k, k), omega_power(geom, n - k)).scaled(1.0 / fact);
  return geom.integrate_top(top).real();
}

struct ChernNumbers {
  double ch1 = 0.0;   ///< ch_1 . [omega^{n-1}/(n-1)!]
  double ch2 = 0.0;   ///< ch_2 . [omega^{n-2}/(n-2)!]
  double c1sq = 0.0;  ///< c_1^2 . [omega^{n-2}/(n-2)!]
  double c2 = 0.0;    ///< c_2 . [omega^{n-2}/(n-2)!]

  double max_abs_diff(const ChernNumbers& o) const {
    return std::max({std::abs(ch1 - o.ch1), std::abs(ch2 - o.ch2), std::abs(c1sq - o.c1sq), std::abs(c2 - o.c2)});
  }
};

inline ChernNumbers chern_numbers(const Curvature& F, int r, const Geometry& geom) {
  const auto c = chern_forms(F, r);
  const auto ch = chern_character_forms(F, 2);
  ChernNumbers out;
  out.ch1 = pair_with_omega(ch[0], 1, geom);
  out.ch2 = pair_with_omega(ch[1], 2, geom);
  out.c1sq = pair_with_omega(wedge(c[1], c[1]), 2, geom);
  out.c2 = c.size() > 2 ? pair_with_omega(c[2], 2, geom) : 0.0;
  return out;
}

/// Bound on the Gauduchon residual under which degrees are treated as well defined.
inline constexpr double kGauduchonTolerance = 1e-8;

/// Checks the Gauduchon condition needed for a well-defined degree. Throws in strict mode,
/// otherwise appends a warning.
inline void check_degree_well_defined(const Geometry& geom, bool strict, std::vector<std::string>* warnings) {
  const double rho = gauduchon_residual(geom).rho1;
  if (rho <= kGauduchonTolerance) return;
  std::ostringstream os;
  os << "Gauduchon residual " << rho << " exceeds " << kGauduchonTolerance << "; degree is metric dependent";
  if (strict) throw Error(ErrorKind::precondition, os.str());
  if (warnings) warnings->push_back(os.str());
}

/// deg = (1/2pi) integral of tr(i Lambda F).
inline double degree(const BundleSpec& s, const EndField& H, const Geometry& geom, bool strict = false,
                     std::vector<std::string>* warnings = nullptr) {
  check_degree_well_defined(geom, strict, warnings);
  return geom.integrate_real(trace(mean_curvature(H, s, geom))) / (2.0 * kPi);
}

inline double slope(const BundleSpec& s, const EndField& H, const Geometry& geom, bool strict = false) {
  return degree(s, H, geom, strict) / s.rank;
}

/// Einstein constant lambda = 2 pi mu / Vol.
inline double lambda_of(const BundleSpec& s, const Geometry& geom, bool strict = false) {
  return 2.0 * kPi * slope(s, identity_metric(s), geom, strict) / geom.volume();
}

/// Integral of c_1 against the normalized dual of each coordinate torus; equals the flux.
inline std::vector<double> flux_pairings(const Curvature& F, const Geometry& geom) {
  const int n = geom.complex_dim();
  const Grid& g = geom.grid();
  const Form<Field> c1 = trace(chern_weil_form(F));
  std::vector<double> out;
  for (int a = 0; a < n; ++a) {
    Form<Field> eta = zero_form(n, Field(g.points(), 1.0));
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      Form<Field> t(n);
      t.set(1u << b, 1u << b, Field(g.points(), 0.5 * kI / g.area(b)));
      eta = wedge(eta, t);
    }
    out.push_back(geom.integrate_top(wedge(c1, eta)).real());
  }
  return out;
}

struct ChernReport {
  std::vector<Form<Field>> c;  ///< c_0..c_min(r,n)
  std::vector<Form<Field>> s;  ///< s_0..s_n
  ChernNumbers numbers;
  double deg = 0.0;
  double slope = 0.0;
  double lambda = 0.0;
  double volume = 0.0;
  double gauduchon_residual = 0.0;
  double bogomolov = 0.0;
  bool ch1_vanishes = false;
  bool ch2_vanishes = false;
  std::vector<std::string> warnings;
};

/// Tolerance for declaring a Chern number zero.
inline constexpr double kChernZeroTolerance = 1e-6;

inline ChernReport chern_report(const BundleSpec& s, const EndField& H, const Geometry& geom, bool strict = false) {
  ChernReport rep;
  rep.gauduchon_residual = gauduchon_residual(geom).rho1;
  check_degree_well_defined(geom, strict, &rep.warnings);
  const Curvature F = curvature(H, s, geom);
  rep.numbers = chern_numbers(F, s.rank, geom);
  rep.c = chern_forms(F, s.rank);
  rep.s = segre_forms(rep.c, geom.complex_dim());
  rep.volume = geom.volume();
  rep.deg = rep.numbers.ch1;
  rep.slope = rep.deg / s.rank;
  rep.lambda = 2.0 * kPi * rep.slope / rep.volume;
  const int r = s.rank;
  rep.bogomolov = 4.0 * kPi * kPi * (2.0 * rep.numbers.c2 - (r - 1.0) / r * rep.numbers.c1sq);
  rep.ch1_vanishes = std::abs(rep.numbers.ch1) < kChernZeroTolerance;
  rep.ch2_vanishes = std::abs(rep.numbers.ch2) < kChernZeroTolerance;
  return rep;
}

/// Largest change of the four Chern numbers between two metrics.
inline double transgression_check(const BundleSpec& s, const EndField& H1, const EndField& H2, const Geometry& geom) {
  const auto a = chern_numbers(curvature(H1, s, geom), s.rank, geom);
  const auto b = chern_numbers(curvature(H2, s, geom), s.rank, geom);
  return a.max_abs_diff(b);
}

struct BogomolovResult {
  double quantity = 0.0;          ///< 4 pi^2 (2 c_2 - (r-1)/r c_1^2) . [omega^{n-2}/(n-2)!]
  double normalized = 0.0;        ///< quantity / (4 pi^2)
  double tracefree_energy = 0.0;  ///< integral of |F^perp|^2
  double tracefree_mean = 0.0;    ///< integral of |i Lambda F^perp|^2
};

inline BogomolovResult bogomolov_quantity(const BundleSpec& s, const EndField& H, const Geometry& geom) {
  const Curvature F = curvature(H, s, geom);
  const auto nums = chern_numbers(F, s.rank, geom);
  const int r = s.rank;
  BogomolovResult out;
  out.normalized = 2.0 * nums.c2 - (r - 1.0) / r * nums.c1sq;
  out.quantity = 4.0 * kPi * kPi * out.normalized;
  Curvature Fp = F;
  for (auto& comp : Fp.F)
    for (std::size_t p = 0; p < comp.points(); ++p) {
      const cd t = comp.at(p).trace() / double(r);
      for (int i = 0; i < r; ++i) comp.at(p)(i, i) -= t;
    }
  out.tracefree_energy = ym_energy(Fp, H, geom);
  const auto m2 = endo_norm2_field(mean_curvature(Fp, geom), H);
  out.tracefree_mean = geom.integrate_real(Field(m2.begin(), m2.end()));
  return out;
}

struct EnergyIdentity {
  double lhs = 0.0;             ///< integral of |F|^2
  double mean_term = 0.0;       ///< integral of |i Lambda F - lambda Id|^2
  double ch2_term = 0.0;        ///< -8 pi^2 ch_2 . [omega^{n-2}/(n-2)!]
  double lambda_term = 0.0;     ///< lambda^2 r Vol
  double mean_energy = 0.0;     ///< integral of |i Lambda F|^2
  double residual = 0.0;        ///< |lhs - (mean_term + ch2_term + lambda_term)|
  double relative_residual = 0.0;
};

inline EnergyIdentity energy_identity(const BundleSpec& s, const EndField& H, const Geometry& geom, double lambda) {
  const Curvature F = curvature(H, s, geom);
  EnergyIdentity e;
  e.lhs = ym_energy(F, H, geom);
  const EndField Phi = mean_curvature(F, geom);
  EndField X = Phi;
  for (std::size_t p = 0; p < X.points(); ++p)
    for (int i = 0; i < X.rank(); ++i) X.at(p)(i, i) -= lambda;
  const auto n2 = endo_norm2_field(X, H);
  e.mean_term = geom.integrate_real(Field(n2.begin(), n2.end()));
  const auto m2 = endo_norm2_field(Phi, H);
  e.mean_energy = geom.integrate_real(Field(m2.begin(), m2.end()));
  e.ch2_term = -8.0 * kPi * kPi * chern_numbers(F, s.rank, geom).ch2;
  e.lambda_term = lambda * lambda * s.rank * geom.volume();
  e.residual = std::abs(e.lhs - (e.mean_term + e.ch2_term + e.lambda_term));
  e.relative_residual = e.residual / std::max(1.0, std::abs(e.lhs));
  return e;
}

inline EnergyIdentity energy_identity(const BundleSpec& s, const EndField& H, const Geometry& geom) {
  return energy_identity(s, H, geom, lambda_of(s, geom));
}

struct HarmonicLine {
  EndField h;
  double flatness_defect = 0.0;  ///< integral of |Theta|^2
  double c1sq_term = 0.0;        ///< -4 pi^2 c_1^2 . [omega^{n-2}/(n-2)!]
  double mean_residual = 0.0;    ///< sup |i Lambda Theta|
};

/// Metric with i Lambda Theta = 0 on a degree-zero line, and its flatness defect.
inline HarmonicLine harmonic_line_metric(const BundleSpec& line, const Geometry& geom, const EndField* h0 = nullptr,
                                         const SolverOptions& opts = {}) {
  require(line.rank == 1, ErrorKind::precondition, "harmonic_line_metric expects a line bundle");
  const EndField start = h0 ? *h0 : identity_metric(line);
  const EndField Phi = mean_curvature(start, line, geom);
  const double deg = geom.integrate_real(trace(Phi)) / (2.0 * kPi);
  if (std::abs(deg) > 1e-8) {
    std::ostringstream os;
    os << "harmonic line metric needs degree 0, got " << deg;
    throw Error(ErrorKind::precondition, os.str());
  }
  HarmonicLine out;
  out.h = trace_normalize(start, 0.0, line, geom, opts);
  const Curvature F = curvature(out.h, line, geom);
  out.flatness_defect = ym_energy(F, out.h, geom);
  out.c1sq_term = -4.0 * kPi * kPi * chern_numbers(F, 1, geom).c1sq;
  out.mean_residual = sup_abs(mean_curvature(F, geom));
  return out;
}

/// min over the grid of the smallest eigenvalue of (Theta + eps G) relative to G.
inline double nef_residual(const BundleSpec& line, const EndField& h, double eps, const Geometry& geom) {
  require(line.rank == 1, ErrorKind::precondition, "nef_residual expects a line bundle");
  const Curvature F = curvature(h, line, geom);
  const int n = geom.complex_dim();
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < geom.points(); ++p) {
    Eigen::MatrixXcd T(n, n), G(n, n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        T(j, k) = F.at(j, k).at(p)(0, 0);
        G(j, k) = geom.metric().at(p)(j, k);
      }
    T = 0.5 * (T + T.adjoint().eval());
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXcd> es(T + eps * G, G, Eigen::EigenvaluesOnly);
    m = std::min(m, es.eigenvalues()(0));
  }
  return m;
}

}  // namespace hymlab
