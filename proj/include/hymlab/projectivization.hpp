#pragma once

#include "hymlab/chern_weil.hpp"

#include <array>
#include <optional>

namespace hymlab {

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline void gauss_legendre(int m, std::vector<double>& x, std::vector<double>& w) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int i = 1; i < m; ++i) J(i, i - 1) = J(i - 1, i) = i / std::sqrt(4.0 * i * i - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  x.resize(m);
  w.resize(m);
  for (int i = 0; i < m; ++i) {
    x[i] = es.eigenvalues()(i);
    w[i] = 2.0 * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
}

/// P(E) of lines in E over a surface, for rank 2, with O_E(1) dual to the tautological line.
///
/// A fiber point is a line spanned by v = s(1, zeta) (chart 0) or v = s(zeta, 1) (chart 1),
/// |zeta| <= 1, s a local holomorphic frame agreeing with the bundle frame to second order
/// at the base point. Xi = (i/2pi) ddbar log |v|^2_H is then exact from H, A and their
/// derivatives at that point. Each chart disk uses Gauss-Legendre radial nodes and
/// uniform angles.
struct FiberedGrid {
  Geometry base;
  BundleSpec spec;
  EndField H;
  int fiber_res = 0;
  std::vector<double> rho, rho_w;
  int angles = 0;
  /// Metric and its derivatives d_j, d_j dbar_k in the holomorphic frame at each base point.
  std::vector<Eigen::Matrix2cd> h;
  std::vector<std::array<Eigen::Matrix2cd, 2>> hd;
  std::vector<std::array<Eigen::Matrix2cd, 4>> hddb;
  /// Optional base function phi with h on O_E(1) multiplied by e^phi: d_j dbar_k phi.
  std::vector<std::array<cd, 4>> shift;
  /// Every base point carries the same data.
  bool uniform = false;
  /// pi_*(Xi^m), m = 1, 2, 3, filled on first use.
  mutable std::optional<std::array<Form<Field>, 3>> cache;

  int fiber_nodes() const { return 2 * angles * static_cast<int>(rho.size()); }
};

/// Fiber resolution m: m angles and m/2 radial nodes per chart.
inline FiberedGrid build_fibered_grid(const BundleSpec& s, const EndField& H, const Geometry& geom, int fiber_res = 64) {
  if (s.rank != 2) {
    std::ostringstream os;
    os << "projectivization needs a rank 2 bundle, got rank " << s.rank;
    throw Error(ErrorKind::precondition, os.str());
  }
  require(geom.complex_dim() == 2, ErrorKind::precondition, "projectivization needs a surface");
  require(fiber_res >= 8 && fiber_res % 2 == 0, ErrorKind::precondition, "fiber resolution must be even and at least 8");
  require(H.rank() == 2 && H.points() == geom.points(), ErrorKind::mismatch, "metric does not match bundle");
  require_metric(H);
  const Grid& g = geom.grid();
  const int n = 2;
  const std::size_t P = geom.points();
  FiberedGrid fg{geom, s, H, fiber_res, {}, {}, fiber_res, {}, {}, {}, {}, false, {}};
  std::vector<double> x, w;
  gauss_legendre(fiber_res / 2, x, w);
  for (std::size_t i = 0; i < x.size(); ++i) {
    fg.rho.push_back(0.5 * (x[i] + 1.0));
    fg.rho_w.push_back(0.5 * w[i]);
  }

  const OperatorData op = operator_data(s);
  const EndSpectrum Hs(H, g);
  std::vector<EndField> dH(n), dbH(n);
  for (int j = 0; j < n; ++j) {
    dH[j] = Hs.derivative(j, false);
    dbH[j] = Hs.derivative(j, true);
  }
  std::vector<EndField> ddbH(n * n);
  for (int k = 0; k < n; ++k) {
    const EndSpectrum sp(dbH[k], g);
    for (int j = 0; j < n; ++j) ddbH[j * n + k] = sp.derivative(j, false);
  }
  fg.h.resize(P);
  fg.hd.resize(P);
  fg.hddb.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    const Mat h = H.mat(p);
    fg.h[p] = h;
    for (int j = 0; j < n; ++j) fg.hd[p][j] = dH[j].mat(p) - op.A[j].mat(p).adjoint() * h;
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Mat Aj = op.A[j].mat(p), Ak = op.A[k].mat(p);
        const Mat Fl = op.flux[j * n + k];
        fg.hddb[p][j * n + k] = ddbH[j * n + k].mat(p) - op.dA[k * n + j].mat(p).adjoint() * h -
                                h * op.dA[j * n + k].mat(p) - Aj.adjoint() * dbH[k].mat(p) -
                                dH[j].mat(p) * Ak + Aj.adjoint() * h * Ak - 0.5 * (Fl * h + h * Fl);
      }
  }
  fg.uniform = true;
  for (std::size_t p = 1; p < P && fg.uniform; ++p)
    fg.uniform = fg.h[p] == fg.h[0] && fg.hd[p] == fg.hd[0] && fg.hddb[p] == fg.hddb[0];
  return fg;
}

/// The 3x3 matrix d_a dbar_b log |v|^2 in coordinates (z_1, z_2, zeta).
inline Eigen::Matrix3cd xi_matrix(const FiberedGrid& fg, std::size_t p, int chart, cd zeta) {
  Eigen::Vector2cd c, dc;
  if (chart == 0) {
    c << 1.0, zeta;
    dc << 0.0, 1.0;
  } else {
    c << zeta, 1.0;
    dc << 1.0, 0.0;
  }
  const Eigen::Matrix2cd& h = fg.h[p];
  const Eigen::Vector2cd hc = h * c;
  const cd Q = c.dot(hc);
  const cd Qz = hc.dot(dc);  // c^dagger H c'
  std::array<cd, 2> Qj, Qjz;
  for (int j = 0; j < 2; ++j) {
    const Eigen::Vector2cd hjc = fg.hd[p][j] * c;
    Qj[j] = c.dot(hjc);
    Qjz[j] = dc.dot(hjc);  // c'^dagger H_j c
  }
  Eigen::Matrix3cd M;
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k) {
      const cd q = c.dot(fg.hddb[p][j * 2 + k] * c);
      M(j, k) = q / Q - Qj[j] * std::conj(Qj[k]) / (Q * Q);
      if (!fg.shift.empty()) M(j, k) -= fg.shift[p][j * 2 + k];
    }
  for (int j = 0; j < 2; ++j) {
    M(j, 2) = Qjz[j] / Q - Qj[j] * std::conj(Qz) / (Q * Q);
    M(2, j) = std::conj(M(j, 2));
  }
  M(2, 2) = dc.dot(h * dc) / Q - std::norm(Qz) / (Q * Q);
  return M;
}

/// pi_*(Xi^m) for m = 1, 2, 3 as base forms of degree (m-1, m-1).
inline const std::array<Form<Field>, 3>& pushforward_all(const FiberedGrid& fg) {
  if (fg.cache) return *fg.cache;
  const std::size_t P = fg.base.points();
  const int n = 2;
  Field f0(P, 0.0);
  std::array<Field, 4> f1;
  for (auto& f : f1) f.assign(P, 0.0);
  Field f2(P, 0.0);
  std::vector<cd> phase(fg.angles);
  for (int a = 0; a < fg.angles; ++a) phase[a] = std::polar(1.0, 2 * kPi * a / fg.angles);
  const double dth = 2 * kPi / fg.angles;
  const bool uniform = fg.uniform && (fg.shift.empty() || std::all_of(fg.shift.begin(), fg.shift.end(), [&](const auto& x) {
                                       return x == fg.shift.front();
                                     }));
  for (std::size_t p = 0; p < P; ++p) {
    if (uniform && p > 0) {
      f0[p] = f0[0];
      for (int q = 0; q < 4; ++q) f1[q][p] = f1[q][0];
      f2[p] = f2[0];
      continue;
    }
    cd s0 = 0.0, s2 = 0.0;
    std::array<cd, 4> s1{};
    for (int chart = 0; chart < 2; ++chart)
      for (std::size_t i = 0; i < fg.rho.size(); ++i) {
        const double wr = fg.rho_w[i] * fg.rho[i] * dth;
        for (int a = 0; a < fg.angles; ++a) {
          const Eigen::Matrix3cd M = xi_matrix(fg, p, chart, fg.rho[i] * phase[a]);
          s0 += wr * M(2, 2);
          for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) s1[j * n + k] += wr * (M(j, k) * M(2, 2) - M(j, 2) * M(2, k));
          s2 += wr * M.determinant();
        }
      }
    f0[p] = s0;
    for (int q = 0; q < 4; ++q) f1[q][p] = s1[q];
    f2[p] = s2;
  }
  // Xi^m = (i/2pi)^m (-1)^{m(m-1)/2} m! sum det(M_{IJ}) dz_I ^ dzbar_J; moving dzeta past the
  // k = m-1 antiholomorphic base differentials gives (-1)^k, and int dzeta ^ dzetabar = -2i dA.
  auto factor = [](int m) {
    const int k = m - 1;
    double fact = 1.0;
    for (int i = 2; i <= m; ++i) fact *= i;
    const double sgn = (((m * (m - 1) / 2) + k) % 2) ? -1.0 : 1.0;
    return std::pow(kI / (2 * kPi), m) * sgn * fact * cd(0.0, -2.0);
  };
  std::array<Form<Field>, 3> out{Form<Field>(n), Form<Field>(n), Form<Field>(n)};
  out[0].set(0, 0, coeff_scaled(f0, factor(1)));
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) out[1].set(1u << j, 1u << k, coeff_scaled(f1[j * n + k], factor(2)));
  out[2].set(3, 3, coeff_scaled(f2, factor(3)));
  fg.cache = std::move(out);
  return *fg.cache;
}

/// pi_*(Xi^power) for power = r - 1 + k, k in {0, 1, 2}.
inline Form<Field> pushforward(const FiberedGrid& fg, int power) {
  if (power < 1 || power > 3) {
    std::ostringstream os;
    os << "pushforward power must be 1, 2 or 3 for a rank 2 bundle over a surface, got " << power;
    throw Error(ErrorKind::precondition, os.str());
  }
  return pushforward_all(fg)[power - 1];
}

/// |fiber volume - 1| for the Fubini-Study form at the grid's fiber resolution.
inline double quadrature_self_test(const FiberedGrid& fg) {
  double s = 0.0;
  for (std::size_t i = 0; i < fg.rho.size(); ++i) {
    const double r2 = fg.rho[i] * fg.rho[i];
    s += fg.rho_w[i] * fg.rho[i] * 2 * kPi / ((1 + r2) * (1 + r2));
  }
  return std::abs(2.0 * s / kPi - 1.0);
}

inline constexpr double kFiberVolumeTolerance = 1e-6;

struct SegreCheck {
  int k = 0;
  double pushforward = 0.0;  ///< pi_*(Xi^{1+k}) paired with omega^{2-k}/(2-k)!
  double segre = 0.0;        ///< s_k(E, H) paired the same way
  double integrated = 0.0;   ///< |pushforward - segre|
  double pointwise = 0.0;    ///< sup of the coefficient difference
};

/// Compares pi_*(Xi^{1+k}) with the Segre form s_k: 1, -c_1, c_1^2 - c_2.
inline SegreCheck segre_check(const FiberedGrid& fg, int k) {
  require(k >= 0 && k <= 2, ErrorKind::precondition, "segre_check needs k in {0, 1, 2}");
  const double q = quadrature_self_test(fg);
  if (q > kFiberVolumeTolerance) {
    std::ostringstream os;
    os << "fiber quadrature under-resolved: volume error " << q << " at resolution " << fg.fiber_res;
    throw Error(ErrorKind::precondition, os.str());
  }
  const Form<Field> push = pushforward(fg, k + 1);
  const auto F = curvature(fg.H, fg.spec, fg.base);
  const auto s = segre_forms(chern_forms(F, 2), 2);
  SegreCheck out;
  out.k = k;
  out.pushforward = pair_with_omega(push, k, fg.base);
  out.segre = pair_with_omega(s[k], k, fg.base);
  out.integrated = std::abs(out.pushforward - out.segre);
  out.pointwise = sup_abs(push - s[k].part(k, k));
  return out;
}

struct MetricChange {
  double xi2_omega = 0.0;  ///< change of the integral of Xi^2 ^ pi^* omega
  double xi3 = 0.0;        ///< change of the integral of Xi^3
  double value = 0.0;      ///< the larger of the two
};

/// Changes of int Xi^r ^ pi^*omega^{n-1} and int Xi^{r+1} ^ pi^*omega^{n-2} when the metric
/// on O_E(1) is multiplied by e^phi, phi a base function.
inline MetricChange oe1_metric_change_invariance(const FiberedGrid& fg, const Field& phi) {
  require(phi.size() == fg.base.points(), ErrorKind::mismatch, "conformal factor does not match the base grid");
  const Grid& g = fg.base.grid();
  FiberedGrid changed = fg;
  changed.cache.reset();
  changed.shift.assign(g.points(), {});
  if (!is_constant(phi)) {
    const Field ph = g.fft(phi);
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        Field sym(g.dsymbol(k, true));
        const Field& dj = g.dsymbol(j, false);
        for (std::size_t i = 0; i < sym.size(); ++i) sym[i] *= dj[i];
        const Field d = g.apply_symbol(ph, sym);
        for (std::size_t p = 0; p < g.points(); ++p) changed.shift[p][j * 2 + k] = d[p];
      }
  }
  const auto& a = pushforward_all(fg);
  const auto& b = pushforward_all(changed);
  MetricChange out;
  out.xi2_omega = std::abs(pair_with_omega(b[1], 1, fg.base) - pair_with_omega(a[1], 1, fg.base));
  out.xi3 = std::abs(pair_with_omega(b[2], 2, fg.base) - pair_with_omega(a[2], 2, fg.base));
  out.value = std::max(out.xi2_omega, out.xi3);
  return out;
}

}  // namespace hymlab
