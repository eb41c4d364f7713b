#pragma once

#include "hymlab/bundle.hpp"

#include <random>

namespace hymlab {

/// (0,1) operator components a~_k and their holomorphic derivatives d_j a~_k.
struct OperatorData {
  std::vector<EndField> A;
  /// dA[j*n+k] = d/dz_j a~_k.
  std::vector<EndField> dA;
  /// Constant background curvature F_{j kbar}, row-major in (j,k).
  std::vector<Mat> flux;
};

inline OperatorData operator_data(const BundleSpec& s, std::vector<EndField> A) {
  const int n = s.complex_dim();
  OperatorData d;
  d.A = std::move(A);
  d.dA.resize(n * n);
  for (int k = 0; k < n; ++k) {
    const EndSpectrum sp(d.A[k], *s.grid);
    for (int j = 0; j < n; ++j) d.dA[j * n + k] = sp.derivative(j, false);
  }
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) d.flux.push_back(s.flux_curvature(j, k));
  return d;
}

inline OperatorData operator_data(const BundleSpec& s) {
  std::vector<EndField> A;
  for (int k = 0; k < s.complex_dim(); ++k) A.push_back(s.operator_component(k));
  return operator_data(s, std::move(A));
}

/// Endomorphism-valued (1,1) form sum F_{j kbar} dz_j ^ dzbar_k.
struct Curvature {
  int n = 0;
  std::vector<EndField> F;

  const EndField& at(int j, int k) const { return F[j * n + k]; }
  EndField& at(int j, int k) { return F[j * n + k]; }
  std::size_t points() const { return F.front().points(); }
  int rank() const { return F.front().rank(); }

  Form<EndField> form() const {
    Form<EndField> out(n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) out.set(1u << j, 1u << k, at(j, k));
    return out;
  }
};

/// Chern connection data: psi_j is the (1,0) connection matrix in the bundle frame.
struct ChernConnection {
  Curvature F;
  std::vector<EndField> psi;
};

/// Chern connection and curvature of (dbar_E, H).
///
/// psi_j = H^{-1}(d_j H - a~_j^dagger H),
/// F_{j kbar} = F^flux_{jk} - dbar_k psi_j + d_j a~_k + psi_j a~_k - a~_k psi_j.
/// The trace of psi_j is taken as d_j log det H, so tr F is exactly the discrete
/// del-delbar of log det H. The result is then projected onto the symmetry (H F_{j kbar})^dagger = H F_{k jbar} that the
/// exact curvature satisfies. The projection keeps the integrals of tr F exact.
inline ChernConnection chern_connection(const EndField& H, const OperatorData& op, const Grid& g) {
  require_metric(H);
  const int n = g.complex_dim();
  const std::size_t P = g.points();
  const int r = H.rank();
  const EndSpectrum Hs(H, g);
  std::vector<EndField> dH(n);
  for (int j = 0; j < n; ++j) dH[j] = Hs.derivative(j, false);

  ChernConnection out;
  out.F.n = n;
  out.F.F.assign(n * n, EndField(r, P));
  out.psi.assign(n, EndField(r, P));
  Field logdet(P);
  std::vector<Field> tr_hdh(n, Field(P));
  for (std::size_t p = 0; p < P; ++p) {
    const Mat h = H.mat(p);
    const Mat hi = mat_inv(h);
    logdet[p] = std::log(mat_det(h).real());
    for (int j = 0; j < n; ++j) {
      const Mat hdh = hi * dH[j].mat(p);
      tr_hdh[j][p] = hdh.trace();
      out.psi[j].at(p) = hdh - hi * op.A[j].mat(p).adjoint() * h;
    }
  }
  // Trace part of psi_j taken as d_j log det H exactly.
  if (!is_constant(logdet)) {
    const Field lh = g.fft(logdet);
    for (int j = 0; j < n; ++j) {
      const Field dl = g.apply_symbol(lh, g.dsymbol(j, false));
      for (std::size_t p = 0; p < P; ++p) {
        const cd c = (dl[p] - tr_hdh[j][p]) / double(r);
        for (int i = 0; i < r; ++i) out.psi[j].at(p)(i, i) += c;
      }
    }
  }
  for (int j = 0; j < n; ++j) {
    const EndSpectrum ps(out.psi[j], g);
    for (int k = 0; k < n; ++k) {
      const EndField dbar_psi = ps.derivative(k, true);
      EndField& F = out.F.at(j, k);
      for (std::size_t p = 0; p < P; ++p) {
        const Mat psi = out.psi[j].mat(p);
        const Mat A = op.A[k].mat(p);
        F.at(p) = op.flux[j * n + k] - dbar_psi.at(p) + op.dA[j * n + k].at(p) + psi * A - A * psi;
      }
    }
  }
  for (std::size_t p = 0; p < P; ++p) {
    const Mat h = H.mat(p);
    const Mat hi = mat_inv(h);
    for (int j = 0; j < n; ++j)
      for (int k = j; k < n; ++k) {
        const Mat a = out.F.at(j, k).mat(p);
        const Mat b = out.F.at(k, j).mat(p);
        out.F.at(j, k).at(p) = 0.5 * (a + hi * b.adjoint() * h);
        if (k != j) out.F.at(k, j).at(p) = 0.5 * (b + hi * a.adjoint() * h);
      }
  }
  return out;
}

inline Curvature curvature(const EndField& H, const BundleSpec& s, const Geometry& geom) {
  require(H.rank() == s.rank && H.points() == geom.points(), ErrorKind::mismatch, "metric does not match bundle");
  return chern_connection(H, operator_data(s), geom.grid()).F;
}

/// i Lambda_omega F = sum W_{jk} F_{j kbar}.
inline EndField mean_curvature(const Curvature& F, const Geometry& geom) {
  const int n = F.n;
  EndField out(F.rank(), F.points());
  const EndField& W = geom.weights();
  for (std::size_t p = 0; p < F.points(); ++p)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) out.at(p) += W.at(p)(j, k) * F.at(j, k).at(p);
  return out;
}

inline EndField mean_curvature(const EndField& H, const BundleSpec& s, const Geometry& geom) {
  return mean_curvature(curvature(H, s, geom), geom);
}

/// sup_x |Phi - lambda Id|_H.
inline double he_residual(const EndField& Phi, const EndField& H, double lambda) {
  EndField X = Phi;
  for (std::size_t p = 0; p < X.points(); ++p)
    for (int i = 0; i < X.rank(); ++i) X.at(p)(i, i) -= lambda;
  return endo_norm(X, H, NormKind::sup);
}

inline double he_residual(const EndField& H, const BundleSpec& s, const Geometry& geom, double lambda) {
  return he_residual(mean_curvature(H, s, geom), H, lambda);
}

/// Pointwise |F|_H^2 = sum W_{jl} W_{mk} tr(F_{jk} H^{-1} F_{lm}^dagger H).
inline std::vector<double> curvature_norm2(const Curvature& F, const EndField& H, const Geometry& geom) {
  const int n = F.n;
  std::vector<double> out(F.points());
  const EndField& W = geom.weights();
  std::vector<Mat> Fh(n * n);
  for (std::size_t p = 0; p < F.points(); ++p) {
    const Mat h = H.mat(p), hi = mat_inv(h);
    for (int q = 0; q < n * n; ++q) Fh[q] = F.F[q].mat(p) * hi;
    cd s = 0.0;
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
          for (int m = 0; m < n; ++m) {
            const cd w = W.at(p)(j, l) * W.at(p)(m, k);
            if (w == 0.0) continue;
            s += w * (Fh[j * n + k] * F.F[l * n + m].at(p).adjoint() * h).trace();
          }
    out[p] = std::max(0.0, s.real());
  }
  return out;
}

/// sup_x |F|_H.
inline double sup_curvature(const Curvature& F, const EndField& H, const Geometry& geom) {
  double m = 0.0;
  for (double x : curvature_norm2(F, H, geom)) m = std::max(m, x);
  return std::sqrt(m);
}

/// Integral of |F|_H^2, the Yang-Mills energy.
inline double ym_energy(const Curvature& F, const EndField& H, const Geometry& geom) {
  const auto n2 = curvature_norm2(F, H, geom);
  return geom.integrate_real(Field(n2.begin(), n2.end()));
}

/// Operator P(phi) = i Lambda dbar del phi = -sum W_{jk} d_j dbar_k phi on scalars.
inline LinearMap laplace_operator(const Geometry& geom) {
  return [&geom](const Field& phi) {
    const Grid& g = geom.grid();
    const int n = g.complex_dim();
    const Field ph = g.fft(phi);
    Field out(g.points(), 0.0);
    if (geom.is_constant()) {
      Field sym(g.points(), 0.0);
      const Mat W = geom.weights().mat(0);
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          for (std::size_t p = 0; p < g.points(); ++p) sym[p] -= W(j, k) * g.dsymbol(j, false)[p] * g.dsymbol(k, true)[p];
      return g.apply_symbol(ph, sym);
    }
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Field sym(g.points());
        for (std::size_t p = 0; p < g.points(); ++p) sym[p] = g.dsymbol(j, false)[p] * g.dsymbol(k, true)[p];
        const Field djk = g.apply_symbol(ph, sym);
        for (std::size_t p = 0; p < g.points(); ++p) out[p] -= geom.weights().at(p)(j, k) * djk[p];
      }
    return out;
  };
}

/// Fourier symbol of P for the averaged metric, used as a preconditioner.
inline Field laplace_symbol_mean(const Geometry& geom) {
  const Grid& g = geom.grid();
  const int n = g.complex_dim();
  const Mat W = geom.mean_metric().inverse().transpose();
  Field sym(g.points(), 0.0);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      for (std::size_t p = 0; p < g.points(); ++p) sym[p] -= W(j, k) * g.dsymbol(j, false)[p] * g.dsymbol(k, true)[p];
  return sym;
}

/// Solves P(phi) = rhs for mean-free phi; rhs must integrate to zero against omega^n/n!.
inline Field solve_laplace(const Geometry& geom, const Field& rhs, const SolverOptions& opts = {}) {
  const LinearMap P = laplace_operator(geom);
  const LinearMap M = detail::symbol_inverse(geom.grid(), laplace_symbol_mean(geom));
  SolveResult sol = gmres(P, M, rhs, {}, opts);
  if (!sol.converged) throw Error(ErrorKind::convergence, "scalar elliptic solve did not converge", sol.history);
  const cd mean = pairwise_sum(sol.x) / double(sol.x.size());
  for (auto& x : sol.x) x = (x - mean).real();
  return sol.x;
}

/// Conformal change K = e^phi H with tr(i Lambda F_K) = r lambda.
///
/// The linear solve is repeated on the remaining trace defect, which removes the small
/// discrepancy between the discrete curvature and the discrete operator P.
inline EndField trace_normalize(const EndField& H, double lambda, const BundleSpec& s, const Geometry& geom,
                                const SolverOptions& opts = {}, Field* phi_out = nullptr) {
  const int r = s.rank;
  Field phi_total(geom.points(), 0.0);
  EndField K = H;
  double target = 0.0;
  for (int pass = 0; pass < 6; ++pass) {
    const Field t = trace(mean_curvature(K, s, geom));
    Field rhs(geom.points());
    double scale = std::abs(r * lambda) * geom.volume();
    double defect = 0.0;
    {
      Field at(t.size());
      for (std::size_t p = 0; p < t.size(); ++p) at[p] = std::abs(t[p]);
      scale += geom.integrate_real(at);
    }
    for (std::size_t p = 0; p < rhs.size(); ++p) {
      rhs[p] = (r * lambda - t[p].real()) / r;
      defect = std::max(defect, std::abs(rhs[p]));
    }
    const double mismatch = r * geom.integrate_real(rhs);
    if (pass == 0 && std::abs(mismatch) > 1e-8 * std::max(scale, 1.0)) {
      const double deg = geom.integrate_real(t) / (2.0 * kPi);
      std::ostringstream os;
      os << "trace normalization obstructed: lambda = " << lambda << " does not match deg = " << deg
         << " (integral mismatch " << mismatch << ")";
      throw Error(ErrorKind::obstruction, os.str());
    }
    if (pass == 0) target = 1e-12 * (1.0 + std::abs(lambda) + defect);
    if (defect <= target) break;
    const double mean = geom.integrate_real(rhs) / geom.volume();
    for (auto& x : rhs) x -= mean;
    SolverOptions o = opts;
    o.atol = std::max(o.atol, 1e-3 * target);
    const Field phi = solve_laplace(geom, rhs, o);
    for (std::size_t p = 0; p < K.points(); ++p) {
      K.at(p) *= std::exp(phi[p].real());
      phi_total[p] += phi[p];
    }
  }
  if (phi_out) *phi_out = phi_total;
  return K;
}

inline EndField identity_metric(const BundleSpec& s) { return EndField::identity(s.rank, s.grid->points()); }

inline EndField diag_metric(const BundleSpec& s, const std::vector<double>& d) {
  require(static_cast<int>(d.size()) == s.rank, ErrorKind::precondition, "diag metric needs one entry per rank");
  EndField H(s.rank, s.grid->points());
  for (std::size_t p = 0; p < H.points(); ++p)
    for (int i = 0; i < s.rank; ++i) {
      require(d[i] > 0.0, ErrorKind::positivity, "diag metric entries must be positive");
      H.at(p)(i, i) = d[i];
    }
  return H;
}

/// Random Hermitian field built from Fourier modes with |m_k| <= 1, seeded.
inline EndField random_hermitian_field(const BundleSpec& s, std::uint64_t seed, double amplitude, int modes = 4) {
  const Grid& g = *s.grid;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  EndField S(s.rank, g.points());
  for (int i = 0; i < s.rank; ++i)
    for (int j = i; j < s.rank; ++j) {
      if (!s.compatible(i, j)) continue;
      Field f(g.points(), 0.0);
      for (int t = 0; t < modes; ++t) {
        std::vector<int> m(g.real_dim());
        for (auto& x : m) x = static_cast<int>(rng() % 3) - 1;
        const cd c(nd(rng), nd(rng));
        for (std::size_t p = 0; p < g.points(); ++p) {
          double arg = 0.0;
          for (int k = 0; k < g.real_dim(); ++k) arg += 2.0 * kPi * m[k] * g.coord(p, k);
          f[p] += amplitude / modes * c * std::exp(kI * arg);
        }
      }
      for (std::size_t p = 0; p < g.points(); ++p) {
        if (i == j) {
          S.at(p)(i, i) = f[p].real();
        } else {
          S.at(p)(i, j) = f[p];
          S.at(p)(j, i) = std::conj(f[p]);
        }
      }
    }
  return S;
}

/// H = exp(S) for a random smooth Hermitian S of the given amplitude.
inline EndField random_smooth_metric(const BundleSpec& s, std::uint64_t seed, double amplitude) {
  return endo_exp(random_hermitian_field(s, seed, amplitude));
}

/// Sup-norm of the Bianchi identity d_A F = 0, both (2,1) and (1,2) parts.
inline double bianchi_residual(const EndField& H, const BundleSpec& s, const Geometry& geom) {
  const OperatorData op = operator_data(s);
  const ChernConnection cc = chern_connection(H, op, geom.grid());
  const int n = s.complex_dim();
  const Grid& g = geom.grid();
  double m = 0.0;
  std::vector<EndSpectrum> sp;
  for (int q = 0; q < n * n; ++q) sp.emplace_back(cc.F.F[q], g);
  for (int j = 0; j < n; ++j)
    for (int l = j + 1; l < n; ++l)
      for (int k = 0; k < n; ++k) {
        const EndField a = sp[l * n + k].derivative(j, false), b = sp[j * n + k].derivative(l, false);
        const EndField c = sp[k * n + l].derivative(j, true), d = sp[k * n + j].derivative(l, true);
        for (std::size_t p = 0; p < g.points(); ++p) {
          const Mat Flk = cc.F.at(l, k).mat(p), Fjk = cc.F.at(j, k).mat(p);
          const Mat Fkl = cc.F.at(k, l).mat(p), Fkj = cc.F.at(k, j).mat(p);
          const Mat pj = cc.psi[j].mat(p), pl = cc.psi[l].mat(p);
          const Mat aj = op.A[j].mat(p), al = op.A[l].mat(p);
          const Mat r1 = a.at(p) + pj * Flk - Flk * pj - b.at(p) - pl * Fjk + Fjk * pl;
          const Mat r2 = c.at(p) + aj * Fkl - Fkl * aj - d.at(p) - al * Fkj + Fkj * al;
          m = std::max({m, r1.cwiseAbs().maxCoeff(), r2.cwiseAbs().maxCoeff()});
        }
      }
  return m;
}

}  // namespace hymlab
