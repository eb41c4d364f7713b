#pragma once

#include "hymlab/endo.hpp"

#include <sstream>

namespace hymlab {

/// Holomorphic bundle on a torus, written in a frame of basis sections e_i.
///
/// Each e_i carries a constant-curvature background (integer flux per complex
/// direction) and a flat (0,1) constant c_i. The full (0,1) operator in that frame is
/// dbar + diag(c_{.k}) dzbar_k + a_k dzbar_k, with a periodic. Entries a_ij and metric
/// entries H_ij may be nonzero only when e_i and e_j carry equal flux.
struct BundleSpec {
  int rank = 0;
  GridPtr grid;
  std::vector<std::vector<int>> flux;
  std::vector<std::vector<cd>> flat;
  /// Periodic perturbation a_k, one per complex direction; empty means a = 0.
  std::vector<EndField> a;
  std::string name;

  int complex_dim() const { return grid->complex_dim(); }
  bool has_perturbation() const { return !a.empty(); }

  bool compatible(int i, int j) const { return flux[i] == flux[j]; }

  /// Full operator component a~_k = diag(c_{.k}) + a_k.
  EndField operator_component(int k) const {
    EndField out = has_perturbation() ? a[k] : EndField(rank, grid->points());
    for (std::size_t p = 0; p < grid->points(); ++p)
      for (int i = 0; i < rank; ++i) out.at(p)(i, i) += flat[i][k];
    return out;
  }

  /// Constant background curvature component F_{j kbar} of the canonical metric.
  Mat flux_curvature(int j, int k) const {
    Mat m = Mat::Zero(rank, rank);
    if (j == k)
      for (int i = 0; i < rank; ++i) m(i, i) = kPi * flux[i][j] / grid->area(j);
    return m;
  }

  std::vector<int> total_flux() const {
    std::vector<int> s(complex_dim(), 0);
    for (const auto& f : flux)
      for (int a = 0; a < complex_dim(); ++a) s[a] += f[a];
    return s;
  }
};

namespace detail {
inline BundleSpec blank(const GridPtr& g, int r, std::string name) {
  require(r >= 1 && r <= kMaxRank, ErrorKind::precondition, "bundle rank must be between 1 and 4");
  BundleSpec s;
  s.rank = r;
  s.grid = g;
  s.flux.assign(r, std::vector<int>(g->complex_dim(), 0));
  s.flat.assign(r, std::vector<cd>(g->complex_dim(), 0.0));
  s.name = std::move(name);
  return s;
}

inline void require_same_grid(const BundleSpec& a, const BundleSpec& b) {
  require(a.grid->same_as(*b.grid), ErrorKind::mismatch, "bundles live on different geometries");
}

inline EndField kron(const EndField& A, const EndField& B) {
  const int ra = A.rank(), rb = B.rank();
  EndField out(ra * rb, A.points());
  for (std::size_t p = 0; p < A.points(); ++p)
    for (int i = 0; i < ra; ++i)
      for (int j = 0; j < ra; ++j)
        for (int k = 0; k < rb; ++k)
          for (int l = 0; l < rb; ++l) out.at(p)(i * rb + k, j * rb + l) = A.at(p)(i, j) * B.at(p)(k, l);
  return out;
}
}  // namespace detail

inline BundleSpec trivial_bundle(const GridPtr& g, int r) { return detail::blank(g, r, "trivial"); }

/// Flat unitary line with holonomy exp(i theta_k) around the k-th real lattice generator.
inline BundleSpec flat_line(const GridPtr& g, const std::vector<double>& angles) {
  require(static_cast<int>(angles.size()) == g->real_dim(), ErrorKind::precondition,
          "flat_line needs one angle per real lattice generator");
  BundleSpec s = detail::blank(g, 1, "flat_line");
  for (int a = 0; a < g->complex_dim(); ++a) {
    const double ax = angles[2 * a] / g->side(2 * a);
    const double ay = angles[2 * a + 1] / g->side(2 * a + 1);
    s.flat[0][a] = 0.5 * kI * ax - 0.5 * ay;
  }
  return s;
}

/// Line bundle with integer flux k_a through the z_a coordinate torus.
inline BundleSpec flux_line(const GridPtr& g, const std::vector<int>& k) {
  require(static_cast<int>(k.size()) == g->complex_dim(), ErrorKind::precondition,
          "flux_line needs one integer per complex direction");
  int guard = g->shape()[0];
  for (int s : g->shape()) guard = std::min(guard, s);
  guard /= 4;
  for (int x : k) {
    if (std::abs(x) > guard) {
      std::ostringstream os;
      os << "flux " << x << " exceeds the resolution guard " << guard << " for this grid";
      throw Error(ErrorKind::precondition, os.str());
    }
  }
  BundleSpec s = detail::blank(g, 1, "flux_line");
  s.flux[0] = k;
  return s;
}

/// Scalar (0,1) class beta defining an extension of O by O.
struct ExtensionClass {
  std::vector<Field> beta;
};

inline ExtensionClass constant_class(const Grid& g, const std::vector<cd>& b) {
  require(static_cast<int>(b.size()) == g.complex_dim(), ErrorKind::precondition, "one coefficient per direction");
  ExtensionClass e;
  for (cd x : b) e.beta.emplace_back(g.points(), x);
  return e;
}

/// beta = dbar u for a scalar function u; the extension is then holomorphically trivial.
inline ExtensionClass exact_class(const Grid& g, const Field& u) {
  ExtensionClass e;
  const Field uh = g.fft(u);
  for (int k = 0; k < g.complex_dim(); ++k) e.beta.push_back(g.apply_symbol(uh, g.dsymbol(k, true)));
  return e;
}

/// Sup-norm of dbar beta.
inline double closedness_residual(const ExtensionClass& e, const Grid& g) {
  double m = 0.0;
  const int n = g.complex_dim();
  for (int k = 0; k < n; ++k)
    for (int l = k + 1; l < n; ++l) {
      const bool ck = is_constant(e.beta[l]), cl = is_constant(e.beta[k]);
      const Field a = ck ? Field(g.points(), 0.0) : g.derivative(e.beta[l], k, true);
      const Field b = cl ? Field(g.points(), 0.0) : g.derivative(e.beta[k], l, true);
      for (std::size_t p = 0; p < g.points(); ++p) m = std::max(m, std::abs(a[p] - b[p]));
    }
  return m;
}

/// Rank-2 extension 0 -> O -> E -> O -> 0 with a = N beta, N strictly upper triangular.
inline BundleSpec extension_bundle(const GridPtr& g, const ExtensionClass& e) {
  require(static_cast<int>(e.beta.size()) == g->complex_dim(), ErrorKind::precondition,
          "extension class needs one component per direction");
  const double res = closedness_residual(e, *g);
  if (res > 1e-10) {
    std::ostringstream os;
    os << "extension class is not dbar-closed: residual " << res;
    throw Error(ErrorKind::integrability, os.str());
  }
  BundleSpec s = detail::blank(g, 2, "extension");
  for (int k = 0; k < g->complex_dim(); ++k) {
    EndField ak(2, g->points());
    ak.set_entry(0, 1, e.beta[k]);
    s.a.push_back(std::move(ak));
  }
  return s;
}

/// Replaces the periodic perturbation; entries between unequal fluxes are rejected.
inline BundleSpec with_perturbation(BundleSpec s, std::vector<EndField> a) {
  require(static_cast<int>(a.size()) == s.complex_dim(), ErrorKind::precondition, "one perturbation per direction");
  for (const auto& ak : a) {
    require(ak.rank() == s.rank && ak.points() == s.grid->points(), ErrorKind::mismatch, "perturbation shape mismatch");
    for (int i = 0; i < s.rank; ++i)
      for (int j = 0; j < s.rank; ++j)
        if (!s.compatible(i, j))
          require(sup_abs(ak.entry(i, j)) == 0.0, ErrorKind::precondition,
                  "perturbation couples summands of different flux");
  }
  s.a = std::move(a);
  return s;
}

inline BundleSpec dual(const BundleSpec& s) {
  BundleSpec d = s;
  d.name = "dual(" + s.name + ")";
  for (auto& f : d.flux)
    for (auto& x : f) x = -x;
  for (auto& f : d.flat)
    for (auto& x : f) x = -x;
  for (auto& ak : d.a)
    for (std::size_t p = 0; p < ak.points(); ++p) ak.at(p) = Mat(-ak.mat(p).transpose());
  return d;
}

inline BundleSpec direct_sum(const BundleSpec& x, const BundleSpec& y) {
  detail::require_same_grid(x, y);
  BundleSpec s = detail::blank(x.grid, x.rank + y.rank, "(" + x.name + "+" + y.name + ")");
  for (int i = 0; i < x.rank; ++i) {
    s.flux[i] = x.flux[i];
    s.flat[i] = x.flat[i];
  }
  for (int i = 0; i < y.rank; ++i) {
    s.flux[x.rank + i] = y.flux[i];
    s.flat[x.rank + i] = y.flat[i];
  }
  if (x.has_perturbation() || y.has_perturbation()) {
    for (int k = 0; k < s.complex_dim(); ++k) {
      EndField ak(s.rank, s.grid->points());
      for (std::size_t p = 0; p < ak.points(); ++p) {
        if (x.has_perturbation()) ak.at(p).block(0, 0, x.rank, x.rank) = x.a[k].at(p);
        if (y.has_perturbation()) ak.at(p).block(x.rank, x.rank, y.rank, y.rank) = y.a[k].at(p);
      }
      s.a.push_back(std::move(ak));
    }
  }
  return s;
}

inline BundleSpec tensor(const BundleSpec& x, const BundleSpec& y) {
  detail::require_same_grid(x, y);
  BundleSpec s = detail::blank(x.grid, x.rank * y.rank, "(" + x.name + "*" + y.name + ")");
  const int n = s.complex_dim();
  for (int i = 0; i < x.rank; ++i)
    for (int j = 0; j < y.rank; ++j)
      for (int a = 0; a < n; ++a) {
        s.flux[i * y.rank + j][a] = x.flux[i][a] + y.flux[j][a];
        s.flat[i * y.rank + j][a] = x.flat[i][a] + y.flat[j][a];
      }
  if (x.has_perturbation() || y.has_perturbation()) {
    const std::size_t P = s.grid->points();
    for (int k = 0; k < n; ++k) {
      EndField ak(s.rank, P);
      if (x.has_perturbation()) ak += detail::kron(x.a[k], EndField::identity(y.rank, P));
      if (y.has_perturbation()) ak += detail::kron(EndField::identity(x.rank, P), y.a[k]);
      s.a.push_back(std::move(ak));
    }
  }
  return s;
}

inline BundleSpec det(const BundleSpec& x) {
  BundleSpec s = detail::blank(x.grid, 1, "det(" + x.name + ")");
  s.flux[0] = x.total_flux();
  for (int a = 0; a < s.complex_dim(); ++a)
    for (int i = 0; i < x.rank; ++i) s.flat[0][a] += x.flat[i][a];
  if (x.has_perturbation()) {
    for (int k = 0; k < s.complex_dim(); ++k) {
      EndField ak(1, s.grid->points());
      ak.set_entry(0, 0, trace(x.a[k]));
      s.a.push_back(std::move(ak));
    }
  }
  return s;
}

/// Sup-norm of the (0,2) part of dbar a~ + a~ ^ a~.
inline double integrability_residual(const BundleSpec& s) {
  const int n = s.complex_dim();
  if (n < 2) return 0.0;
  std::vector<EndField> A;
  std::vector<EndSpectrum> spec;
  for (int k = 0; k < n; ++k) {
    A.push_back(s.operator_component(k));
    spec.emplace_back(A.back(), *s.grid);
  }
  double m = 0.0;
  for (int k = 0; k < n; ++k)
    for (int l = k + 1; l < n; ++l) {
      const EndField dl = spec[l].derivative(k, true);
      const EndField dk = spec[k].derivative(l, true);
      for (std::size_t p = 0; p < s.grid->points(); ++p) {
        const Mat r = dl.at(p) - dk.at(p) + A[k].at(p) * A[l].at(p) - A[l].at(p) * A[k].at(p);
        m = std::max(m, r.cwiseAbs().maxCoeff());
      }
    }
  return m;
}

}  // namespace hymlab
