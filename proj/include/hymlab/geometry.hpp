#pragma once

#include "hymlab/elliptic.hpp"
#include "hymlab/forms.hpp"

#include <sstream>

namespace hymlab {

/// Compact Hermitian manifold C^n / lattice with omega = i sum G_{jk} dz_j ^ dzbar_k.
class Geometry {
 public:
  Geometry(GridPtr grid, EndField G, std::string kind = "custom") : grid_(std::move(grid)), G_(std::move(G)), kind_(std::move(kind)) {
    const int n = grid_->complex_dim();
    require(G_.rank() == n && G_.points() == grid_->points(), ErrorKind::mismatch, "metric does not match grid");
    W_ = EndField(n, grid_->points());
    det_.resize(grid_->points());
    double worst = std::numeric_limits<double>::infinity();
    std::size_t worst_at = 0;
    for (std::size_t p = 0; p < grid_->points(); ++p) {
      const Mat g = G_.mat(p);
      Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues()(0);
      if (lo < worst) {
        worst = lo;
        worst_at = p;
      }
      const Mat gi = mat_inv(g);
      W_.at(p) = gi.transpose();
      det_[p] = mat_det(g).real();
    }
    if (!(worst > 0.0)) {
      std::ostringstream os;
      os << "metric not positive definite: worst eigenvalue " << worst << " at grid point " << worst_at;
      throw Error(ErrorKind::positivity, os.str());
    }
    min_eig_ = worst;
    volume_ = integrate(Field(grid_->points(), 1.0)).real();
    constant_ = true;
    for (std::size_t p = 1; p < grid_->points() && constant_; ++p)
      if (G_.at(p) != G_.at(0)) constant_ = false;
  }

  const Grid& grid() const noexcept { return *grid_; }
  const GridPtr& grid_ptr() const noexcept { return grid_; }
  int complex_dim() const noexcept { return grid_->complex_dim(); }
  std::size_t points() const noexcept { return grid_->points(); }
  const std::string& kind() const noexcept { return kind_; }

  /// Coefficients G_{jk} of omega.
  const EndField& metric() const noexcept { return G_; }
  /// Contraction weights W = (G^{-1})^T, so that i Lambda (dz_j ^ dzbar_k) = W_{jk}.
  const EndField& weights() const noexcept { return W_; }
  /// det G, the density of omega^n/n! against the flat volume form.
  const std::vector<double>& volume_density() const noexcept { return det_; }
  double volume() const noexcept { return volume_; }
  double min_eigenvalue() const noexcept { return min_eig_; }
  /// True when the metric coefficients are the same at every point.
  bool is_constant() const noexcept { return constant_; }

  Mat mean_metric() const {
    Mat m = Mat::Zero(complex_dim(), complex_dim());
    for (int j = 0; j < complex_dim(); ++j)
      for (int k = 0; k < complex_dim(); ++k) m(j, k) = pairwise_sum(G_.entry(j, k)) / double(points());
    return m;
  }

  Form<Field> omega() const {
    const int n = complex_dim();
    Form<Field> w(n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Field f = G_.entry(j, k);
        if (sup_abs(f) == 0.0) continue;
        for (auto& x : f) x *= kI;
        w.set(1u << j, 1u << k, std::move(f));
      }
    return w;
  }

  /// Integral of a scalar density against omega^n/n!.
  cd integrate(const Field& density) const {
    require(density.size() == points(), ErrorKind::mismatch, "field does not match geometry grid");
    Field w(points());
    for (std::size_t p = 0; p < points(); ++p) w[p] = density[p] * det_[p];
    return pairwise_sum(w) * grid_->cell_volume();
  }
  double integrate_real(const Field& density) const { return integrate(density).real(); }

  /// Integral of the top-degree part of a form.
  cd integrate_top(const Form<Field>& a) const {
    require(a.dim() == complex_dim(), ErrorKind::mismatch, "form dimension does not match geometry");
    return pairwise_sum(top_density(a, points())) * grid_->cell_volume();
  }

  /// Lambda_omega of a (1,1) form; contract(omega) = n.
  Field contract(const Form<Field>& a) const {
    Field out(points(), 0.0);
    for (const auto& [key, c] : a) {
      const auto [I, J] = key;
      require(std::popcount(I) == 1 && std::popcount(J) == 1, ErrorKind::precondition,
              "contract expects a (1,1) form");
      const int j = std::countr_zero(I), k = std::countr_zero(J);
      for (std::size_t p = 0; p < points(); ++p) out[p] += -kI * W_.at(p)(j, k) * c[p];
    }
    return out;
  }

 private:
  GridPtr grid_;
  EndField G_;
  EndField W_;
  std::vector<double> det_;
  double volume_ = 0.0;
  double min_eig_ = 0.0;
  bool constant_ = false;
  std::string kind_;
};

inline Geometry make_flat_torus(std::vector<int> shape, std::vector<double> periods) {
  auto grid = make_grid(std::move(shape), std::move(periods));
  const int n = grid->complex_dim();
  return Geometry(grid, EndField::identity(n, grid->points()), "flat");
}

/// omega = omega_0 + del(gamma) + conj(del(gamma)) with gamma = amplitude sin(2 pi u_1) dzbar_2.
inline Geometry make_sheared_gauduchon_torus(std::vector<int> shape, std::vector<double> periods, double amplitude) {
  auto grid = make_grid(std::move(shape), std::move(periods));
  const int n = grid->complex_dim();
  require(n >= 2, ErrorKind::precondition, "sheared torus needs complex dimension >= 2");
  Field s(grid->points());
  for (std::size_t p = 0; p < grid->points(); ++p) s[p] = std::sin(2.0 * kPi * grid->coord(p, 0));
  const Field ds = grid->derivative(s, 0, false);
  EndField G = EndField::identity(n, grid->points());
  for (std::size_t p = 0; p < grid->points(); ++p) {
    const cd g12 = -kI * amplitude * ds[p];
    G.at(p)(0, 1) = g12;
    G.at(p)(1, 0) = std::conj(g12);
  }
  return Geometry(grid, std::move(G), amplitude == 0.0 ? "flat" : "sheared");
}

/// e^{phi} omega for a real function phi.
inline Geometry conformal(const Geometry& g, const Field& phi) {
  EndField G = g.metric();
  for (std::size_t p = 0; p < g.points(); ++p) G.at(p) *= std::exp(phi[p].real());
  return Geometry(g.grid_ptr(), std::move(G), "conformal");
}

/// Flat torus scaled by exp(amplitude sin(2 pi u_1)).
inline Geometry make_conformal_torus(std::vector<int> shape, std::vector<double> periods, double amplitude) {
  const Geometry flat = make_flat_torus(std::move(shape), std::move(periods));
  Field phi(flat.points());
  for (std::size_t p = 0; p < flat.points(); ++p) phi[p] = amplitude * std::sin(2.0 * kPi * flat.grid().coord(p, 0));
  return conformal(flat, phi);
}

inline Form<Field> d_bar(const Field& f, const Geometry& g) { return d_bar(zero_form(g.complex_dim(), f), g.grid()); }
inline Form<Field> del(const Field& f, const Geometry& g) { return del(zero_form(g.complex_dim(), f), g.grid()); }
inline Form<Field> d(const Field& f, const Geometry& g) { return d(zero_form(g.complex_dim(), f), g.grid()); }

/// omega^k, with omega^0 = 1.
inline Form<Field> omega_power(const Geometry& g, int k) {
  if (k == 0) return zero_form(g.complex_dim(), Field(g.points(), 1.0));
  return wedge_power(g.omega(), k);
}

struct GauduchonResidual {
  double rho1 = 0.0;
  double rho2 = 0.0;
};

/// Sup-norms of del delbar omega^{n-1} and del delbar omega^{n-2}.
inline GauduchonResidual gauduchon_residual(const Geometry& g) {
  const int n = g.complex_dim();
  GauduchonResidual r;
  r.rho1 = sup_abs(del(d_bar(omega_power(g, n - 1), g.grid()), g.grid()));
  if (n >= 3) r.rho2 = sup_abs(del(d_bar(omega_power(g, n - 2), g.grid()), g.grid()));
  return r;
}

/// Sup-norm of d omega; zero exactly when omega is Kaehler.
inline double kahler_residual(const Geometry& g) { return sup_abs(d(g.omega(), g.grid())); }

namespace detail {
inline Field gauduchon_operator(const Geometry& g, const Form<Field>& wn1, const Field& f) {
  return top_density(del(d_bar(multiply(wn1, f), g.grid()), g.grid()), g.points());
}

/// Fourier symbol of a translation-invariant linear map, read off its impulse response.
inline Field impulse_symbol(const Grid& grid, const LinearMap& op) {
  Field delta(grid.points(), 0.0);
  delta[0] = 1.0;
  return grid.fft(op(delta));
}

inline LinearMap symbol_inverse(const Grid& grid, Field symbol) {
  double mx = 0.0;
  for (const auto& s : symbol) mx = std::max(mx, std::abs(s));
  for (auto& s : symbol) s = std::abs(s) > 1e-12 * mx ? 1.0 / s : 0.0;
  return [&grid, symbol = std::move(symbol)](const Field& r) { return grid.apply_symbol(grid.fft(r), symbol); };
}
}  // namespace detail

/// Conformal rescaling f^{1/(n-1)} omega solving del delbar (f omega^{n-1}) = 0, volume preserved.
inline Geometry gauduchon_correct(const Geometry& g, const SolverOptions& opts = {}, Field* factor_out = nullptr,
                                  std::vector<double>* history = nullptr) {
  const int n = g.complex_dim();
  require(n >= 2, ErrorKind::precondition, "Gauduchon correction needs complex dimension >= 2");
  const Form<Field> wn1 = omega_power(g, n - 1);
  const LinearMap L = [&](const Field& f) { return detail::gauduchon_operator(g, wn1, f); };

  EndField Gm(n, g.points());
  const Mat mean = g.mean_metric();
  for (std::size_t p = 0; p < g.points(); ++p) Gm.at(p) = mean;
  const Geometry ref(g.grid_ptr(), std::move(Gm));
  const Form<Field> ref_wn1 = omega_power(ref, n - 1);
  const LinearMap L0 = [&](const Field& f) { return detail::gauduchon_operator(ref, ref_wn1, f); };
  const LinearMap M = detail::symbol_inverse(g.grid(), detail::impulse_symbol(g.grid(), L0));

  Field rhs = L(Field(g.points(), 1.0));
  for (auto& x : rhs) x = -x;
  SolveResult sol = gmres(L, M, rhs, {}, opts);
  if (history) *history = sol.history;
  if (!sol.converged) throw Error(ErrorKind::convergence, "Gauduchon correction did not converge", sol.history);

  Field f(g.points());
  const cd mean_delta = pairwise_sum(sol.x) / double(g.points());
  for (std::size_t p = 0; p < g.points(); ++p) f[p] = 1.0 + (sol.x[p] - mean_delta).real();
  for (const auto& x : f)
    require(x.real() > 0.0, ErrorKind::positivity, "Gauduchon conformal factor is not positive");

  EndField G = g.metric();
  for (std::size_t p = 0; p < g.points(); ++p) G.at(p) *= std::pow(f[p].real(), 1.0 / (n - 1));
  Geometry out(g.grid_ptr(), G, g.kind());
  const double c = std::pow(g.volume() / out.volume(), 1.0 / n);
  for (auto& x : G.raw()) x *= c;
  if (factor_out) {
    for (auto& x : f) x *= std::pow(c, n - 1);
    *factor_out = f;
  }
  return Geometry(g.grid_ptr(), std::move(G), g.kind());
}

}  // namespace hymlab
