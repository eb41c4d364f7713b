#pragma once

#include "hymlab/core.hpp"

#include <fftw3.h>

#include <array>
#include <memory>
#include <mutex>
#include <sstream>

namespace hymlab {

namespace detail {
inline int& fft_threads() {
  static int n = 1;
  return n;
}
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Caps the worker count used by grids created afterwards.
inline void set_threads(int n) {
  require(n >= 1, ErrorKind::precondition, "thread count must be >= 1");
  detail::fft_threads() = n;
}

/// Uniform periodic grid on R^{2n}/lattice with spectral differentiation.
///
/// Real coordinate u_k in [0,1) maps to x_k = L_k u_k / sqrt(2) and
/// z_a = x_{2a} + i x_{2a+1}. With omega_0 = i sum dz_a ^ dzbar_a the flat volume
/// is prod(L_k).
class Grid {
 public:
  Grid(std::vector<int> shape, std::vector<double> periods) : Grid(std::move(shape), std::move(periods), 8) {}

  /// One point per axis; spatially constant data evolves exactly on it.
  static std::shared_ptr<const Grid> single_point(std::vector<double> periods) {
    std::vector<int> shape(periods.size(), 1);
    return std::shared_ptr<const Grid>(new Grid(std::move(shape), std::move(periods), 1));
  }

 private:
  Grid(std::vector<int> shape, std::vector<double> periods, int min_size)
      : shape_(std::move(shape)), periods_(std::move(periods)) {
    require(!shape_.empty() && shape_.size() % 2 == 0, ErrorKind::precondition,
            "grid must have an even number of real dimensions");
    require(periods_.size() == shape_.size(), ErrorKind::precondition, "one period per real dimension is required");
    for (std::size_t k = 0; k < shape_.size(); ++k) {
      if (min_size > 1 && (shape_[k] < min_size || shape_[k] % 2 != 0)) {
        std::ostringstream os;
        os << "grid entry " << shape_[k] << " on axis " << k << " must be even and >= 8";
        throw Error(ErrorKind::precondition, os.str());
      }
      if (!(periods_[k] > 0.0) || !std::isfinite(periods_[k])) {
        std::ostringstream os;
        os << "degenerate lattice: period " << periods_[k] << " on axis " << k;
        throw Error(ErrorKind::precondition, os.str());
      }
    }
    n_ = static_cast<int>(shape_.size()) / 2;
    points_ = 1;
    for (int s : shape_) points_ *= static_cast<std::size_t>(s);
    strides_.assign(shape_.size(), 1);
    for (int k = static_cast<int>(shape_.size()) - 2; k >= 0; --k) strides_[k] = strides_[k + 1] * shape_[k + 1];
    build_symbols();
    build_plans();
  }

 public:
  Grid(const Grid&) = delete;
  Grid& operator=(const Grid&) = delete;

  ~Grid() {
    std::lock_guard lock(detail::planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  int complex_dim() const noexcept { return n_; }
  int real_dim() const noexcept { return 2 * n_; }
  std::size_t points() const noexcept { return points_; }
  const std::vector<int>& shape() const noexcept { return shape_; }
  const std::vector<double>& periods() const noexcept { return periods_; }

  /// Coordinate u_k in [0,1) of point p along axis k.
  double coord(std::size_t p, int k) const {
    const std::size_t i = (p / strides_[k]) % shape_[k];
    return static_cast<double>(i) / shape_[k];
  }
  /// Physical coordinate x_k.
  double x(std::size_t p, int k) const { return coord(p, k) * periods_[k] / std::sqrt(2.0); }
  /// Physical side length along axis k.
  double side(int k) const { return periods_[k] / std::sqrt(2.0); }

  double flat_volume() const {
    double v = 1.0;
    for (double L : periods_) v *= L;
    return v;
  }
  /// Flat volume carried by each grid point.
  double cell_volume() const { return flat_volume() / static_cast<double>(points_); }

  /// Area of the z_a coordinate torus in the x coordinates.
  double area(int a) const { return side(2 * a) * side(2 * a + 1); }

  bool same_as(const Grid& o) const { return shape_ == o.shape_ && periods_ == o.periods_; }

  Field fft(const Field& f) const {
    require(f.size() == points_, ErrorKind::mismatch, "field does not match grid");
    Field out(points_);
    fftw_execute_dft(fwd_, reinterpret_cast<fftw_complex*>(const_cast<cd*>(f.data())),
                     reinterpret_cast<fftw_complex*>(out.data()));
    return out;
  }

  Field ifft(const Field& fh) const {
    Field out(points_);
    fftw_execute_dft(bwd_, reinterpret_cast<fftw_complex*>(const_cast<cd*>(fh.data())),
                     reinterpret_cast<fftw_complex*>(out.data()));
    const double s = 1.0 / static_cast<double>(points_);
    for (auto& x : out) x *= s;
    return out;
  }

  /// Inverse transform of fh multiplied by a symbol.
  Field apply_symbol(const Field& fh, const Field& symbol) const {
    Field tmp(points_);
    for (std::size_t i = 0; i < points_; ++i) tmp[i] = fh[i] * symbol[i];
    return ifft(tmp);
  }

  /// Symbol of d/dz_a (bar=false) or d/dzbar_a (bar=true).
  const Field& dsymbol(int a, bool bar) const { return bar ? dzbar_[a] : dz_[a]; }

  /// Physical angular wavenumber of every mode along axis k (Nyquist zeroed).
  const std::vector<double>& wavenumbers(int k) const { return kvec_[k]; }

  /// Sum over axes of the squared wavenumber; symbol of -Laplacian in x.
  const std::vector<double>& k2() const noexcept { return k2_; }

  Field derivative(const Field& f, int a, bool bar) const { return apply_symbol(fft(f), dsymbol(a, bar)); }

  /// Mixed second derivative d^2/(dz_j dzbar_k).
  Field ddbar(const Field& f, int j, int k) const {
    const Field fh = fft(f);
    Field sym(points_);
    for (std::size_t i = 0; i < points_; ++i) sym[i] = dz_[j][i] * dzbar_[k][i];
    return apply_symbol(fh, sym);
  }

  /// Signed integer mode index along axis k for flat mode index p.
  int mode(std::size_t p, int k) const {
    const int i = static_cast<int>((p / strides_[k]) % shape_[k]);
    return i <= shape_[k] / 2 ? i : i - shape_[k];
  }

 private:
  void build_symbols() {
    const int d = real_dim();
    kvec_.assign(d, std::vector<double>(points_, 0.0));
    k2_.assign(points_, 0.0);
    for (std::size_t p = 0; p < points_; ++p) {
      for (int k = 0; k < d; ++k) {
        const int i = static_cast<int>((p / strides_[k]) % shape_[k]);
        int m = i <= shape_[k] / 2 ? i : i - shape_[k];
        const bool nyquist = (i == shape_[k] / 2);
        const double kk = 2.0 * kPi * m / side(k);
        kvec_[k][p] = nyquist ? 0.0 : kk;
        k2_[p] += kk * kk;
      }
    }
    dz_.assign(n_, Field(points_));
    dzbar_.assign(n_, Field(points_));
    for (int a = 0; a < n_; ++a) {
      for (std::size_t p = 0; p < points_; ++p) {
        const double kx = kvec_[2 * a][p];
        const double ky = kvec_[2 * a + 1][p];
        dz_[a][p] = 0.5 * cd(ky, kx);
        dzbar_[a][p] = 0.5 * cd(-ky, kx);
      }
    }
  }

  void build_plans() {
    std::lock_guard lock(detail::planner_mutex());
    static bool threads_ready = [] { return fftw_init_threads() != 0; }();
    if (threads_ready) fftw_plan_with_nthreads(detail::fft_threads());
    std::vector<cd> a(points_), b(points_);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fwd_ = fftw_plan_dft(real_dim(), shape_.data(), reinterpret_cast<fftw_complex*>(a.data()),
                         reinterpret_cast<fftw_complex*>(b.data()), FFTW_FORWARD, flags);
    bwd_ = fftw_plan_dft(real_dim(), shape_.data(), reinterpret_cast<fftw_complex*>(a.data()),
                         reinterpret_cast<fftw_complex*>(b.data()), FFTW_BACKWARD, flags);
    require(fwd_ != nullptr && bwd_ != nullptr, ErrorKind::precondition, "FFT planning failed");
  }

  std::vector<int> shape_;
  std::vector<double> periods_;
  std::vector<std::size_t> strides_;
  int n_ = 0;
  std::size_t points_ = 0;
  std::vector<std::vector<double>> kvec_;
  std::vector<double> k2_;
  std::vector<Field> dz_, dzbar_;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(std::vector<int> shape, std::vector<double> periods) {
  return std::make_shared<const Grid>(std::move(shape), std::move(periods));
}

}  // namespace hymlab
