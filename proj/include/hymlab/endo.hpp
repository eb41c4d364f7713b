#pragma once

#include "hymlab/geometry.hpp"

#include <sstream>

namespace hymlab {

/// Relative floor for the smallest eigenvalue of a metric.
inline constexpr double kPositivityFloor = 1e-12;

inline Mat hermitian_part(const Mat& m) { return 0.5 * (m + m.adjoint()); }

using EigVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxRank, 1>;

/// Eigen-decomposition of a Hermitian matrix, ascending; closed form for rank <= 2.
inline void herm_eig(const Mat& S, EigVec& w, Mat& V) {
  const int r = static_cast<int>(S.rows());
  w.resize(r);
  if (r == 1) {
    w(0) = S(0, 0).real();
    V = Mat::Identity(1, 1);
    return;
  }
  if (r == 2) {
    const double a = S(0, 0).real(), d = S(1, 1).real();
    const cd b = 0.5 * (S(0, 1) + std::conj(S(1, 0)));
    const double m = 0.5 * (a + d), h = 0.5 * (a - d);
    const double rad = std::hypot(h, std::abs(b));
    w(0) = m - rad;
    w(1) = m + rad;
    V.resize(2, 2);
    if (rad == 0.0) {
      V.setIdentity();
      return;
    }
    // eigenvector of the smaller eigenvalue, from the row without cancellation
    cd x, y;
    if (h > 0.0) {
      x = b;
      y = -(h + rad);
    } else {
      x = -(rad - h);
      y = std::conj(b);
    }
    const double nv = std::sqrt(std::norm(x) + std::norm(y));
    x /= nv;
    y /= nv;
    V(0, 0) = x;
    V(1, 0) = y;
    V(0, 1) = -std::conj(y);
    V(1, 1) = std::conj(x);
    return;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitian_part(S));
  w = es.eigenvalues();
  V = es.eigenvectors();
}

/// Eigenvalues only, ascending.
inline EigVec herm_eigenvalues(const Mat& S) {
  const int r = static_cast<int>(S.rows());
  EigVec w(r);
  if (r == 1) {
    w(0) = S(0, 0).real();
  } else if (r == 2) {
    const double a = S(0, 0).real(), d = S(1, 1).real();
    const double m = 0.5 * (a + d);
    const double rad = std::hypot(0.5 * (a - d), std::abs(0.5 * (S(0, 1) + std::conj(S(1, 0)))));
    w(0) = m - rad;
    w(1) = m + rad;
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> es(hermitian_part(S), Eigen::EigenvaluesOnly);
    w = es.eigenvalues();
  }
  return w;
}

/// f(S) for Hermitian S through its eigen-decomposition.
template <class Fn>
Mat hermitian_function(const Mat& S, Fn fn) {
  EigVec w;
  Mat V;
  herm_eig(S, w, V);
  Mat d = Mat::Zero(S.rows(), S.cols());
  for (int i = 0; i < S.rows(); ++i) d(i, i) = fn(w(i));
  return V * d * V.adjoint();
}

inline Mat mat_exp(const Mat& S) {
  return hermitian_function(S, [](double x) { return std::exp(x); });
}

inline void check_positive(const EigVec& w, const char* what) {
  const double lo = w(0), hi = w(w.size() - 1);
  if (!(lo > 0.0) || lo < kPositivityFloor * hi) {
    std::ostringstream os;
    os << what << " is not positive definite: eigenvalues " << lo << " .. " << hi;
    throw Error(ErrorKind::positivity, os.str());
  }
}

inline void require_positive(const Mat& P, const char* what) {
  EigVec w;
  Mat V;
  herm_eig(P, w, V);
  check_positive(w, what);
}

/// f(P) for positive Hermitian P, checking positivity on the same decomposition.
template <class Fn>
Mat positive_function(const Mat& P, const char* what, Fn fn) {
  EigVec w;
  Mat V;
  herm_eig(P, w, V);
  check_positive(w, what);
  Mat d = Mat::Zero(P.rows(), P.cols());
  for (int i = 0; i < P.rows(); ++i) d(i, i) = fn(w(i));
  return V * d * V.adjoint();
}

inline Mat mat_log(const Mat& P) {
  return positive_function(P, "log argument", [](double x) { return std::log(x); });
}

inline Mat mat_sqrt(const Mat& P) {
  return positive_function(P, "sqrt argument", [](double x) { return std::sqrt(x); });
}

inline Mat mat_invsqrt(const Mat& P) {
  return positive_function(P, "sqrt argument", [](double x) { return 1.0 / std::sqrt(x); });
}

/// P^{1/2} and P^{-1/2} from one decomposition.
inline void mat_sqrt_pair(const Mat& P, Mat& s, Mat& si) {
  EigVec w;
  Mat V;
  herm_eig(P, w, V);
  check_positive(w, "sqrt argument");
  Mat d = Mat::Zero(P.rows(), P.cols()), di = d;
  for (int i = 0; i < P.rows(); ++i) {
    d(i, i) = std::sqrt(w(i));
    di(i, i) = 1.0 / d(i, i);
  }
  s = V * d * V.adjoint();
  si = V * di * V.adjoint();
}

template <class Fn>
EndField map_points(const EndField& X, Fn fn) {
  EndField out(X.rank(), X.points());
  for (std::size_t p = 0; p < X.points(); ++p) out.at(p) = fn(X.mat(p), p);
  return out;
}

/// Pointwise exponential of a Hermitian endomorphism field.
inline EndField endo_exp(const EndField& S) {
  return map_points(S, [](const Mat& m, std::size_t) { return mat_exp(m); });
}
inline EndField endo_log(const EndField& P) {
  return map_points(P, [](const Mat& m, std::size_t) { return mat_log(m); });
}
inline EndField endo_sqrt(const EndField& P) {
  return map_points(P, [](const Mat& m, std::size_t) { return mat_sqrt(m); });
}

/// Functions of an H-self-adjoint field P: f(P) = H^{-1/2} f(H^{1/2} P H^{-1/2}) H^{1/2}.
inline EndField endo_log(const EndField& P, const EndField& H) {
  return map_points(P, [&](const Mat& m, std::size_t p) {
    Mat s, si;
    mat_sqrt_pair(H.mat(p), s, si);
    return Mat(si * mat_log(s * m * si) * s);
  });
}
inline EndField endo_sqrt(const EndField& P, const EndField& H) {
  return map_points(P, [&](const Mat& m, std::size_t p) {
    Mat s, si;
    mat_sqrt_pair(H.mat(p), s, si);
    return Mat(si * mat_sqrt(s * m * si) * s);
  });
}
inline EndField endo_exp(const EndField& S, const EndField& H) {
  return map_points(S, [&](const Mat& m, std::size_t p) {
    Mat s, si;
    mat_sqrt_pair(H.mat(p), s, si);
    return Mat(si * mat_exp(s * m * si) * s);
  });
}

inline EndField inverse(const EndField& X) {
  return map_points(X, [](const Mat& m, std::size_t) { return mat_inv(m); });
}

inline EndField adjoint(const EndField& X) {
  return map_points(X, [](const Mat& m, std::size_t) { return Mat(m.adjoint()); });
}

inline EndField operator*(const EndField& a, const EndField& b) { return coeff_mul(a, b); }
inline EndField operator+(EndField a, const EndField& b) { return a += b; }
inline EndField operator-(EndField a, const EndField& b) { return a -= b; }
inline EndField operator*(EndField a, cd s) { return a *= s; }
inline EndField operator*(cd s, EndField a) { return a *= s; }

/// |X|_H^2 = tr(X H^{-1} X^dagger H) for an endomorphism at one point.
inline double norm2_h(const Mat& X, const Mat& Hinv, const Mat& H) { return (X * Hinv * X.adjoint() * H).trace().real(); }

enum class NormKind { pointwise, sup, l2 };

/// Pointwise squared H-norms.
inline std::vector<double> endo_norm2_field(const EndField& X, const EndField& H) {
  std::vector<double> out(X.points());
  for (std::size_t p = 0; p < X.points(); ++p) {
    const Mat h = H.mat(p);
    out[p] = std::max(0.0, norm2_h(X.mat(p), mat_inv(h), h));
  }
  return out;
}

/// Sup or L2 norm of an endomorphism field measured with H.
inline double endo_norm(const EndField& X, const EndField& H, NormKind kind, const Geometry* geom = nullptr) {
  const auto n2 = endo_norm2_field(X, H);
  if (kind == NormKind::l2) {
    require(geom != nullptr, ErrorKind::precondition, "L2 norm needs a geometry");
    Field f(n2.begin(), n2.end());
    return std::sqrt(std::max(0.0, geom->integrate_real(f)));
  }
  double m = 0.0;
  for (double x : n2) m = std::max(m, x);
  return std::sqrt(m);
}

/// Smallest eigenvalue over all points, and the worst ratio lo/hi.
struct EigenRange {
  double min_eig = 0.0;
  double max_eig = 0.0;
  double worst_ratio = 0.0;
  std::size_t worst_point = 0;
};

inline EigenRange eigen_range(const EndField& H) {
  EigenRange r;
  r.min_eig = std::numeric_limits<double>::infinity();
  r.max_eig = -r.min_eig;
  r.worst_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < H.points(); ++p) {
    const EigVec w = herm_eigenvalues(H.mat(p));
    const double lo = w(0), hi = w(H.rank() - 1);
    r.min_eig = std::min(r.min_eig, lo);
    r.max_eig = std::max(r.max_eig, hi);
    const double ratio = hi > 0.0 ? lo / hi : -1.0;
    if (ratio < r.worst_ratio) {
      r.worst_ratio = ratio;
      r.worst_point = p;
    }
  }
  return r;
}

/// Throws unless H is Hermitian positive definite everywhere above the relative floor.
inline void require_metric(const EndField& H) {
  double asym = 0.0, scale = 0.0;
  for (std::size_t p = 0; p < H.points(); ++p) {
    asym = std::max(asym, (H.at(p) - H.at(p).adjoint()).cwiseAbs().maxCoeff());
    scale = std::max(scale, H.at(p).cwiseAbs().maxCoeff());
  }
  require(asym <= 1e-10 * std::max(scale, 1.0), ErrorKind::precondition, "metric is not Hermitian");
  const auto r = eigen_range(H);
  if (!(r.worst_ratio >= kPositivityFloor) || !(r.min_eig > 0.0)) {
    std::ostringstream os;
    os << "metric lost positivity: smallest eigenvalue ratio " << r.worst_ratio << " at grid point " << r.worst_point;
    throw Error(ErrorKind::positivity, os.str());
  }
}

inline bool is_constant(const Field& f) {
  for (std::size_t i = 1; i < f.size(); ++i)
    if (f[i] != f[0]) return false;
  return true;
}

/// Fourier transforms of every entry of an endomorphism field; constant entries are flagged
/// so that their derivatives are exact zeros.
class EndSpectrum {
 public:
  EndSpectrum(const EndField& X, const Grid& g) : grid_(&g), rank_(X.rank()), hat_(X.rank() * X.rank()), constant_(hat_.size()) {
    for (int i = 0; i < rank_; ++i)
      for (int j = 0; j < rank_; ++j) {
        const Field e = X.entry(i, j);
        const std::size_t q = i * rank_ + j;
        constant_[q] = is_constant(e);
        if (!constant_[q]) hat_[q] = g.fft(e);
      }
  }

  bool all_constant() const {
    for (bool c : constant_)
      if (!c) return false;
    return true;
  }

  /// Inverse transform after multiplying every entry by a symbol.
  EndField apply(const Field& symbol) const {
    EndField out(rank_, grid_->points());
    for (int i = 0; i < rank_; ++i)
      for (int j = 0; j < rank_; ++j) {
        const std::size_t q = i * rank_ + j;
        if (!constant_[q]) out.set_entry(i, j, grid_->apply_symbol(hat_[q], symbol));
      }
    return out;
  }

  EndField derivative(int a, bool bar) const { return apply(grid_->dsymbol(a, bar)); }

 private:
  const Grid* grid_;
  int rank_;
  std::vector<Field> hat_;
  std::vector<bool> constant_;
};

inline EndField derivative(const EndField& X, int a, bool bar, const Grid& g) {
  return EndSpectrum(X, g).derivative(a, bar);
}

}  // namespace hymlab
