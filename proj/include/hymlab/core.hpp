#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hymlab {

using cd = std::complex<double>;
inline constexpr cd kI{0.0, 1.0};
inline constexpr double kPi = std::numbers::pi;

/// Largest bundle rank supported by the pointwise matrix kernels.
inline constexpr int kMaxRank = 4;

/// Small pointwise matrix. Storage is inline, no heap traffic in hot loops.
using Mat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor, kMaxRank, kMaxRank>;
using MatMap = Eigen::Map<Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Inverse with closed forms for sizes 1 and 2.
inline Mat mat_inv(const Mat& m) {
  if (m.rows() == 1) return Mat::Constant(1, 1, 1.0 / m(0, 0));
  if (m.rows() == 2) {
    const cd d = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    Mat o(2, 2);
    o(0, 0) = m(1, 1) / d;
    o(0, 1) = -m(0, 1) / d;
    o(1, 0) = -m(1, 0) / d;
    o(1, 1) = m(0, 0) / d;
    return o;
  }
  return m.inverse();
}

inline cd mat_det(const Mat& m) {
  if (m.rows() == 1) return m(0, 0);
  if (m.rows() == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return m.determinant();
}

/// Complex scalar sampled on every grid point (row-major, last axis fastest).
using Field = std::vector<cd>;

/// Failure categories surfaced to the CLI as structured errors.
enum class ErrorKind {
  precondition,
  positivity,
  integrability,
  obstruction,
  convergence,
  mismatch,
  config,
  io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::positivity: return "positivity";
    case ErrorKind::integrability: return "integrability";
    case ErrorKind::obstruction: return "obstruction";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::mismatch: return "mismatch";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::vector<double> history = {})
      : std::runtime_error(what), kind_(kind), history_(std::move(history)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Residual history for solver failures, empty otherwise.
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  ErrorKind kind_;
  std::vector<double> history_;
};

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

/// Deterministic pairwise (tree) summation.
template <class T>
T pairwise_sum(std::span<const T> v) {
  if (v.empty()) return T{};
  if (v.size() <= 8) {
    T s{};
    for (const auto& x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

template <class T>
T pairwise_sum(const std::vector<T>& v) {
  return pairwise_sum(std::span<const T>(v));
}

/// Endomorphism field: one rank x rank matrix per grid point, packed row-major.
class EndField {
 public:
  EndField() = default;
  EndField(int rank, std::size_t points) : rank_(rank), points_(points), data_(points * rank * rank) {}

  static EndField identity(int rank, std::size_t points) {
    EndField e(rank, points);
    for (std::size_t p = 0; p < points; ++p)
      for (int i = 0; i < rank; ++i) e.data_[p * rank * rank + i * rank + i] = 1.0;
    return e;
  }

  int rank() const noexcept { return rank_; }
  std::size_t points() const noexcept { return points_; }
  bool empty() const noexcept { return data_.empty(); }

  MatMap at(std::size_t p) { return MatMap(data_.data() + p * rank_ * rank_, rank_, rank_); }
  ConstMatMap at(std::size_t p) const { return ConstMatMap(data_.data() + p * rank_ * rank_, rank_, rank_); }

  Mat mat(std::size_t p) const { return Mat(at(p)); }
  void set(std::size_t p, const Mat& m) { at(p) = m; }

  /// Copy of entry (i,j) as a scalar field.
  Field entry(int i, int j) const {
    Field f(points_);
    for (std::size_t p = 0; p < points_; ++p) f[p] = data_[p * rank_ * rank_ + i * rank_ + j];
    return f;
  }
  void set_entry(int i, int j, const Field& f) {
    for (std::size_t p = 0; p < points_; ++p) data_[p * rank_ * rank_ + i * rank_ + j] = f[p];
  }

  std::vector<cd>& raw() noexcept { return data_; }
  const std::vector<cd>& raw() const noexcept { return data_; }

  EndField& operator+=(const EndField& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  EndField& operator-=(const EndField& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  EndField& operator*=(cd s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

 private:
  int rank_ = 0;
  std::size_t points_ = 0;
  std::vector<cd> data_;
};

inline double sup_abs(const Field& f) {
  double m = 0.0;
  for (const auto& x : f) m = std::max(m, std::abs(x));
  return m;
}

inline double sup_abs(const EndField& f) {
  double m = 0.0;
  for (const auto& x : f.raw()) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace hymlab
