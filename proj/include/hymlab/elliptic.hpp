#pragma once

#include "hymlab/core.hpp"

#include <functional>

namespace hymlab {

struct SolverOptions {
  double rtol = 1e-13;
  /// Absolute floor on the root-mean-square residual.
  double atol = 0.0;
  int max_iter = 400;
  int restart = 50;
};

struct SolveResult {
  Field x;
  std::vector<double> history;
  bool converged = false;
};

inline cd dot(const Field& a, const Field& b) {
  Field prod(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) prod[i] = std::conj(a[i]) * b[i];
  return pairwise_sum(prod);
}

inline double norm2(const Field& a) { return std::sqrt(std::max(0.0, dot(a, a).real())); }

using LinearMap = std::function<Field(const Field&)>;

/// Restarted GMRES with right preconditioning. Stops when |b - A x| <= rtol * |b|.
inline SolveResult gmres(const LinearMap& apply, const LinearMap& precond, const Field& b, Field x0,
                         const SolverOptions& opts = {}) {
  const std::size_t N = b.size();
  SolveResult res;
  res.x = x0.empty() ? Field(N, 0.0) : std::move(x0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    res.x.assign(N, 0.0);
    res.history.push_back(0.0);
    res.converged = true;
    return res;
  }
  const int m = opts.restart;
  const double floor = std::max(opts.rtol * bnorm, opts.atol * std::sqrt(double(N)));
  int total = 0;
  while (total < opts.max_iter) {
    Field r = apply(res.x);
    for (std::size_t i = 0; i < N; ++i) r[i] = b[i] - r[i];
    double beta = norm2(r);
    res.history.push_back(beta / bnorm);
    if (beta <= floor) {
      res.converged = true;
      return res;
    }
    std::vector<Field> V(1, r);
    for (auto& v : V[0]) v /= beta;
    std::vector<Field> Z;
    Eigen::MatrixXcd Hh = Eigen::MatrixXcd::Zero(m + 1, m);
    std::vector<cd> cs(m), sn(m), g(m + 1, 0.0);
    g[0] = beta;
    int k = 0;
    for (; k < m && total < opts.max_iter; ++k, ++total) {
      Z.push_back(precond(V[k]));
      Field w = apply(Z[k]);
      for (int i = 0; i <= k; ++i) {
        const cd h = dot(V[i], w);
        Hh(i, k) = h;
        for (std::size_t j = 0; j < N; ++j) w[j] -= h * V[i][j];
      }
      const double hn = norm2(w);
      Hh(k + 1, k) = hn;
      for (int i = 0; i < k; ++i) {
        const cd t = std::conj(cs[i]) * Hh(i, k) + std::conj(sn[i]) * Hh(i + 1, k);
        Hh(i + 1, k) = -sn[i] * Hh(i, k) + cs[i] * Hh(i + 1, k);
        Hh(i, k) = t;
      }
      const double den = std::hypot(std::abs(Hh(k, k)), hn);
      if (den == 0.0) {
        cs[k] = 1.0;
        sn[k] = 0.0;
      } else {
        cs[k] = Hh(k, k) / den;
        sn[k] = hn / den;
      }
      Hh(k, k) = den;
      Hh(k + 1, k) = 0.0;
      g[k + 1] = -sn[k] * g[k];
      g[k] = std::conj(cs[k]) * g[k];
      const double rel = std::abs(g[k + 1]) / bnorm;
      res.history.push_back(rel);
      if (hn == 0.0 || rel * bnorm <= floor) {
        ++k;
        ++total;
        break;
      }
      Field v(w);
      for (auto& x : v) x /= hn;
      V.push_back(std::move(v));
    }
    Eigen::VectorXcd y(k);
    for (int i = k - 1; i >= 0; --i) {
      cd s = g[i];
      for (int j = i + 1; j < k; ++j) s -= Hh(i, j) * y(j);
      y(i) = s / Hh(i, i);
    }
    for (int i = 0; i < k; ++i)
      for (std::size_t j = 0; j < N; ++j) res.x[j] += y(i) * Z[i][j];
  }
  Field r = apply(res.x);
  double rn = 0.0;
  for (std::size_t i = 0; i < N; ++i) r[i] = b[i] - r[i];
  rn = norm2(r) / bnorm;
  res.history.push_back(rn);
  res.converged = rn * bnorm <= floor;
  return res;
}

}  // namespace hymlab
