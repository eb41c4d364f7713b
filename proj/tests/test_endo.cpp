#include "hymlab/endo.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hymlab;

namespace {
Mat random_positive(std::mt19937_64& rng, int r) {
  std::normal_distribution<double> nd;
  Mat A(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) A(i, j) = cd(nd(rng), nd(rng));
  return A * A.adjoint() + 0.1 * Mat::Identity(r, r);
}
}  // namespace

TEST(Endo, LogOfIdentity) {
  const EndField I = EndField::identity(2, 5);
  EXPECT_EQ(sup_abs(endo_log(I)), 0.0);
}

TEST(Endo, SqrtOfDiagonal) {
  EndField P(2, 3);
  for (std::size_t p = 0; p < 3; ++p) {
    P.at(p)(0, 0) = 4.0;
    P.at(p)(1, 1) = 9.0;
  }
  const EndField s = endo_sqrt(P);
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_NEAR(std::abs(s.at(p)(0, 0) - 2.0), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(s.at(p)(1, 1) - 3.0), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(s.at(p)(0, 1)), 0.0, 1e-14);
  }
}

TEST(Endo, ExpLogRoundTrip) {
  std::mt19937_64 rng(3);
  for (int r = 1; r <= 4; ++r) {
    EndField P(r, 20);
    for (std::size_t p = 0; p < 20; ++p) P.at(p) = random_positive(rng, r);
    const EndField back = endo_exp(endo_log(P));
    const EndField sq = endo_sqrt(P);
    for (std::size_t p = 0; p < 20; ++p) {
      EXPECT_LT((back.at(p) - P.at(p)).cwiseAbs().maxCoeff(), 1e-10 * P.at(p).cwiseAbs().maxCoeff());
      EXPECT_LT((sq.at(p) * sq.at(p) - P.at(p)).cwiseAbs().maxCoeff(), 1e-10 * P.at(p).cwiseAbs().maxCoeff());
    }
  }
}

TEST(Endo, HSelfAdjointFunctions) {
  std::mt19937_64 rng(5);
  EndField H(2, 10), P(2, 10);
  for (std::size_t p = 0; p < 10; ++p) {
    H.at(p) = random_positive(rng, 2);
    const Mat Q = random_positive(rng, 2);
    P.at(p) = H.mat(p).inverse() * Q;  // H-self-adjoint and positive
  }
  const EndField L = endo_log(P, H);
  const EndField back = endo_exp(L, H);
  const EndField s = endo_sqrt(P, H);
  for (std::size_t p = 0; p < 10; ++p) {
    EXPECT_LT((back.at(p) - P.at(p)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((s.at(p) * s.at(p) - P.at(p)).cwiseAbs().maxCoeff(), 1e-10);
    const Mat HL = H.mat(p) * L.mat(p);
    EXPECT_LT((HL - HL.adjoint()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Endo, RejectsNonPositive) {
  EndField P(2, 1);
  P.at(0)(0, 0) = 1.0;
  P.at(0)(1, 1) = -1.0;
  EXPECT_THROW(endo_log(P), Error);
  EXPECT_THROW(endo_sqrt(P), Error);
  EXPECT_THROW(require_metric(P), Error);
  P.at(0)(1, 1) = 1e-14;
  EXPECT_THROW(require_metric(P), Error);
}

TEST(Endo, HNormOfUnitaryConjugate) {
  std::mt19937_64 rng(9);
  EndField H(2, 1), X(2, 1);
  H.at(0) = random_positive(rng, 2);
  X.at(0) = random_positive(rng, 2);
  const double n1 = endo_norm(X, H, NormKind::sup);
  // |X|_H is the Hilbert-Schmidt norm of H^{1/2} X H^{-1/2}
  const Mat s = mat_sqrt(H.mat(0));
  const double hs = (s * X.mat(0) * s.inverse()).norm();
  EXPECT_NEAR(n1, hs, 1e-12 * hs);
}
