#include "hymlab/hermitian.hpp"

#include <gtest/gtest.h>

using namespace hymlab;

namespace {
GridPtr grid8() { return make_grid({8, 8, 8, 8}, {1, 1, 1, 1}); }
}  // namespace

TEST(Bundle, FlatLineZeroIsTrivial) {
  const auto g = grid8();
  const auto f = flat_line(g, {0, 0, 0, 0});
  const auto t = trivial_bundle(g, 1);
  EXPECT_EQ(f.flux, t.flux);
  EXPECT_EQ(f.flat, t.flat);
  EXPECT_FALSE(f.has_perturbation());
}

TEST(Bundle, FluxGuard) {
  const auto g = grid8();
  EXPECT_NO_THROW(flux_line(g, {2, -2}));
  EXPECT_THROW(flux_line(g, {3, 0}), Error);
  const auto g16 = make_grid({16, 16, 16, 16}, {1, 1, 1, 1});
  EXPECT_NO_THROW(flux_line(g16, {3, -3}));
  EXPECT_THROW(flux_line(g16, {0, 5}), Error);
}

TEST(Bundle, DualOfFlatLine) {
  const auto g = grid8();
  const std::vector<double> th{0.3, -1.1, 2.0, 0.7};
  const auto d = dual(flat_line(g, th));
  const auto m = flat_line(g, {-0.3, 1.1, -2.0, -0.7});
  for (int a = 0; a < 2; ++a) EXPECT_NEAR(std::abs(d.flat[0][a] - m.flat[0][a]), 0.0, 1e-15);
  EXPECT_EQ(dual(flux_line(g, {1, -2})).flux[0], (std::vector<int>{-1, 2}));
}

TEST(Bundle, Functoriality) {
  const auto g = grid8();
  const auto L1 = flux_line(g, {1, 0});
  const auto L2 = flux_line(g, {0, 2});
  EXPECT_EQ(tensor(L1, L2).flux[0], (std::vector<int>{1, 2}));
  EXPECT_EQ(det(L1).flux[0], L1.flux[0]);
  const auto s = direct_sum(L1, L2);
  EXPECT_EQ(s.rank, 2);
  EXPECT_EQ(det(s).flux[0], tensor(det(L1), det(L2)).flux[0]);
  const auto e = extension_bundle(g, constant_class(*g, {0.5, 0.0}));
  const auto de = det(e);
  EXPECT_EQ(de.rank, 1);
  EXPECT_EQ(de.flux[0], (std::vector<int>{0, 0}));
  EXPECT_EQ(sup_abs(de.a[0]), 0.0);
  const auto te = tensor(e, L1);
  EXPECT_EQ(te.rank, 2);
  EXPECT_EQ(te.flux[1], (std::vector<int>{1, 0}));
  EXPECT_NEAR(integrability_residual(tensor(e, e)), 0.0, 1e-12);
  const auto other = make_grid({8, 8, 8, 8}, {1, 1, 1, 2});
  EXPECT_THROW(tensor(L1, flux_line(other, {1, 0})), Error);
}

TEST(Bundle, ExtensionZeroIsTrivial) {
  const auto g = grid8();
  const auto e = extension_bundle(g, constant_class(*g, {0.0, 0.0}));
  EXPECT_EQ(e.rank, 2);
  EXPECT_EQ(sup_abs(e.a[0]), 0.0);
  EXPECT_EQ(sup_abs(e.a[1]), 0.0);
}

TEST(Bundle, IntegrabilityResiduals) {
  const auto g = grid8();
  EXPECT_EQ(integrability_residual(trivial_bundle(g, 2)), 0.0);
  EXPECT_LT(integrability_residual(extension_bundle(g, constant_class(*g, {0.5, cd(0.2, 0.1)}))), 1e-12);

  Field u(g->points());
  for (std::size_t p = 0; p < g->points(); ++p) u[p] = std::sin(2 * kPi * g->coord(p, 1)) * std::cos(2 * kPi * g->coord(p, 2));
  EXPECT_LT(integrability_residual(extension_bundle(g, exact_class(*g, u))), 1e-10);

  std::vector<EndField> a;
  for (int k = 0; k < 2; ++k) {
    EndField ak(2, g->points());
    for (std::size_t p = 0; p < g->points(); ++p) {
      ak.at(p)(0, 0) = 0.3 * std::sin(2 * kPi * g->coord(p, 2 * (1 - k)));
      ak.at(p)(1, 0) = 0.2;
    }
    a.push_back(ak);
  }
  const auto bad = with_perturbation(trivial_bundle(g, 2), a);
  EXPECT_GT(integrability_residual(bad), 0.01);
}

TEST(Bundle, NonClosedClassRejected) {
  const auto g = grid8();
  ExtensionClass e;
  Field b1(g->points());
  for (std::size_t p = 0; p < g->points(); ++p) b1[p] = std::sin(2 * kPi * g->coord(p, 2));
  e.beta = {b1, Field(g->points(), 0.0)};
  EXPECT_THROW(extension_bundle(g, e), Error);
}

TEST(Bundle, PerturbationRespectsFlux) {
  const auto g = grid8();
  const auto s = direct_sum(flux_line(g, {1, 0}), flux_line(g, {0, 0}));
  std::vector<EndField> a(2, EndField(2, g->points()));
  a[0].set_entry(0, 1, Field(g->points(), 1.0));
  EXPECT_THROW(with_perturbation(s, a), Error);
}
