#include "hlab/coarse.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace hlab;

namespace {

constexpr double kTol = 1e-8;

CoarseOptions tight() {
  CoarseOptions o;
  o.solve.tol = kTol;
  return o;
}

Mat<2> anisotropic() {
  Mat<2> m;
  m << 2.0, 0.5, 0.5, 1.5;
  return m;
}

}  // namespace

TEST(CoarseMatrices, ConstantFieldIsExact) {
  GridSpec<2> g(2, 2);
  const auto a = make_constant<2>(g, anisotropic());
  const auto r = coarse_matrices(a, g.cube, tight());
  EXPECT_LT((r.a - anisotropic()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((r.a_star - anisotropic()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(r.dirichlet.size(), 2u);
  EXPECT_EQ(r.neumann.size(), 2u);
}

TEST(CoarseMatrices, CheckerboardOrderingChain) {
  GridSpec<2> g(3, 1);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto a = sample_checkerboard<2>(g, seed, 1.0, 4.0, 0.5);
    const auto r = coarse_matrices(a, g.cube, tight());
    EXPECT_TRUE(ordering_margins(r, 1.0, 4.0).holds(10 * kTol)) << "seed " << seed;
    EXPECT_LT((r.a - r.a.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((r.a_star - r.a_star.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(CoarseMatrices, LaminateSandwichAndGapShrinks) {
  GridSpec<2> g(4, 2);
  const auto a = make_laminate<2>(g, 1.0, 4.0, 1.0, 1);
  Mat<2> abar = Mat<2>::Zero();
  abar(0, 0) = 1.6;
  abar(1, 1) = 2.5;
  double prev_gap = 1e300;
  for (int n = 1; n <= 4; ++n) {
    const TriadicCube<2> cube{n, {}};
    const auto r = coarse_matrices(a, cube, tight());
    EXPECT_TRUE(psd_leq<2>(r.a_star, abar, 10 * kTol)) << "n=" << n;
    EXPECT_TRUE(psd_leq<2>(abar, r.a, 10 * kTol)) << "n=" << n;
    const double gap = sym_norm<2>(r.a - r.a_star);
    EXPECT_LT(gap, prev_gap);
    prev_gap = gap;
  }
}

TEST(CoarseMatrices, SubcubeOutsideFieldRejected) {
  GridSpec<2> g(1, 1);
  const auto a = make_constant<2>(g, Mat<2>::Identity());
  EXPECT_THROW(coarse_matrices(a, TriadicCube<2>{2, {}}, tight()), ArgumentError);
}

TEST(JValue, BasicProperties) {
  GridSpec<2> g(2, 1);
  const auto a = sample_checkerboard<2>(g, 4, 1.0, 4.0, 0.5);
  const auto r = coarse_matrices(a, g.cube, tight());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec<2> p(nd(rng), nd(rng)), q(nd(rng), nd(rng));
    EXPECT_NEAR(J_value<2>(r, p, Vec<2>::Zero()), 0.5 * p.dot(r.a * p), 1e-14);
    const double t = nd(rng);
    EXPECT_NEAR(J_value<2>(r, t * p, t * q), t * t * J_value<2>(r, p, q), 1e-12 * (1.0 + t * t));
    EXPECT_GE(J_value<2>(r, p, q), -10 * kTol);
  }
  const auto c = coarse_matrices(make_constant<2>(g, anisotropic()), g.cube, tight());
  const Vec<2> p(0.3, -1.1);
  EXPECT_NEAR(J_value<2>(c, p, anisotropic() * p), 0.0, 1e-10);
}

TEST(JValue, MinimisedInQAtAStarP) {
  GridSpec<2> g(2, 1);
  const auto r = coarse_matrices(sample_checkerboard<2>(g, 8, 1.0, 4.0, 0.5), g.cube, tight());
  const Vec<2> p(1.0, 0.4);
  const Vec<2> centre = r.a_star * p;
  const double step = 0.05;
  Vec<2> best = Vec<2>::Zero();
  double best_val = 1e300;
  for (int i = -20; i <= 20; ++i)
    for (int j = -20; j <= 20; ++j) {
      const Vec<2> q = centre + step * Vec<2>(i, j) + Vec<2>(0.013, -0.007);
      const double v = J_value<2>(r, p, q);
      if (v < best_val) {
        best_val = v;
        best = q;
      }
    }
  EXPECT_LE((best - centre).cwiseAbs().maxCoeff(), step);
}

TEST(DualityDefect, ConstantAndCheckerboard) {
  GridSpec<2> g(3, 1);
  const auto c = coarse_matrices(make_constant<2>(g, anisotropic()), g.cube, tight());
  const auto dc = duality_defect(c, anisotropic());
  EXPECT_NEAR(dc.gap, 0.0, 1e-10);
  EXPECT_NEAR(dc.bound, 0.0, 1e-10);
  // Empirical calibration: gap <= 10 bound for both choices of b.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = coarse_matrices(sample_checkerboard<2>(g, seed, 1.0, 4.0, 0.5), g.cube, tight());
    const auto d1 = duality_defect(r, r.a_star);
    const auto d2 = duality_defect(r, r.a);
    EXPECT_LE(d1.gap, 10.0 * d1.bound) << seed;
    EXPECT_LE(d2.gap, 10.0 * d2.bound) << seed;
  }
}

TEST(Subadditivity, ConstantFieldHasZeroDefects) {
  GridSpec<2> g(2, 2);
  const auto rep = subadditivity_ledger(make_constant<2>(g, anisotropic()), g.cube, 1, tight());
  EXPECT_NEAR(rep.upper_defect, 0.0, 1e-9);
  EXPECT_NEAR(rep.lower_defect, 0.0, 1e-9);
}

TEST(Subadditivity, CheckerboardMatrixInequalities) {
  GridSpec<2> g(3, 1);
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto rep = subadditivity_ledger(sample_checkerboard<2>(g, seed, 1.0, 4.0, 0.5), g.cube, 1, tight());
    EXPECT_TRUE(rep.holds(10 * kTol)) << "seed " << seed << " upper " << rep.upper_defect << " lower " << rep.lower_defect;
  }
}

TEST(Subadditivity, LaminateTangentialEntryGluesExactly) {
  // For slopes parallel to the layers the affine function is the extremal on
  // every subcube, so that entry is additive; the normal entry carries the
  // boundary layer of each subcube and is only subadditive.
  GridSpec<2> g(3, 2);
  const auto rep = subadditivity_ledger(make_laminate<2>(g, 1.0, 4.0, 1.0, 1), g.cube, 1, tight());
  EXPECT_NEAR(rep.a_top(1, 1), rep.a_mean(1, 1), 1e-10);
  EXPECT_NEAR(rep.a_top(1, 1), 2.5, 1e-10);
  EXPECT_TRUE(rep.holds(10 * kTol));
}

TEST(Subadditivity, RejectsBadLevels) {
  GridSpec<2> g(2, 1);
  const auto a = make_constant<2>(g, Mat<2>::Identity());
  EXPECT_THROW(subadditivity_ledger(a, g.cube, 2, tight()), ArgumentError);
  EXPECT_THROW(subadditivity_ledger(a, g.cube, -1, tight()), ArgumentError);
}

TEST(MultiscaleE, ConstantAndFarReference) {
  GridSpec<2> g(2, 1);
  EXPECT_NEAR(multiscale_E(make_constant<2>(g, anisotropic()), g.cube, anisotropic(), tight()), 0.0, 1e-9);
  const auto a = sample_checkerboard<2>(g, 2, 1.0, 4.0, 0.5);
  const double far = multiscale_E(a, g.cube, Mat<2>(10.0 * Mat<2>::Identity()), tight());
  // J(U, e, 10e) >= 1/2 |10e - a*e|^2 / Lambda-type bound, with a* <= 4.
  EXPECT_GT(far, 0.5 * 36.0 / 4.0);
}

TEST(SpatialAverages, CheckerboardIdentities) {
  GridSpec<2> g(2, 2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = coarse_matrices(sample_checkerboard<2>(g, seed, 1.0, 4.0, 0.5), g.cube, tight());
    const auto res = spatial_average_identities(r);
    EXPECT_LE(res.exact(), 1e-12);
    EXPECT_LE(res.approximate(), 10 * kTol);
  }
  CoarseOptions loose;
  loose.solve.tol = 1e-3;
  const auto r = coarse_matrices(sample_checkerboard<2>(g, 9, 1.0, 4.0, 0.5), g.cube, loose);
  EXPECT_LE(spatial_average_identities(r).exact(), 1e-12);
}

TEST(Cascade, LevelsAndCsv) {
  GridSpec<2> g(2, 1);
  const auto a = sample_checkerboard<2>(g, 5, 1.0, 4.0, 0.5);
  CoarseOptions o = tight();
  o.jobs = 2;
  const auto rec = coarse_cascade(a, g.cube, Mat<2>(2.0 * Mat<2>::Identity()), o);
  ASSERT_EQ(rec.levels.size(), 3u);
  EXPECT_EQ(rec.levels[0].count, 81u);
  EXPECT_EQ(rec.levels[2].count, 1u);
  EXPECT_NEAR(rec.E, multiscale_E(a, g.cube, Mat<2>(2.0 * Mat<2>::Identity()), tight()), 1e-12);
  for (const auto& lv : rec.levels) {
    EXPECT_TRUE(lv.mean.allFinite());
    EXPECT_GE(lv.upper_defect, -10 * kTol);
    EXPECT_GE(lv.lower_defect, -10 * kTol);
  }
  std::ostringstream os;
  rec.write_csv(os);
  const std::string csv = os.str();
  EXPECT_EQ(csv.rfind("level,i,j,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 4);
}
