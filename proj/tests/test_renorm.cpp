#include "hlab/renorm.hpp"

#include <gtest/gtest.h>

using namespace hlab;

namespace {

constexpr double kTol = 1e-8;

SolveOptions tight() {
  SolveOptions o;
  o.tol = kTol;
  return o;
}

CorrectorOptions periodic_only() {
  CorrectorOptions o;
  o.solve = tight();
  o.flux_correctors = false;
  return o;
}

ScalarField<2> delta_field(const GridSpec<2>& g) {
  ScalarField<2> f(g, 0.0);
  f[flatten<2>(cell_containing<2>(g, Vec<2>::Zero()), g.n())] = 1.0;
  return f;
}

}  // namespace

TEST(HeatKernel, MassTruncationAndPositivity) {
  for (double r : {1.0, 2.5, 8.0}) {
    const HeatKernel1D k(r, 1.0, 2);
    double sum = 0.0;
    for (double w : k.weights) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_LT(k.truncation_tail, 1e-8);
    EXPECT_GE(static_cast<double>(k.radius), 6.0 * std::sqrt(2.0) * r);
  }
  EXPECT_THROW(HeatKernel1D(0.5, 1.0, 2), ArgumentError);
}

TEST(HeatConvolve, ConstantAndDelta) {
  GridSpec<2> g(3, 1);
  ConvolutionReport rep;
  const auto c = heat_convolve(ScalarField<2>(g, 2.5), 2.0, true, &rep);
  for (double v : c.values) EXPECT_NEAR(v, 2.5, 1e-12);
  EXPECT_EQ(rep.max_boundary_loss, 0.0);
  const auto d = heat_convolve(delta_field(g), 2.0, true);
  double sum = 0.0;
  for (double v : d.values) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  // peak of the sampled Gaussian, normalised as a probability on cells
  const double peak = d[flatten<2>(cell_containing<2>(g, Vec<2>::Zero()), g.n())];
  EXPECT_NEAR(peak, 1.0 / (4.0 * M_PI * 4.0), 1e-6);
  const auto z = heat_convolve(ScalarField<2>(g, 1.0), 1.0, false, &rep);
  EXPECT_GT(rep.max_boundary_loss, 0.5);
  EXPECT_NEAR(z[flatten<2>(cell_containing<2>(g, Vec<2>::Zero()), g.n())], 1.0, 1e-12);
  EXPECT_THROW(heat_convolve(ScalarField<2>(g, 1.0), 0.5, true), ArgumentError);
}

TEST(HeatConvolve, Semigroup) {
  GridSpec<2> g(5, 1);
  const auto once = heat_convolve(heat_convolve(delta_field(g), 4.0, true), 4.0, true);
  const auto direct = heat_convolve(delta_field(g), std::sqrt(32.0), true);
  double diff = 0.0, norm = 0.0;
  for (Index i = 0; i < once.size(); ++i) {
    diff += std::pow(once[i] - direct[i], 2);
    norm += direct[i] * direct[i];
  }
  EXPECT_LE(std::sqrt(diff / norm), 1e-6);
}

TEST(HeatConvolve, VectorAndNodeFields) {
  GridSpec<2> g(2, 2);
  const auto v = heat_convolve(VectorField<2>(g, Vec<2>(1.0, -2.0)), 1.0, true);
  for (const auto& x : v.values) EXPECT_LT((x - Vec<2>(1.0, -2.0)).norm(), 1e-12);
  NodeField<2> n(g, true, 3.0);
  for (double x : heat_convolve(n, 1.0).values) EXPECT_NEAR(x, 3.0, 1e-12);
}

TEST(CoarseGrainedB, ConstantFieldIsExact) {
  GridSpec<2> g(3, 1);
  Mat<2> m;
  m << 2.0, 0.3, 0.3, 1.2;
  const auto set = periodic_homogenized_matrix(make_constant<2>(g, m), periodic_only());
  const auto hc = coarse_grained_b(set, 2.0, {cell_containing<2>(g, Vec<2>::Zero()), IVec<2>{0, 5}});
  for (const auto& s : hc.samples) {
    EXPECT_LT((s.b - m).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_FALSE(s.degenerate);
    EXPECT_EQ(s.chi, 1.0);
  }
  EXPECT_THROW(coarse_grained_b(set, 3.0, {IVec<2>{0, 0}}), ArgumentError);
}

TEST(CoarseGrainedB, LaminateAveragesOut) {
  GridSpec<2> g(4, 2);
  const auto set = periodic_homogenized_matrix(make_laminate<2>(g, 1.0, 4.0, 1.0, 1), periodic_only());
  Mat<2> abar = Mat<2>::Zero();
  abar(0, 0) = 1.6;
  abar(1, 1) = 2.5;
  for (double r : {3.0, 6.0}) {
    const auto hc = coarse_grained_b(set, r, {cell_containing<2>(g, Vec<2>::Zero()), IVec<2>{7, 100}});
    for (const auto& s : hc.samples) {
      EXPECT_LE((s.b - abar).norm() / abar.norm(), 0.01);
      // b G = Q on the span of corrected planes
      EXPECT_LT((s.b * s.G - s.Q).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(CoarseGrainedB, CheckerboardDistanceShrinksWithRadius) {
  GridSpec<2> g(5, 1);
  std::vector<double> radii{4, 8, 16};
  std::vector<double> mean(radii.size(), 0.0);
  const std::size_t seeds = 32;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto a = sample_checkerboard<2>(g, member_seed(2024, s), 1.0, 4.0, 0.5);
    const auto set = periodic_homogenized_matrix(a, periodic_only());
    for (std::size_t i = 0; i < radii.size(); ++i) {
      const auto hc = coarse_grained_b(set, radii[i], {cell_containing<2>(g, Vec<2>::Zero())});
      mean[i] += (hc.samples.front().blended - set.abar).norm() / static_cast<double>(seeds);
      EXPECT_TRUE(hc.samples.front().within_envelope);
    }
  }
  EXPECT_GE(mean[0], mean[1]);
  EXPECT_GE(mean[1], mean[2]);
}

TEST(ChiCutoff, Shape) {
  EXPECT_EQ(chi_cutoff(0.0, 4.0), 1.0);
  EXPECT_EQ(chi_cutoff(2.0, 4.0), 1.0);
  EXPECT_EQ(chi_cutoff(4.0, 4.0), 1.0);
  EXPECT_DOUBLE_EQ(chi_cutoff(6.0, 4.0), 0.5);
  EXPECT_EQ(chi_cutoff(100.0, 4.0), 0.0);
}

TEST(MinimalScaleProxy, ConstantAndCheckerboard) {
  GridSpec<2> g(3, 1);
  CoarseOptions co;
  co.solve = tight();
  const auto c = minimal_scale_proxy(make_constant<2>(g, 2.0 * Mat<2>::Identity()), g.cube, 0.2, co);
  EXPECT_EQ(c.level, 0);
  EXPECT_EQ(c.scale, 1.0);
  int finite = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = minimal_scale_proxy(sample_checkerboard<2>(g, seed, 1.0, 4.0, 0.5), g.cube, 0.2, co);
    ASSERT_EQ(p.max_gap.size(), 4u);
    EXPECT_EQ(p.max_gap[0], 0.0);  // single cells carry no duality gap
    if (p.finite() && p.scale <= 243.0) ++finite;
  }
  EXPECT_GE(finite, 9);
  EXPECT_THROW(minimal_scale_proxy(make_constant<2>(g, Mat<2>::Identity()), g.cube, 0.0, co), ArgumentError);
}

TEST(MinimalScaleProxy, LaminateIsSetByTheBoundaryLayer) {
  GridSpec<2> g(3, 2);
  CoarseOptions co;
  co.solve = tight();
  const auto p = minimal_scale_proxy(make_laminate<2>(g, 1.0, 4.0, 1.0, 1), g.cube, 0.2, co);
  ASSERT_TRUE(p.finite());
  // every triadic window holds whole periods, yet the gap at small levels is
  // the Dirichlet boundary layer, which shrinks with the window
  for (std::size_t n = 1; n < p.max_gap.size(); ++n) EXPECT_LT(p.max_gap[n], p.max_gap[n - 1]);
}

TEST(FluctuationCascade, ConstantFieldHasNoVariance) {
  FieldSpec spec;
  spec.kind = "constant";
  spec.value = 2.0;
  CascadeOptions opt;
  opt.M = 3;
  opt.radii = {1.0, 1.5, 2.0};
  opt.levels = {1, 2, 3};
  opt.seeds = 4;
  opt.bootstrap = 0;
  opt.solve = tight();
  const auto t = fluctuation_cascade<2>(spec, opt);
  for (const auto& v : t.variance_b) EXPECT_LT(v.cwiseAbs().maxCoeff(), 1e-24);
  for (double v : t.variance_a) EXPECT_LT(v, 1e-24);
  EXPECT_EQ(t.seeds.size(), 4u);
}

TEST(FluctuationCascade, ReproducibleAcrossJobs) {
  FieldSpec spec;
  CascadeOptions opt;
  opt.M = 3;
  opt.radii = {1.0, 2.0};
  opt.levels = {1, 2};
  opt.seeds = 6;
  opt.bootstrap = 0;
  opt.solve = tight();
  const auto one = fluctuation_cascade<2>(spec, opt);
  opt.jobs = 3;
  const auto three = fluctuation_cascade<2>(spec, opt);
  EXPECT_EQ(one.samples_b, three.samples_b);
  EXPECT_EQ(one.samples_a, three.samples_a);
}

TEST(TorusShift, SmallForLargeTorus) {
  FieldSpec spec;
  const double shift = torus_shift<2>(spec, 3, 1, 2.0, 99, tight());
  EXPECT_TRUE(std::isfinite(shift));
  EXPECT_LT(shift, 0.5);
}
