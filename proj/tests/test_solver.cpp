#include "hlab/fields.hpp"
#include "hlab/solver.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hlab;

namespace {

SolveOptions tight(double tol = 1e-10) {
  SolveOptions o;
  o.tol = tol;
  return o;
}

// Slope of the 1D laminate profile: constant flux c over the harmonic mean.
double sawtooth_slope(double a_cell) { return 1.6 / a_cell; }

}  // namespace

TEST(DirichletAffine, ConstantAnisotropicField) {
  GridSpec<2> g(2, 2);
  Mat<2> m;
  m << 2.0, 0.5, 0.5, 1.0;
  const auto a = make_constant<2>(g, m);
  const Vec<2> p(0.7, -0.3);
  const auto s = solve_dirichlet_affine(a, g.cube, p);
  const auto plane = affine_nodes<2>(g, p);
  for (Index i = 0; i < s.u.size(); ++i) EXPECT_NEAR(s.u[i], plane[i], 1e-7);
  // the isotropic reference operator is inverted exactly by the preconditioner
  const auto iso = solve_dirichlet_affine(make_constant<2>(g, 3.0 * Mat<2>::Identity()), g.cube, p);
  for (Index i = 0; i < iso.u.size(); ++i) EXPECT_NEAR(iso.u[i], plane[i], 1e-12);
  EXPECT_NEAR(s.energy, 0.5 * p.dot(m * p), 1e-12);
}

TEST(DirichletAffine, ZeroSlope) {
  GridSpec<2> g(2, 1);
  const auto a = sample_checkerboard<2>(g, 3, 1.0, 4.0, 0.5);
  const auto s = solve_dirichlet_affine(a, g.cube, Vec<2>::Zero());
  for (double v : s.u.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.energy, 0.0);
}

TEST(DirichletAffine, TangentialLaminateIsExactPlane) {
  GridSpec<2> g(1, 2);
  const auto a = make_laminate<2>(g, 1.0, 4.0, 1.0, 1);
  const auto s = solve_dirichlet_affine(a, g.cube, unit<2>(1), tight());
  const auto plane = affine_nodes<2>(g, unit<2>(1));
  for (Index i = 0; i < s.u.size(); ++i) EXPECT_NEAR(s.u[i], plane[i], 1e-9);
  EXPECT_NEAR(s.energy, 0.5 * 2.5, 1e-9);
}

TEST(DirichletAffine, NormalLaminateApproachesSawtoothInTheBulk) {
  // The affine boundary data on the faces parallel to the layers forces a
  // boundary layer; away from it the gradient matches the 1D profile.
  GridSpec<2> g(3, 2);
  const auto a = make_laminate<2>(g, 1.0, 4.0, 1.0, 1);
  const auto s = solve_dirichlet_affine(a, g.cube, unit<2>(0), tight());
  double worst = 0.0;
  for_each_cell<2>(g, false, [&](Index c, const IVec<2>& idx, const Corners<2>&) {
    const double y = g.cell_coord(1, idx[1]);
    const double x = g.cell_coord(0, idx[0]);
    if (std::abs(y) > 4.0 || std::abs(x) > 4.0) return;
    worst = std::max(worst, std::abs(s.gradient[c](0) - sawtooth_slope(a[c](0, 0))));
  });
  EXPECT_LT(worst, 0.05);
  // Energy cannot be below the periodic (lower) value of the same profile.
  EXPECT_GE(s.energy, 0.5 * 1.6 - 1e-9);
}

TEST(NeumannAffine, ConstantField) {
  GridSpec<2> g(2, 2);
  Mat<2> m;
  m << 3.0, -0.4, -0.4, 1.5;
  const auto a = make_constant<2>(g, m);
  const Vec<2> q(1.0, 2.0);
  const auto s = solve_neumann_affine(a, g.cube, q);
  const Vec<2> slope = m.inverse() * q;
  for (const auto& v : s.gradient.values) EXPECT_LT((v - slope).norm(), 1e-9);
  EXPECT_NEAR(s.energy, 0.5 * q.dot(m.inverse() * q), 1e-12);
  EXPECT_NEAR(field_mean(center_values(s.u)), 0.0, 1e-12);
}

TEST(NeumannAffine, ZeroFlux) {
  GridSpec<2> g(2, 1);
  const auto a = sample_checkerboard<2>(g, 4, 1.0, 4.0, 0.5);
  const auto s = solve_neumann_affine(a, g.cube, Vec<2>::Zero());
  for (double v : s.u.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.energy, 0.0);
}

TEST(NeumannAffine, LaminateConstantFlux) {
  GridSpec<2> g(2, 2);
  const auto a = make_laminate<2>(g, 1.0, 4.0, 1.0, 1);
  const auto s = solve_neumann_affine(a, g.cube, unit<2>(0), tight());
  for (const auto& f : s.flux.values) EXPECT_LT((f - unit<2>(0)).norm(), 1e-8);
  EXPECT_NEAR(s.energy, 0.5 / 1.6, 1e-9);
}

TEST(NeumannAffine, FluxAverageIsExact) {
  GridSpec<2> g(2, 3);
  const auto a = sample_checkerboard<2>(g, 8, 1.0, 4.0, 0.5);
  SolveOptions loose;
  loose.tol = 1e-3;
  const Vec<2> q(0.3, -1.1);
  const auto s = solve_neumann_affine(a, g.cube, q, loose);
  EXPECT_LT((field_mean(s.flux) - q).norm(), 1e-12);
}

TEST(DirichletAffine, GradientAverageIsExact) {
  GridSpec<2> g(2, 3);
  const auto a = sample_checkerboard<2>(g, 8, 1.0, 4.0, 0.5);
  SolveOptions loose;
  loose.tol = 1e-3;
  const Vec<2> p(-0.5, 2.0);
  const auto s = solve_dirichlet_affine(a, g.cube, p, loose);
  EXPECT_LT((field_mean(s.gradient) - p).norm(), 1e-12);
}

TEST(Solver, FenchelInequality) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd;
  const SolveOptions opts;
  for (int trial = 0; trial < 20; ++trial) {
    GridSpec<2> g(2, 1);
    const auto a = sample_checkerboard<2>(g, 100 + trial, 1.0, 4.0, 0.5);
    const Vec<2> p(nd(rng), nd(rng)), q(nd(rng), nd(rng));
    const double mu = solve_dirichlet_affine(a, g.cube, p, opts).energy;
    const double mu_star = solve_neumann_affine(a, g.cube, q, opts).energy;
    EXPECT_GE(mu + mu_star - p.dot(q), -10.0 * opts.tol);
  }
}

TEST(Solver, PreconditionersAgree) {
  GridSpec<2> g(2, 1);
  const auto a = sample_checkerboard<2>(g, 12, 1.0, 4.0, 0.5);
  double ref_d = 0.0, ref_n = 0.0;
  for (Preconditioner pc : {Preconditioner::spectral, Preconditioner::diagonal, Preconditioner::none}) {
    SolveOptions o = tight(1e-11);
    o.preconditioner = pc;
    const double mu = solve_dirichlet_affine(a, g.cube, Vec<2>(1.0, 0.5), o).energy;
    const double ms = solve_neumann_affine(a, g.cube, Vec<2>(1.0, 0.5), o).energy;
    if (pc == Preconditioner::spectral) {
      ref_d = mu;
      ref_n = ms;
    } else {
      EXPECT_NEAR(mu, ref_d, 1e-10);
      EXPECT_NEAR(ms, ref_n, 1e-10);
    }
  }
}

TEST(Solver, SpectralPreconditionerIsGridIndependent) {
  int prev = 0;
  for (int m : {2, 3, 4}) {
    GridSpec<2> g(m, 1);
    const auto a = sample_checkerboard<2>(g, 5, 1.0, 4.0, 0.5);
    const auto s = solve_dirichlet_affine(a, g.cube, unit<2>(0));
    EXPECT_LT(s.iterations, 40);
    if (prev > 0) {
      EXPECT_LE(s.iterations, prev + 8);
    }
    prev = s.iterations;
  }
}

TEST(Solver, NonConvergenceRaisesSolverError) {
  GridSpec<2> g(3, 1);
  const auto a = sample_checkerboard<2>(g, 5, 1.0, 4.0, 0.5);
  SolveOptions o;
  o.max_iter = 1;
  o.tol = 1e-12;
  o.preconditioner = Preconditioner::none;
  try {
    solve_dirichlet_affine(a, g.cube, unit<2>(0), o);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), 1e-12);
    EXPECT_EQ(e.iterations(), 1);
  }
}

TEST(Solver, InvalidOptionsRejected) {
  GridSpec<2> g(1, 1);
  const auto a = make_constant<2>(g, Mat<2>::Identity());
  SolveOptions o;
  o.tol = 0.5;
  EXPECT_THROW(solve_dirichlet_affine(a, g.cube, unit<2>(0), o), ArgumentError);
}

TEST(Solver, EnergyDecreasesMonotonically) {
  GridSpec<2> g(3, 1);
  const auto a = sample_checkerboard<2>(g, 31, 1.0, 4.0, 0.5);
  for (Preconditioner pc : {Preconditioner::spectral, Preconditioner::diagonal}) {
    SolveOptions o;
    o.record_history = true;
    o.preconditioner = pc;
    const auto s = solve_dirichlet_affine(a, g.cube, Vec<2>(1.0, -1.0), o);
    const auto& e = s.report.energy_history;
    ASSERT_GE(e.size(), 2u);
    for (std::size_t i = 1; i < e.size(); ++i) EXPECT_LE(e[i], e[i - 1] + 1e-12 * std::abs(e[i - 1]));
  }
}

TEST(PeriodicCell, ConstantField) {
  GridSpec<2> g(1, 3);
  const auto a = make_constant<2>(g, 2.0 * Mat<2>::Identity());
  const auto s = solve_periodic_cell(a, unit<2>(0));
  for (double v : s.u.values) EXPECT_NEAR(v, 0.0, 1e-14);
  EXPECT_NEAR(s.energy, 1.0, 1e-14);
}

TEST(PeriodicCell, LaminateSawtooth) {
  GridSpec<2> g(1, 4);
  const auto a = make_laminate<2>(g, 1.0, 4.0, 1.0, 1);
  const auto tang = solve_periodic_cell(a, unit<2>(1), tight());
  for (double v : tang.u.values) EXPECT_NEAR(v, 0.0, 1e-9);
  const auto norm = solve_periodic_cell(a, unit<2>(0), tight());
  for (Index c = 0; c < norm.gradient.size(); ++c) {
    EXPECT_NEAR(norm.gradient[c](0), sawtooth_slope(a[c](0, 0)), 1e-8);
    EXPECT_NEAR(norm.gradient[c](1), 0.0, 1e-8);
  }
  EXPECT_NEAR(field_mean(center_values(norm.u)), 0.0, 1e-12);
  EXPECT_NEAR(norm.energy, 0.5 * 1.6, 1e-9);
}

TEST(PeriodicCell, OddAndEvenTori) {
  // Even node counts carry hourglass modes in ker G; odd ones do not.
  for (int k : {1, 2}) {
    GridSpec<2> g(2, k);
    const auto a = sample_checkerboard<2>(g, 17, 1.0, 4.0, 0.5);
    const auto s = solve_periodic_cell(a, unit<2>(0));
    EXPECT_LE(s.residual, 1e-8);
    const auto div = discrete_divergence(s.flux, true);
    double worst = 0.0;
    for (double v : div.values) worst = std::max(worst, std::abs(v));
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(Forced, ZeroAndDivergenceFree) {
  GridSpec<2> g(2, 1);
  const auto chk = sample_checkerboard<2>(g, 2, 1.0, 4.0, 0.5);
  const auto s = solve_forced(chk, g.cube, zero_vector_field(g), ForcingBC::dirichlet_zero);
  for (double v : s.u.values) EXPECT_EQ(v, 0.0);
  const auto cst = make_constant<2>(g, Mat<2>::Identity());
  const VectorField<2> f(g, Vec<2>(0.4, -0.9));
  for (ForcingBC bc : {ForcingBC::dirichlet_zero, ForcingBC::periodic}) {
    const auto t = solve_forced(cst, g.cube, f, bc);
    for (double v : t.u.values) EXPECT_NEAR(v, 0.0, 1e-14);
  }
}

TEST(Forced, SubstitutionAgainstAffineDirichlet) {
  GridSpec<2> g(2, 2);
  const auto a = sample_checkerboard<2>(g, 19, 1.0, 4.0, 0.5);
  const Vec<2> e = unit<2>(0);
  const auto v = solve_dirichlet_affine(a, g.cube, e, tight());
  VectorField<2> f(g, Vec<2>::Zero());
  for (Index c = 0; c < f.size(); ++c) f[c] = a[c] * e;
  const auto psi = solve_forced(a, g.cube, f, ForcingBC::dirichlet_zero, tight());
  const auto plane = affine_nodes<2>(g, e);
  for (Index i = 0; i < psi.u.size(); ++i) EXPECT_NEAR(psi.u[i], v.u[i] - plane[i], 1e-8);
  for (Index c = 0; c < f.size(); ++c) f[c] = -f[c];
  const auto neg = solve_forced(a, g.cube, f, ForcingBC::dirichlet_zero, tight());
  for (Index i = 0; i < neg.u.size(); ++i) EXPECT_NEAR(neg.u[i], plane[i] - v.u[i], 1e-8);
}

TEST(PoissonPeriodic, ZeroRoundTripAndDipole) {
  GridSpec<2> g(2, 1);
  const auto zero = solve_poisson_periodic(ScalarField<2>(g, 0.0));
  for (double v : zero.values) EXPECT_EQ(v, 0.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  ScalarField<2> u0(g, 0.0);
  for (auto& v : u0.values) v = nd(rng);
  const double mean = field_mean(u0);
  for (auto& v : u0.values) v -= mean;
  ScalarField<2> rhs = periodic_laplacian(u0);
  for (auto& v : rhs.values) v = -v;
  const auto u = solve_poisson_periodic(rhs, tight(1e-12));
  for (Index i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], u0[i], 1e-9);

  // Dipole at cells (3,4) and (5,4): u(3+j, y) = -u(5-j, y).
  ScalarField<2> dip(g, 0.0);
  const long n = g.n();
  dip[flatten<2>({3, 4}, n)] = 1.0;
  dip[flatten<2>({5, 4}, n)] = -1.0;
  const auto ud = solve_poisson_periodic(dip, tight(1e-12));
  for (long j = 0; j < n; ++j)
    for (long y = 0; y < n; ++y)
      EXPECT_NEAR(ud[flatten_wrapped<2>({3 - j, y}, n)], -ud[flatten_wrapped<2>({5 + j, y}, n)], 1e-10);
}

TEST(PoissonPeriodic, RejectsNonzeroMean) {
  GridSpec<2> g(1, 1);
  EXPECT_THROW(solve_poisson_periodic(ScalarField<2>(g, 1.0)), ArgumentError);
}

TEST(Solver, ThreeDimensionalSmoke) {
  GridSpec<3> g(1, 2);
  const auto a = sample_checkerboard<3>(g, 1, 1.0, 4.0, 0.5);
  const Vec<3> p(1.0, 0.0, 0.0);
  const auto d = solve_dirichlet_affine(a, g.cube, p);
  const auto n = solve_neumann_affine(a, g.cube, p);
  EXPECT_LT((field_mean(d.gradient) - p).norm(), 1e-12);
  EXPECT_LT((field_mean(n.flux) - p).norm(), 1e-12);
  EXPECT_GE(d.energy + n.energy - p.dot(p), -1e-7);
  const auto c = solve_periodic_cell(a, p);
  EXPECT_LE(c.residual, 1e-8);
}
