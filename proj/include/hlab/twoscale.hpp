#pragma once

// Two-scale expansion w^eps = u + eps sum_k d_k u phi_k(./eps) and the
// homogenization errors of the Dirichlet problem.
//
// Macro coordinates x live in eps box_M = box_0 when the microscopic field
// lives on box_M with eps = 3^{-M}; all grid work is done in microscopic
// coordinates y = x / eps.

#include "hlab/common.hpp"
#include "hlab/correctors.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace hlab {

/// Smooth macro function given by value, gradient and Hessian callbacks.
template <int D>
struct MacroFunction {
  std::string name;
  std::function<double(const Vec<D>&)> value;
  std::function<Vec<D>(const Vec<D>&)> gradient;
  std::function<Mat<D>(const Vec<D>&)> hessian;
};

/// u(x) = c + p.x
template <int D>
MacroFunction<D> affine_macro(const Vec<D>& p, double c = 0.0) {
  MacroFunction<D> u;
  u.name = "affine";
  u.value = [p, c](const Vec<D>& x) { return c + p.dot(x); };
  u.gradient = [p](const Vec<D>&) { return p; };
  u.hessian = [](const Vec<D>&) { return Mat<D>(Mat<D>::Zero()); };
  return u;
}

/// u(x) = 1/2 x.Bx with B = sym(B0) - tr(abar sym B0)/d abar^{-1}, so that
/// tr(abar B) = 0 and u is abar-harmonic.
template <int D>
MacroFunction<D> harmonic_quadratic(const Mat<D>& abar, const Mat<D>& B0) {
  const Mat<D> S = 0.5 * (B0 + B0.transpose());
  const Mat<D> inv = abar.inverse();
  const Mat<D> B = S - ((abar * S).trace() / D) * Mat<D>(0.5 * (inv + inv.transpose()));
  MacroFunction<D> u;
  u.name = "harmonic_quadratic";
  u.value = [B](const Vec<D>& x) { return 0.5 * x.dot(B * x); };
  u.gradient = [B](const Vec<D>& x) { return Vec<D>(B * x); };
  u.hessian = [B](const Vec<D>&) { return B; };
  return u;
}

/// Repeats the field on box_p to fill box_M (p <= M). Both cubes are centred
/// at the origin, so node index i on box_M sits over node i mod 3^p k.
template <int D>
CoefficientField<D> periodic_extension(const CoefficientField<D>& cell, int M) {
  const GridSpec<D>& pg = cell.grid();
  require(pg.cube.center == IVec<D>{}, "periodic_extension: period cell must be centred at the origin");
  if (M < pg.m()) throw ArgumentError("periodic_extension: target level below the period level");
  const GridSpec<D> g(M, pg.k);
  CoefficientField<D> out;
  out.a = MatrixField<D>(g, Mat<D>::Identity());
  const long np = pg.n();
  IVec<D> c{};
  Index flat = 0;
  do {
    IVec<D> src{};
    for (int a = 0; a < D; ++a) src[a] = floor_mod(c[a], np);
    out.a[flat++] = cell[flatten<D>(src, np)];
  } while (advance<D>(c, g.n()));
  out.lambda = cell.lambda;
  out.Lambda = cell.Lambda;
  out.provenance = cell.provenance;
  out.provenance["periodic_extension"] = {{"period_level", pg.m()}, {"level", M}};
  return out;
}

namespace detail {

template <int D>
int micro_level_for(double eps) {
  require(eps > 0.0 && eps <= 1.0, "eps must lie in (0, 1]");
  const int M = static_cast<int>(std::lround(-std::log(eps) / std::log(3.0)));
  if (std::abs(eps * static_cast<double>(ipow3(M)) - 1.0) > 1e-9) throw ArgumentError("eps must be a power 3^{-M}");
  return M;
}

template <int D>
void check_periodic_set(const CorrectorSet<D>& set, const GridSpec<D>& micro) {
  if (set.mode != CorrectorMode::periodic) throw ArgumentError("two-scale expansion needs periodic correctors");
  if (set.grid.k != micro.k) throw ArgumentError("corrector resolution differs from the microscopic grid");
  if (set.grid.m() > micro.m()) throw ArgumentError("corrector period exceeds the microscopic cube");
  if (set.grid.cube.center != IVec<D>{} || micro.cube.center != IVec<D>{})
    throw ArgumentError("two-scale grids must be centred at the origin");
}

}  // namespace detail

/// w^eps on the node grid of box_M (eps = 3^{-M}), in macro units: node y
/// carries u(eps y) + eps sum_k d_k u(eps y) phi_k(y mod period).
template <int D>
NodeField<D> build_two_scale(const MacroFunction<D>& u, const CorrectorSet<D>& set, double eps) {
  const int M = detail::micro_level_for<D>(eps);
  const GridSpec<D> micro(M, set.grid.k);
  detail::check_periodic_set(set, micro);
  NodeField<D> w(micro, false);
  const long np = set.grid.n();
  const long nn = micro.nodes_per_side(false);
  IVec<D> i{};
  Index flat = 0;
  do {
    Vec<D> x;
    IVec<D> src{};
    for (int a = 0; a < D; ++a) {
      x(a) = eps * micro.node_coord(a, i[a]);
      src[a] = floor_mod(i[a], np);
    }
    const Index ps = flatten<D>(src, np);
    const Vec<D> du = u.gradient(x);
    double corr = 0.0;
    for (int k = 0; k < D; ++k) corr += du(k) * set.phi[static_cast<std::size_t>(k)][ps];
    w[flat++] = u.value(x) + eps * corr;
  } while (advance<D>(i, nn));
  return w;
}

struct TwoScaleReport {
  double eps = 1.0;
  int level = 0;
  std::string macro;
  double grad_error = 0.0;        // ||D u^eps - D w^eps||_L2
  double value_error = 0.0;       // ||u^eps - u||_L2
  double weak_grad_error = 0.0;   // ||D u^eps - D u||_weak
  double weak_flux_error = 0.0;   // ||a^eps D u^eps - abar D u||_weak
  double value_error_uw = 0.0;    // ||u^eps - w^eps||_L2
  double value_error_wu = 0.0;    // ||w^eps - u||_L2
  double weak_grad_wu = 0.0;      // ||D w^eps - D u||_weak
  double grad_error_weak = 0.0;   // ||D u^eps - D w^eps||_weak
  double energy = 0.0;            // mean 1/2 D u^eps . a D u^eps
  double residual = 0.0;
  int iterations = 0;

  static std::string csv_header() {
    return "eps,level,macro,grad_error,value_error,weak_grad_error,weak_flux_error,value_error_uw,value_error_wu,"
           "weak_grad_wu,grad_error_weak,energy,iterations";
  }
  void write_csv_row(std::ostream& os) const {
    os.precision(17);
    os << eps << ',' << level << ',' << macro << ',' << grad_error << ',' << value_error << ',' << weak_grad_error << ','
       << weak_flux_error << ',' << value_error_uw << ',' << value_error_wu << ',' << weak_grad_wu << ',' << grad_error_weak << ','
       << energy << ',' << iterations << '\n';
  }
};

/// Max |tr(abar D^2u)| over the macro cell centres of box_0 at resolution k.
template <int D>
double homogenized_residual(const MacroFunction<D>& u, const Mat<D>& abar, int k) {
  const GridSpec<D> g(0, k);
  double worst = 0.0;
  for_each_cell<D>(g, false, [&](Index, const IVec<D>& c, const Corners<D>&) {
    worst = std::max(worst, std::abs((abar * u.hessian(cell_center<D>(g, c))).trace()));
  });
  return worst;
}

/// Solves -div a(./eps) D u^eps = 0 on box_0 with u^eps = u on the boundary,
/// where `a` is the microscopic field on box_M, and compares with u and w^eps.
template <int D>
TwoScaleReport dirichlet_error(const CoefficientField<D>& a, const MacroFunction<D>& u, const CorrectorSet<D>& set, double eps,
                               const SolveOptions& opts = {}) {
  const int M = detail::micro_level_for<D>(eps);
  const GridSpec<D> micro(M, a.grid().k);
  if (a.grid() != micro) throw ArgumentError("coefficient field must cover box_M with eps = 3^{-M}, centred at the origin");
  detail::check_periodic_set(set, micro);
  const double scale = std::max(1.0, set.abar.cwiseAbs().maxCoeff() * u.hessian(Vec<D>::Zero()).cwiseAbs().maxCoeff());
  if (homogenized_residual(u, set.abar, std::max(1, micro.k)) > 1e-6 * scale)
    throw ArgumentError("macro function does not solve the homogenized equation");

  const NodeField<D> data = sample_nodes<D>(micro, false, [&](const Vec<D>& y) { return u.value(Vec<D>(eps * y)); });
  const Solution<D> sol = solve_dirichlet_data(a, micro.cube, data, opts);
  const NodeField<D> w = build_two_scale(u, set, eps);
  const double inv = 1.0 / eps;

  VectorField<D> du(micro, Vec<D>::Zero()), dw(micro, Vec<D>::Zero()), flux_gap(micro, Vec<D>::Zero());
  const VectorField<D> gw = discrete_gradient(w);
  double energy = 0.0;
  for_each_cell<D>(micro, false, [&](Index c, const IVec<D>& idx, const Corners<D>&) {
    const Vec<D> x = eps * cell_center<D>(micro, idx);
    const Vec<D> gu = u.gradient(x);
    const Vec<D> ge = inv * sol.gradient[c];
    du[c] = ge - gu;
    dw[c] = inv * gw[c] - gu;
    flux_gap[c] = a[c] * ge - set.abar * gu;
    energy += 0.5 * ge.dot(a[c] * ge);
  });
  VectorField<D> ue_minus_w(micro, Vec<D>::Zero());
  for (Index c = 0; c < du.size(); ++c) ue_minus_w[c] = du[c] - dw[c];

  NodeField<D> e_uw = sol.u, e_u = sol.u, e_wu = w;
  for (std::size_t i = 0; i < e_uw.values.size(); ++i) {
    e_uw.values[i] -= w.values[i];
    e_u.values[i] -= data.values[i];
    e_wu.values[i] -= data.values[i];
  }
  // interior nodes of `data` hold u too (sample_nodes fills every node)

  TwoScaleReport r;
  r.eps = eps;
  r.level = M;
  r.macro = u.name;
  r.grad_error = l2_norm(ue_minus_w);
  r.value_error = l2_norm(center_values(e_u));
  r.value_error_uw = l2_norm(center_values(e_uw));
  r.value_error_wu = l2_norm(center_values(e_wu));
  // the weak norm scales like a length: eps converts microscopic to macro units
  r.weak_grad_error = eps * weak_norm_estimate(du);
  r.weak_flux_error = eps * weak_norm_estimate(flux_gap);
  r.weak_grad_wu = eps * weak_norm_estimate(dw);
  r.grad_error_weak = eps * weak_norm_estimate(ue_minus_w);
  r.energy = energy / static_cast<double>(micro.cell_count());
  r.residual = sol.residual;
  r.iterations = sol.iterations;
  return r;
}

/// Log-log fit of an error against eps; slope NaN with method "undefined"
/// when any error vanishes (e.g. a constant field).
inline FitTarget error_rate(const std::vector<double>& eps, const std::vector<double>& errors, double expected, std::uint64_t seed = 1) {
  RateFitOptions fo;
  fo.expected = expected;
  fo.band_lo = 0.4;
  fo.band_hi = std::numeric_limits<double>::infinity();
  fo.seed = seed;
  try {
    return rate_fit(eps, errors, {}, fo);
  } catch (const ArgumentError&) {
    FitTarget f;
    f.expected = expected;
    f.band_lo = fo.band_lo;
    f.band_hi = fo.band_hi;
    f.slope = f.ci_lo = f.ci_hi = std::numeric_limits<double>::quiet_NaN();
    f.ci_method = "undefined";
    f.points = eps.size();
    return f;
  }
}

template <int D>
struct TwoScaleSequence {
  std::vector<TwoScaleReport> reports;
  Mat<D> abar = Mat<D>::Zero();
  FitTarget grad_rate;   // slope of log ||D u^eps - D w^eps|| against log eps
  FitTarget value_rate;  // slope of log ||u^eps - u||
  bool rate_meaningful = true;

  void write_csv(std::ostream& os) const {
    os << TwoScaleReport::csv_header() << '\n';
    for (const auto& r : reports) r.write_csv_row(os);
  }
};

struct TwoScaleOptions {
  int period_level = 0;
  int k = 10;
  std::vector<int> levels{1, 2, 3};
  CorrectorOptions corrector{};
  int jobs = 1;
};

/// Runs dirichlet_error for eps = 3^{-M}, M in opts.levels, on the periodic
/// extension of `cell`. A rate is flagged meaningless when every gradient
/// error sits below 1e-10.
template <int D>
TwoScaleSequence<D> two_scale_sequence(const CoefficientField<D>& cell, const MacroFunction<D>& u, const TwoScaleOptions& opts) {
  require(opts.levels.size() >= 3, "two-scale rate needs at least three scales");
  require(cell.grid().m() == opts.period_level && cell.grid().k == opts.k, "period cell does not match the options");
  CorrectorOptions co = opts.corrector;
  co.flux_correctors = false;
  const CorrectorSet<D> set = periodic_homogenized_matrix(cell, co);
  TwoScaleSequence<D> seq;
  seq.abar = set.abar;
  seq.reports.resize(opts.levels.size());
  parallel_for_index(opts.levels.size(), opts.jobs, [&](std::size_t i) {
    const int M = opts.levels[i];
    const CoefficientField<D> a = periodic_extension(cell, M);
    seq.reports[i] = dirichlet_error(a, u, set, 1.0 / static_cast<double>(ipow3(M)), co.solve);
  });
  std::vector<double> eps, ge, ve;
  double worst = 0.0;
  for (const auto& r : seq.reports) {
    eps.push_back(r.eps);
    ge.push_back(r.grad_error);
    ve.push_back(r.value_error);
    worst = std::max(worst, r.grad_error);
  }
  seq.rate_meaningful = worst > 1e-10;
  seq.grad_rate = error_rate(eps, ge, 0.5);
  seq.value_rate = error_rate(eps, ve, 1.0);
  if (!seq.rate_meaningful) {
    seq.grad_rate.ci_method = "undefined";
    seq.value_rate.ci_method = "undefined";
  }
  return seq;
}

}  // namespace hlab
