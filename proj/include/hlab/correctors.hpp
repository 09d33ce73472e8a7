#pragma once

// Periodic and finite-volume correctors, flux correctors and the
// homogenized matrix.

#include "hlab/common.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"

#include <string>
#include <vector>

namespace hlab {

enum class CorrectorMode { periodic, finite_volume };

inline const char* to_string(CorrectorMode m) { return m == CorrectorMode::periodic ? "periodic" : "finite_volume"; }

/// Stream matrix s with div s = g on a torus: entries s_ij as periodic node
/// fields (index i*D + j), their cell-centre values, and residuals.
template <int D>
struct FluxCorrector {
  std::vector<NodeField<D>> entries;
  MatrixField<D> cells;
  double skew_residual = 0.0;     // max |s_ij + s_ji|
  double div_residual = 0.0;      // weak-norm estimate of div s - g
  double div_residual_max = 0.0;  // max cellwise |div s - g|

  const NodeField<D>& operator()(int i, int j) const { return entries[static_cast<std::size_t>(i * D + j)]; }
};

namespace detail {

template <int D>
VectorField<D> component_field(const VectorField<D>& g, int src, int dst) {
  VectorField<D> out(g.grid, Vec<D>::Zero());
  for (Index c = 0; c < g.size(); ++c) out[c](dst) = g[c](src);
  return out;
}

}  // namespace detail

/// Solves G^T G s_ij = G_j^T g_i - G_i^T g_j with the exact periodic
/// pseudo-inverse. For weakly solenoidal g on a torus with an odd number of
/// cells per side this gives div s = g to rounding; otherwise the residual
/// records the part of g that is not a divergence.
template <int D>
FluxCorrector<D> flux_corrector(const VectorField<D>& g) {
  const GridSpec<D>& grid = g.grid;
  require(grid.n() >= 2, "flux corrector needs at least two cells per side");
  const Vec<D> mean = field_mean(g);
  const double scale = std::max(l2_norm(g), 1e-300);
  if (mean.norm() > 1e-10 * scale && mean.norm() > 1e-12) throw ArgumentError("flux corrector input must have mean zero");
  MatrixField<D> identity(grid, Mat<D>::Identity());
  const StiffnessOperator<D> op(identity, true);
  // tg[i*D + j] = G_j^T g_i
  std::vector<std::vector<double>> tg(static_cast<std::size_t>(D * D));
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) tg[static_cast<std::size_t>(i * D + j)] = op.transpose_gradient(detail::component_field<D>(g, i, j));
  FluxCorrector<D> fc;
  fc.entries.assign(static_cast<std::size_t>(D * D), NodeField<D>(grid, true));
  for (int i = 0; i < D; ++i)
    for (int j = i + 1; j < D; ++j) {
      NodeField<D> rhs(grid, true);
      const auto& a = tg[static_cast<std::size_t>(i * D + j)];
      const auto& b = tg[static_cast<std::size_t>(j * D + i)];
      for (std::size_t n = 0; n < rhs.values.size(); ++n) rhs.values[n] = a[n] - b[n];
      NodeField<D> s = invert_periodic_q1(rhs);
      const double shift = field_mean(center_values(s));
      for (auto& v : s.values) v -= shift;
      NodeField<D> t = s;
      for (auto& v : t.values) v = -v;
      fc.entries[static_cast<std::size_t>(i * D + j)] = std::move(s);
      fc.entries[static_cast<std::size_t>(j * D + i)] = std::move(t);
    }
  fc.cells = MatrixField<D>(grid, Mat<D>::Zero());
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) {
      const ScalarField<D> cv = center_values(fc.entries[static_cast<std::size_t>(i * D + j)]);
      for (Index c = 0; c < cv.size(); ++c) fc.cells[c](i, j) = cv[c];
    }
  for (const auto& m : fc.cells.values) fc.skew_residual = std::max(fc.skew_residual, (m + m.transpose()).cwiseAbs().maxCoeff());
  VectorField<D> resid(grid, Vec<D>::Zero());
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) {
      const VectorField<D> grad = discrete_gradient(fc.entries[static_cast<std::size_t>(i * D + j)]);
      for (Index c = 0; c < grad.size(); ++c) resid[c](i) += grad[c](j);
    }
  for (Index c = 0; c < resid.size(); ++c) {
    resid[c] -= g[c];
    fc.div_residual_max = std::max(fc.div_residual_max, resid[c].cwiseAbs().maxCoeff());
  }
  fc.div_residual = weak_norm_estimate(resid);
  return fc;
}

// ---------------------------------------------------------------------------

template <int D>
struct CorrectorSet {
  CorrectorMode mode = CorrectorMode::periodic;
  int level = 0;
  GridSpec<D> grid{};
  Mat<D> abar = Mat<D>::Zero();       // symmetric: energy form
  Mat<D> abar_flux = Mat<D>::Zero();  // columns mean a(e_k + D phi_k)
  double drift = 0.0;
  std::vector<NodeField<D>> phi;
  std::vector<VectorField<D>> gradient;  // e_k + D phi_k
  std::vector<VectorField<D>> flux;      // a(e_k + D phi_k)
  std::vector<VectorField<D>> g;         // flux minus its mean
  std::vector<FluxCorrector<D>> s;
  int iterations = 0;

  double max_div_residual() const {
    double r = 0.0;
    for (const auto& fc : s) r = std::max(r, fc.div_residual);
    return r;
  }
  double max_skew_residual() const {
    double r = 0.0;
    for (const auto& fc : s) r = std::max(r, fc.skew_residual);
    return r;
  }
};

struct CorrectorOptions {
  SolveOptions solve{};
  bool flux_correctors = true;
  int jobs = 1;
};

namespace detail {

template <int D>
void finish_corrector_set(CorrectorSet<D>& set, double Lambda, double tol, const CorrectorOptions& opts) {
  const double cells = static_cast<double>(set.gradient.front().size());
  for (int i = 0; i < D; ++i) {
    set.abar_flux.col(i) = field_mean(set.flux[static_cast<std::size_t>(i)]);
    for (int j = i; j < D; ++j) {
      double acc = 0.0;
      const auto& gi = set.gradient[static_cast<std::size_t>(i)];
      const auto& fj = set.flux[static_cast<std::size_t>(j)];
      for (Index c = 0; c < gi.size(); ++c) acc += gi[c].dot(fj[c]);
      set.abar(i, j) = set.abar(j, i) = acc / cells;
    }
  }
  set.drift = matrix_mismatch<D>(set.abar, set.abar_flux);
  if (!(set.drift <= 10.0 * tol * Lambda))
    throw NumericalError("homogenized matrix drift " + std::to_string(set.drift) + " exceeds 10 tol Lambda");
  for (int k = 0; k < D; ++k) {
    VectorField<D> gk = set.flux[static_cast<std::size_t>(k)];
    const Vec<D> mean = field_mean(gk);
    for (auto& v : gk.values) v -= mean;
    set.g.push_back(std::move(gk));
  }
  if (opts.flux_correctors) {
    set.s.resize(static_cast<std::size_t>(D));
    parallel_for_index(static_cast<std::size_t>(D), opts.jobs,
                       [&](std::size_t k) { set.s[k] = flux_corrector(set.g[k]); });
  }
}

}  // namespace detail

/// d periodic cell problems on the field's cube as one period.
template <int D>
CorrectorSet<D> periodic_homogenized_matrix(const CoefficientField<D>& a, const CorrectorOptions& opts = {}) {
  opts.solve.validate();
  CorrectorSet<D> set;
  set.mode = CorrectorMode::periodic;
  set.level = a.grid().m();
  set.grid = a.grid();
  std::vector<Solution<D>> sols(static_cast<std::size_t>(D));
  parallel_for_index(static_cast<std::size_t>(D), opts.jobs,
                     [&](std::size_t k) { sols[k] = solve_periodic_cell(a, unit<D>(static_cast<int>(k)), opts.solve); });
  for (auto& s : sols) {
    set.iterations += s.iterations;
    set.phi.push_back(std::move(s.u));
    set.gradient.push_back(std::move(s.gradient));
    set.flux.push_back(std::move(s.flux));
  }
  detail::finish_corrector_set(set, a.Lambda, opts.solve.tol, opts);
  return set;
}

/// phi_{m,e} = v(., box_m, e) - l_e, vanishing on the boundary; g is the
/// flux minus its cube average, and s is built on the periodic extension.
template <int D>
CorrectorSet<D> finite_volume_correctors(const CoefficientField<D>& a, const TriadicCube<D>& cube, const CorrectorOptions& opts = {}) {
  opts.solve.validate();
  if (!a.grid().cube.contains(cube)) throw ArgumentError("cube is not contained in the coefficient field");
  CorrectorSet<D> set;
  set.mode = CorrectorMode::finite_volume;
  set.level = cube.level;
  set.grid = GridSpec<D>(cube, a.grid().k);
  std::vector<Solution<D>> sols(static_cast<std::size_t>(D));
  parallel_for_index(static_cast<std::size_t>(D), opts.jobs,
                     [&](std::size_t k) { sols[k] = solve_dirichlet_affine(a, cube, unit<D>(static_cast<int>(k)), opts.solve); });
  for (int k = 0; k < D; ++k) {
    auto& s = sols[static_cast<std::size_t>(k)];
    set.iterations += s.iterations;
    const NodeField<D> plane = affine_nodes<D>(set.grid, unit<D>(k));
    for (std::size_t n = 0; n < s.u.values.size(); ++n) s.u.values[n] -= plane.values[n];
    set.phi.push_back(std::move(s.u));
    set.gradient.push_back(std::move(s.gradient));
    set.flux.push_back(std::move(s.flux));
  }
  detail::finish_corrector_set(set, a.Lambda, opts.solve.tol, opts);
  return set;
}

/// R(m) = 3^{-m} max_k (||phi_k - (phi_k)|| + ||s_k - (s_k)||), normalised L2
/// over the cube, with phi evaluated at cell centres.
template <int D>
double sublinearity_R(const CorrectorSet<D>& set) {
  require(set.s.size() == set.phi.size(), "sublinearity_R needs flux correctors");
  double best = 0.0;
  for (std::size_t k = 0; k < set.phi.size(); ++k) {
    const double osc = l2_oscillation(center_values(set.phi[k])) + l2_oscillation(set.s[k].cells);
    best = std::max(best, osc);
  }
  return best / static_cast<double>(ipow3(set.level));
}

}  // namespace hlab
