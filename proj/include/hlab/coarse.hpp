#pragma once

// Coarse-grained matrices a(U), a*(U), the master quantity J and multiscale
// diagnostics over triadic partitions.
//
// a(U) is the quadratic form of mu(U,p) = min mean 1/2 Dv.aDv over v = p.x on
// the boundary, a*(U)^{-1} that of mu*(U,q) = max mean(-1/2 Dw.aDw + q.Dw).

#include "hlab/common.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace hlab {

struct CoarseOptions {
  SolveOptions solve{};
  bool keep_solutions = true;
  int jobs = 1;
};

template <int D>
struct CoarseGrainResult {
  TriadicCube<D> cube{};
  Mat<D> a = Mat<D>::Zero();           // a(U)
  Mat<D> a_star = Mat<D>::Zero();      // a*(U)
  Mat<D> a_star_inv = Mat<D>::Zero();  // a*(U)^{-1}
  Mat<D> cube_mean = Mat<D>::Zero();   // cube average of the coefficients
  double drift = 0.0;                  // largest mismatch between energy and flux forms
  double drift_star = 0.0;
  double tol = 0.0;
  int iterations = 0;
  std::vector<Solution<D>> dirichlet;  // v(., U, e_i)
  std::vector<Solution<D>> neumann;    // w(., U, e_i)
};

/// a(U) and a*(U) from d Dirichlet and d Neumann solves. The bilinear forms
/// are polarized from the energies of the basis extremals and their sums,
/// which by linearity are v_i + v_j and w_i + w_j. The flux forms
/// mean(a Dv_j) and mean(Dw_j) are compared against them; a mismatch above
/// 10 tol Lambda (resp. 10 tol / lambda) raises NumericalError.
template <int D>
CoarseGrainResult<D> coarse_matrices(const CoefficientField<D>& a, const TriadicCube<D>& cube, const CoarseOptions& opts = {}) {
  opts.solve.validate();
  if (!a.grid().cube.contains(cube)) throw ArgumentError("cube is not contained in the coefficient field");
  CoarseGrainResult<D> r;
  r.cube = cube;
  r.tol = opts.solve.tol;
  r.cube_mean = cell_average(a.a, cube);
  std::vector<Solution<D>> v, w;
  for (int i = 0; i < D; ++i) {
    v.push_back(solve_dirichlet_affine(a, cube, unit<D>(i), opts.solve));
    w.push_back(solve_neumann_affine(a, cube, unit<D>(i), opts.solve));
    r.iterations += v.back().iterations + w.back().iterations;
  }
  const double cells = static_cast<double>(v.front().gradient.size());
  Mat<D> a_energy = Mat<D>::Zero(), a_flux = Mat<D>::Zero();
  Mat<D> m_energy = Mat<D>::Zero(), m_flux = Mat<D>::Zero();
  std::vector<Vec<D>> mean_grad_w(D, Vec<D>::Zero());
  for (int j = 0; j < D; ++j) {
    a_flux.col(j) = field_mean(v[j].flux);
    mean_grad_w[static_cast<std::size_t>(j)] = field_mean(w[j].gradient);
    m_flux.col(j) = mean_grad_w[static_cast<std::size_t>(j)];
  }
  for (int i = 0; i < D; ++i) {
    for (int j = i; j < D; ++j) {
      double av = 0.0, aw = 0.0;
      for (Index c = 0; c < v[i].gradient.size(); ++c) {
        av += v[i].gradient[c].dot(v[j].flux[c]);
        aw += w[i].gradient[c].dot(w[j].flux[c]);
      }
      av /= cells;
      aw /= cells;
      // mu(e_i + e_j) - mu(e_i) - mu(e_j), and the same for the dual functional
      const double mij = -aw + mean_grad_w[static_cast<std::size_t>(j)](i) + mean_grad_w[static_cast<std::size_t>(i)](j);
      a_energy(i, j) = a_energy(j, i) = av;
      m_energy(i, j) = m_energy(j, i) = mij;
    }
  }
  r.drift = detail::matrix_mismatch<D>(a_energy, a_flux);
  r.drift_star = detail::matrix_mismatch<D>(m_energy, m_flux);
  const double limit = 10.0 * opts.solve.tol * a.Lambda;
  const double limit_star = 10.0 * opts.solve.tol / a.lambda;
  if (!(r.drift <= limit))
    throw NumericalError("a(U) energy and flux forms disagree by " + std::to_string(r.drift) + " (limit " + std::to_string(limit) + ")");
  if (!(r.drift_star <= limit_star))
    throw NumericalError("a*(U) energy and flux forms disagree by " + std::to_string(r.drift_star) + " (limit " +
                         std::to_string(limit_star) + ")");
  r.a = a_energy;
  r.a_star_inv = m_energy;
  if (!(std::abs(m_energy.determinant()) > 0.0) || !m_energy.allFinite()) throw NumericalError("a*(U)^{-1} is singular");
  r.a_star = m_energy.inverse();
  r.a_star = 0.5 * (r.a_star + r.a_star.transpose()).eval();
  if (opts.keep_solutions) {
    r.dirichlet = std::move(v);
    r.neumann = std::move(w);
  }
  return r;
}

/// Margins of lambda I <= a* <= a <= cube mean <= Lambda I (smallest
/// eigenvalue of each difference; all nonnegative up to 10 tol).
template <int D>
struct OrderingMargins {
  double lower = 0.0;          // a* - lambda I
  double duality = 0.0;        // a - a*
  double mean = 0.0;           // cube mean - a
  double upper = 0.0;          // Lambda I - cube mean
  double min() const { return std::min({lower, duality, mean, upper}); }
  bool holds(double slack) const { return min() >= -slack; }
};

template <int D>
OrderingMargins<D> ordering_margins(const CoarseGrainResult<D>& r, double lambda, double Lambda) {
  const Mat<D> I = Mat<D>::Identity();
  OrderingMargins<D> m;
  m.lower = min_eig<D>(r.a_star - lambda * I);
  m.duality = min_eig<D>(r.a - r.a_star);
  m.mean = min_eig<D>(r.cube_mean - r.a);
  m.upper = min_eig<D>(Lambda * I - r.cube_mean);
  return m;
}

/// J(U,p,q) = 1/2 p.a(U)p + 1/2 q.a*(U)^{-1}q - p.q.
template <int D>
double J_value(const CoarseGrainResult<D>& r, const std::type_identity_t<Vec<D>>& p, const std::type_identity_t<Vec<D>>& q) {
  if (!r.a_star_inv.allFinite() || !(std::abs(r.a_star_inv.determinant()) > 0.0)) throw NumericalError("a*(U) is singular");
  return 0.5 * p.dot(r.a * p) + 0.5 * q.dot(r.a_star_inv * q) - p.dot(q);
}

struct DualityDefect {
  double gap = 0.0;    // |a(U) - a*(U)|
  double bound = 0.0;  // sum_i J(U, e_i, b e_i)
};

template <int D>
DualityDefect duality_defect(const CoarseGrainResult<D>& r, const Mat<D>& b) {
  require((b - b.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + b.cwiseAbs().maxCoeff()), "duality_defect expects a symmetric matrix");
  DualityDefect d;
  d.gap = sym_norm<D>(r.a - r.a_star);
  for (int i = 0; i < D; ++i) d.bound += J_value<D>(r, unit<D>(i), b * unit<D>(i));
  return d;
}

/// Mean-free residuals of the spatial-average characterisations.
struct IdentityResiduals {
  double dirichlet_gradient = 0.0;  // |mean Dv - p|, exact
  double neumann_flux = 0.0;        // |mean aDw - q|, exact
  double dirichlet_flux = 0.0;      // |mean aDv - a(U)p|, to 10 tol
  double neumann_gradient = 0.0;    // |mean Dw - a*(U)^{-1}q|, to 10 tol
  double exact() const { return std::max(dirichlet_gradient, neumann_flux); }
  double approximate() const { return std::max(dirichlet_flux, neumann_gradient); }
};

template <int D>
IdentityResiduals spatial_average_identities(const CoarseGrainResult<D>& r) {
  require(r.dirichlet.size() == static_cast<std::size_t>(D) && r.neumann.size() == static_cast<std::size_t>(D),
          "spatial_average_identities needs the cached extremals");
  IdentityResiduals out;
  for (int i = 0; i < D; ++i) {
    const Vec<D> e = unit<D>(i);
    const auto& v = r.dirichlet[static_cast<std::size_t>(i)];
    const auto& w = r.neumann[static_cast<std::size_t>(i)];
    out.dirichlet_gradient = std::max(out.dirichlet_gradient, (field_mean(v.gradient) - e).cwiseAbs().maxCoeff());
    out.neumann_flux = std::max(out.neumann_flux, (field_mean(w.flux) - e).cwiseAbs().maxCoeff());
    out.dirichlet_flux = std::max(out.dirichlet_flux, (field_mean(v.flux) - r.a * e).cwiseAbs().maxCoeff());
    out.neumann_gradient = std::max(out.neumann_gradient, (field_mean(w.gradient) - r.a_star_inv * e).cwiseAbs().maxCoeff());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partition statistics.

/// Coarse matrices of every subcube z + box_n of `cube`, in partition order.
template <int D>
std::vector<CoarseGrainResult<D>> level_matrices(const CoefficientField<D>& a, const TriadicCube<D>& cube, int n,
                                                 const CoarseOptions& opts = {}) {
  const auto parts = triadic_partition(cube, n);
  std::vector<CoarseGrainResult<D>> out(parts.size());
  CoarseOptions local = opts;
  local.keep_solutions = false;
  parallel_for_index(parts.size(), opts.jobs, [&](std::size_t i) { out[i] = coarse_matrices(a, parts[i], local); });
  return out;
}

template <int D>
struct SubadditivityReport {
  int m = 0;
  int n = 0;
  Mat<D> a_top = Mat<D>::Zero();
  Mat<D> a_star_top = Mat<D>::Zero();
  Mat<D> a_mean = Mat<D>::Zero();        // mean of a(z + box_n)
  Mat<D> a_star_harmonic = Mat<D>::Zero();  // (mean of a*(z + box_n)^{-1})^{-1}
  double upper_defect = 0.0;  // min eig(a_mean - a_top), >= -10 tol
  double lower_defect = 0.0;  // min eig(a_star_top - a_star_harmonic), >= -10 tol
  bool holds(double slack) const { return upper_defect >= -slack && lower_defect >= -slack; }
};

template <int D>
SubadditivityReport<D> summarize_subadditivity(const CoarseGrainResult<D>& top, const std::vector<CoarseGrainResult<D>>& parts, int n) {
  SubadditivityReport<D> rep;
  rep.m = top.cube.level;
  rep.n = n;
  rep.a_top = top.a;
  rep.a_star_top = top.a_star;
  Mat<D> inv_acc = Mat<D>::Zero();
  for (const auto& p : parts) {
    rep.a_mean += p.a;
    inv_acc += p.a_star_inv;
  }
  rep.a_mean /= static_cast<double>(parts.size());
  rep.a_star_harmonic = (inv_acc / static_cast<double>(parts.size())).inverse();
  rep.upper_defect = min_eig<D>(rep.a_mean - rep.a_top);
  rep.lower_defect = min_eig<D>(rep.a_star_top - rep.a_star_harmonic);
  return rep;
}

template <int D>
SubadditivityReport<D> subadditivity_ledger(const CoefficientField<D>& a, const TriadicCube<D>& cube, int n,
                                            const CoarseOptions& opts = {}) {
  if (n < 0 || n >= cube.level) throw ArgumentError("subadditivity_ledger needs 0 <= n < m");
  CoarseOptions top_opts = opts;
  top_opts.keep_solutions = false;
  const auto top = coarse_matrices(a, cube, top_opts);
  return summarize_subadditivity(top, level_matrices(a, cube, n, opts), n);
}

template <int D>
double level_J_sum(const std::vector<CoarseGrainResult<D>>& parts, const Mat<D>& a_ref) {
  double acc = 0.0;
  for (const auto& p : parts)
    for (int i = 0; i < D; ++i) acc += J_value<D>(p, unit<D>(i), a_ref * unit<D>(i));
  return acc / static_cast<double>(parts.size());
}

/// E(m) = sum_{n=0}^{m} 3^{n-m} sum_i mean_z J(z + box_n, e_i, a_ref e_i).
template <int D>
double multiscale_E(const CoefficientField<D>& a, const TriadicCube<D>& cube, const Mat<D>& a_ref, const CoarseOptions& opts = {}) {
  require((a_ref - a_ref.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + a_ref.cwiseAbs().maxCoeff()),
          "multiscale_E expects a symmetric reference matrix");
  double e = 0.0;
  for (int n = 0; n <= cube.level; ++n)
    e += std::pow(3.0, n - cube.level) * level_J_sum<D>(level_matrices(a, cube, n, opts), a_ref);
  return e;
}

// ---------------------------------------------------------------------------
// Cascade over all levels.

template <int D>
struct CascadeLevel {
  int level = 0;
  std::size_t count = 0;
  Mat<D> mean = Mat<D>::Zero();       // mean of a(z + box_n)
  Mat<D> variance = Mat<D>::Zero();   // entrywise sample variance of a(z + box_n)
  Mat<D> harmonic_star = Mat<D>::Zero();
  double mean_gap = 0.0;              // mean |a - a*|
  double upper_defect = 0.0;          // min eig(mean - a(box_m))
  double lower_defect = 0.0;          // min eig(a*(box_m) - harmonic_star)
  double J_mean = 0.0;                // mean_z sum_i J(z + box_n, e_i, a_ref e_i)
};

template <int D>
struct CascadeRecord {
  int m = 0;
  Mat<D> a_ref = Mat<D>::Zero();
  std::vector<CascadeLevel<D>> levels;
  double E = 0.0;

  void write_csv(std::ostream& os) const {
    os << "level,i,j,count,mean,variance,harmonic_star,mean_gap,upper_defect,lower_defect,J_mean,E_m\n";
    os.precision(17);
    for (const auto& lv : levels)
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j)
          os << lv.level << ',' << i + 1 << ',' << j + 1 << ',' << lv.count << ',' << lv.mean(i, j) << ',' << lv.variance(i, j) << ','
             << lv.harmonic_star(i, j) << ',' << lv.mean_gap << ',' << lv.upper_defect << ',' << lv.lower_defect << ',' << lv.J_mean
             << ',' << E << '\n';
  }
};

/// Level statistics for n = 0..m with E(m) evaluated against a_ref.
template <int D>
CascadeRecord<D> coarse_cascade(const CoefficientField<D>& a, const TriadicCube<D>& cube, const Mat<D>& a_ref,
                                const CoarseOptions& opts = {}) {
  CascadeRecord<D> rec;
  rec.m = cube.level;
  rec.a_ref = a_ref;
  std::vector<std::vector<CoarseGrainResult<D>>> all;
  for (int n = 0; n <= cube.level; ++n) all.push_back(level_matrices(a, cube, n, opts));
  const CoarseGrainResult<D>& top = all.back().front();
  for (int n = 0; n <= cube.level; ++n) {
    const auto& parts = all[static_cast<std::size_t>(n)];
    CascadeLevel<D> lv;
    lv.level = n;
    lv.count = parts.size();
    const auto sub = summarize_subadditivity(top, parts, n);
    lv.mean = sub.a_mean;
    lv.harmonic_star = sub.a_star_harmonic;
    lv.upper_defect = sub.upper_defect;
    lv.lower_defect = sub.lower_defect;
    for (const auto& p : parts) {
      lv.variance += (p.a - lv.mean).cwiseProduct(p.a - lv.mean);
      lv.mean_gap += sym_norm<D>(p.a - p.a_star);
    }
    if (parts.size() > 1) lv.variance /= static_cast<double>(parts.size() - 1);
    lv.mean_gap /= static_cast<double>(parts.size());
    lv.J_mean = level_J_sum<D>(parts, a_ref);
    rec.E += std::pow(3.0, n - cube.level) * lv.J_mean;
    rec.levels.push_back(lv);
  }
  return rec;
}

}  // namespace hlab
