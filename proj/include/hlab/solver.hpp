#pragma once

// Matrix-free variational solves of -div(a grad u) = div f on triadic cubes.
//
// The discrete energy of a node field u is mean_cells 1/2 Gu . a Gu with G the
// cell-centre Q1 gradient. Internally the unnormalised operator
// A = sum_c G_c^T a_c G_c acts on full node vectors; Dirichlet unknowns are
// selected by a boundary mask and the kernel of G (constants, plus hourglass
// modes where they exist) is projected out on Neumann and periodic grids.

#include "hlab/cg.hpp"
#include "hlab/common.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"
#include "hlab/spectral.hpp"

#include <memory>
#include <string>
#include <type_traits>
#include <vector>

namespace hlab {

enum class Preconditioner { none, diagonal, spectral };

inline const char* to_string(Preconditioner p) {
  switch (p) {
    case Preconditioner::none: return "none";
    case Preconditioner::diagonal: return "diagonal";
    case Preconditioner::spectral: return "spectral";
  }
  return "?";
}

inline Preconditioner preconditioner_from_string(const std::string& s) {
  if (s == "none") return Preconditioner::none;
  if (s == "diagonal") return Preconditioner::diagonal;
  if (s == "spectral") return Preconditioner::spectral;
  throw ArgumentError("unknown preconditioner '" + s + "'");
}

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 20000;
  Preconditioner preconditioner = Preconditioner::spectral;
  bool record_history = false;

  void validate() const {
    require(tol > 0.0 && tol <= 1e-2, "solver tolerance must lie in (0, 1e-2]");
    require(max_iter >= 1, "solver max_iter must be >= 1");
  }
};

/// Result of one solve. For cell problems `u` is the corrector and
/// `gradient` the gradient of the corrected plane e + grad(phi).
template <int D>
struct Solution {
  NodeField<D> u;
  VectorField<D> gradient;
  VectorField<D> flux;
  double residual = 0.0;
  int iterations = 0;
  double energy = 0.0;
  CgReport report;
};

enum class ForcingBC { dirichlet_zero, periodic };

// ---------------------------------------------------------------------------

/// A = sum_c G_c^T a_c G_c on the node layout of the field's grid.
template <int D>
class StiffnessOperator {
 public:
  static constexpr int kCorners = 1 << D;

  StiffnessOperator(const MatrixField<D>& a, bool periodic)
      : a_(&a), periodic_(periodic), scale_(1.0 / (a.grid.h() * static_cast<double>(1 << (D - 1)))) {
    const GridSpec<D>& g = a.grid;
    require(!periodic || g.n() >= 2, "periodic grids need at least two cells per side");
    corners_.resize(static_cast<std::size_t>(g.cell_count()));
    for_each_cell<D>(g, periodic, [&](Index c, const IVec<D>&, const Corners<D>& nodes) {
      corners_[static_cast<std::size_t>(c)] = nodes;
    });
    nodes_ = g.node_count(periodic);
  }

  const MatrixField<D>& field() const { return *a_; }
  const GridSpec<D>& grid() const { return a_->grid; }
  bool periodic() const { return periodic_; }
  Index nodes() const { return nodes_; }
  Index cells() const { return a_->size(); }

  Vec<D> cell_gradient(const std::vector<double>& x, Index c) const {
    const auto& nd = corners_[static_cast<std::size_t>(c)];
    Vec<D> grad = Vec<D>::Zero();
    for (int s = 0; s < kCorners; ++s) {
      const double v = x[static_cast<std::size_t>(nd[static_cast<std::size_t>(s)])];
      for (int a = 0; a < D; ++a) grad(a) += corner_sign(s, a) * v;
    }
    return scale_ * grad;
  }

  /// y += G_c^T v
  void scatter_cell(const Vec<D>& v, Index c, std::vector<double>& y) const {
    const auto& nd = corners_[static_cast<std::size_t>(c)];
    for (int s = 0; s < kCorners; ++s) {
      double acc = 0.0;
      for (int a = 0; a < D; ++a) acc += corner_sign(s, a) * v(a);
      y[static_cast<std::size_t>(nd[static_cast<std::size_t>(s)])] += scale_ * acc;
    }
  }

  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(static_cast<std::size_t>(nodes_), 0.0);
    const Index n = cells();
    for (Index c = 0; c < n; ++c) scatter_cell(Vec<D>((*a_)[c] * cell_gradient(x, c)), c, y);
  }

  /// sum_c G_c^T f_c
  std::vector<double> transpose_gradient(const VectorField<D>& f) const {
    require(f.grid == grid(), "forcing grid differs from the coefficient grid");
    std::vector<double> y(static_cast<std::size_t>(nodes_), 0.0);
    for (Index c = 0; c < f.size(); ++c) scatter_cell(f[c], c, y);
    return y;
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(static_cast<std::size_t>(nodes_), 0.0);
    const Index n = cells();
    for (Index c = 0; c < n; ++c) {
      const Mat<D>& m = (*a_)[c];
      const auto& nd = corners_[static_cast<std::size_t>(c)];
      for (int s = 0; s < kCorners; ++s) {
        double acc = 0.0;
        for (int i = 0; i < D; ++i)
          for (int j = 0; j < D; ++j) acc += m(i, j) * corner_sign(s, i) * corner_sign(s, j);
        d[static_cast<std::size_t>(nd[static_cast<std::size_t>(s)])] += scale_ * scale_ * acc;
      }
    }
    return d;
  }

  VectorField<D> gradient(const std::vector<double>& x) const {
    VectorField<D> g(grid(), Vec<D>::Zero());
    for (Index c = 0; c < g.size(); ++c) g[c] = cell_gradient(x, c);
    return g;
  }

  VectorField<D> flux(const VectorField<D>& grad) const {
    VectorField<D> f(grid(), Vec<D>::Zero());
    for (Index c = 0; c < f.size(); ++c) f[c] = (*a_)[c] * grad[c];
    return f;
  }

  double energy(const std::vector<double>& x) const {
    double acc = 0.0;
    const Index n = cells();
    for (Index c = 0; c < n; ++c) {
      const Vec<D> g = cell_gradient(x, c);
      acc += 0.5 * g.dot((*a_)[c] * g);
    }
    return acc / static_cast<double>(n);
  }

 private:
  const MatrixField<D>* a_;
  bool periodic_;
  double scale_;
  Index nodes_ = 0;
  std::vector<Corners<D>> corners_;
};

namespace detail {

/// Orthonormal basis of ker G on Neumann or periodic node layouts: tensor
/// products of constant and alternating 1D factors with either no alternating
/// factor or at least two of them.
template <int D>
std::vector<std::vector<double>> gradient_kernel(const GridSpec<D>& g, bool periodic) {
  const long nn = g.nodes_per_side(periodic);
  const bool alternating_ok = !periodic || (nn % 2 == 0);
  std::vector<std::vector<double>> modes;
  for (int mask = 0; mask < (1 << D); ++mask) {
    const int bits = __builtin_popcount(static_cast<unsigned>(mask));
    if (bits == 1) continue;
    if (bits >= 2 && !alternating_ok) continue;
    std::vector<double> v(static_cast<std::size_t>(g.node_count(periodic)));
    IVec<D> i{};
    Index flat = 0;
    do {
      double s = 1.0;
      for (int a = 0; a < D; ++a)
        if ((mask >> a) & 1) s *= (i[a] % 2 == 0) ? 1.0 : -1.0;
      v[static_cast<std::size_t>(flat++)] = s;
    } while (advance<D>(i, nn));
    for (const auto& q : modes) {
      const double c = vdot(q, v);
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= c * q[j];
    }
    const double nrm = std::sqrt(vdot(v, v));
    for (auto& x : v) x /= nrm;
    modes.push_back(std::move(v));
  }
  return modes;
}

template <int D>
std::vector<char> boundary_mask(const GridSpec<D>& g) {
  const long nc = g.n();
  std::vector<char> mask(static_cast<std::size_t>(g.node_count(false)), 0);
  IVec<D> i{};
  Index flat = 0;
  do {
    mask[static_cast<std::size_t>(flat++)] = is_boundary_node<D>(i, nc) ? 1 : 0;
  } while (advance<D>(i, nc + 1));
  return mask;
}

inline void project_out(const std::vector<std::vector<double>>& modes, std::vector<double>& v) {
  for (const auto& q : modes) {
    const double c = vdot(q, v);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= c * q[j];
  }
}

template <int D>
double mean_scale(const MatrixField<D>& a) {
  double acc = 0.0;
  for (const auto& m : a.values) acc += m.trace() / D;
  return acc / static_cast<double>(a.size());
}

/// Removes the kernel of G and then the cell-centre mean, so the
/// interpolant has mean zero and no hourglass component.
template <int D>
void normalize_mean_zero(const GridSpec<D>& g, bool periodic, std::vector<double>& x) {
  project_out(gradient_kernel<D>(g, periodic), x);
  NodeField<D> u(g, periodic);
  u.values = x;
  const double mean = field_mean(center_values(u));
  for (auto& v : x) v -= mean;
}

/// CG on the unknowns selected by `topo`; throws SolverError on failure.
template <int D>
CgReport solve_system(const StiffnessOperator<D>& op, Topology topo, std::vector<double> b, std::vector<double>& x,
                      const SolveOptions& opts) {
  opts.validate();
  const GridSpec<D>& g = op.grid();
  Projection project;
  std::vector<char> mask;
  std::vector<std::vector<double>> kernel;
  if (topo == Topology::dirichlet) {
    mask = boundary_mask<D>(g);
    project = [&mask](std::vector<double>& v) {
      for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) v[i] = 0.0;
    };
  } else {
    kernel = gradient_kernel<D>(g, topo == Topology::periodic);
    project = [&kernel](std::vector<double>& v) { project_out(kernel, v); };
  }
  project(b);

  LinearMap apply_op = [&op](const std::vector<double>& in, std::vector<double>& out) { op.apply(in, out); };
  LinearMap precond;
  std::unique_ptr<SpectralPreconditioner<D>> spectral;
  std::vector<double> inv_diag;
  switch (opts.preconditioner) {
    case Preconditioner::none:
      precond = [](const std::vector<double>& in, std::vector<double>& out) { out = in; };
      break;
    case Preconditioner::diagonal:
      inv_diag = op.diagonal();
      for (auto& d : inv_diag) d = d > 0.0 ? 1.0 / d : 0.0;
      precond = [&inv_diag](const std::vector<double>& in, std::vector<double>& out) {
        out.resize(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = inv_diag[i] * in[i];
      };
      break;
    case Preconditioner::spectral: {
      spectral = std::make_unique<SpectralPreconditioner<D>>(g.n(), g.h(), topo, ReferenceStencil::q1_center,
                                                             mean_scale<D>(op.field()));
      if (spectral->trivial()) {
        precond = [](const std::vector<double>& in, std::vector<double>& out) { out = in; };
      } else {
        const SpectralPreconditioner<D>* sp = spectral.get();
        precond = [sp](const std::vector<double>& in, std::vector<double>& out) { sp->apply(in, out); };
      }
      break;
    }
  }
  CgReport rep = pcg(apply_op, precond, project, b, x, opts.tol, opts.max_iter, opts.record_history);
  if (!rep.converged)
    throw SolverError("conjugate gradients did not reach the requested tolerance", rep.residual, rep.iterations);
  return rep;
}

template <int D>
Solution<D> package(const StiffnessOperator<D>& op, std::vector<double> x, const CgReport& rep) {
  Solution<D> s;
  s.u = NodeField<D>(op.grid(), op.periodic());
  s.u.values = std::move(x);
  s.gradient = op.gradient(s.u.values);
  s.flux = op.flux(s.gradient);
  s.residual = rep.residual;
  s.iterations = rep.iterations;
  s.report = rep;
  return s;
}

template <int D>
MatrixField<D> local_field(const CoefficientField<D>& a, const TriadicCube<D>& cube) {
  return restrict_to(a.a, cube);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public solves.

/// Dirichlet problem with boundary values taken from `data` (a full node field
/// on the cube's grid; interior values are ignored).
template <int D>
Solution<D> solve_dirichlet_data(const CoefficientField<D>& a, const TriadicCube<D>& cube, const NodeField<D>& data,
                                 const SolveOptions& opts = {}) {
  const MatrixField<D> local = detail::local_field(a, cube);
  require(!data.periodic && data.grid == local.grid, "boundary data must live on the cube's node grid");
  StiffnessOperator<D> op(local, false);
  const auto mask = detail::boundary_mask<D>(local.grid);
  std::vector<double> lift(data.values.size(), 0.0);
  for (std::size_t i = 0; i < lift.size(); ++i)
    if (mask[i]) lift[i] = data.values[i];
  std::vector<double> b;
  op.apply(lift, b);
  for (auto& v : b) v = -v;
  std::vector<double> x(lift.size(), 0.0);
  const CgReport rep = detail::solve_system(op, Topology::dirichlet, b, x, opts);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += lift[i];
  Solution<D> s = detail::package(op, std::move(x), rep);
  s.energy = op.energy(s.u.values);
  return s;
}

/// Minimiser of mean 1/2 Du.aDu over u = p.x on the boundary; energy = mu(U,p).
template <int D>
Solution<D> solve_dirichlet_affine(const CoefficientField<D>& a, const TriadicCube<D>& cube, const std::type_identity_t<Vec<D>>& p,
                                   const SolveOptions& opts = {}) {
  const GridSpec<D> g(cube, a.grid().k);
  return solve_dirichlet_data(a, cube, affine_nodes<D>(g, p), opts);
}

/// Maximiser of mean(-1/2 Dw.aDw + q.Dw) over mean-zero w; energy = mu*(U,q).
/// A Galerkin step on the affine functions makes mean(a Dw) = q exact.
template <int D>
Solution<D> solve_neumann_affine(const CoefficientField<D>& a, const TriadicCube<D>& cube, const std::type_identity_t<Vec<D>>& q,
                                 const SolveOptions& opts = {}) {
  const MatrixField<D> local = detail::local_field(a, cube);
  StiffnessOperator<D> op(local, false);
  const VectorField<D> qf(local.grid, q);
  const std::vector<double> b = op.transpose_gradient(qf);
  std::vector<double> x(b.size(), 0.0);
  const CgReport rep = detail::solve_system(op, Topology::neumann, b, x, opts);
  std::vector<std::vector<double>> planes;
  for (int i = 0; i < D; ++i) planes.push_back(affine_nodes<D>(local.grid, unit<D>(i)).values);
  LinearMap apply_op = [&op](const std::vector<double>& in, std::vector<double>& out) { op.apply(in, out); };
  galerkin_correct(apply_op, planes, b, x);
  detail::normalize_mean_zero<D>(local.grid, false, x);
  Solution<D> s = detail::package(op, std::move(x), rep);
  double acc = 0.0;
  for (Index c = 0; c < s.gradient.size(); ++c)
    acc += -0.5 * s.gradient[c].dot(s.flux[c]) + q.dot(s.gradient[c]);
  s.energy = acc / static_cast<double>(s.gradient.size());
  return s;
}

/// Neumann problem with a general node load: maximises
/// -1/2 mean(Dw.aDw) + <load, w>, where <.,.> is the volume-normalised node
/// pairing. Components of the load along ker G are discarded.
template <int D>
Solution<D> solve_neumann_load(const CoefficientField<D>& a, const TriadicCube<D>& cube, const NodeField<D>& load,
                               const SolveOptions& opts = {}) {
  const MatrixField<D> local = detail::local_field(a, cube);
  require(!load.periodic && load.grid == local.grid, "load must live on the cube's node grid");
  StiffnessOperator<D> op(local, false);
  std::vector<double> x(load.values.size(), 0.0);
  const CgReport rep = detail::solve_system(op, Topology::neumann, load.values, x, opts);
  detail::normalize_mean_zero<D>(local.grid, false, x);
  Solution<D> s = detail::package(op, std::move(x), rep);
  s.energy = op.energy(s.u.values);
  return s;
}

/// Periodic cell problem -div a(e + D phi) = 0 on the field's cube as a torus.
/// Returns phi (mean zero), gradient e + D phi, flux a(e + D phi) and the
/// energy mean 1/2 (e + D phi).a(e + D phi).
template <int D>
Solution<D> solve_periodic_cell(const CoefficientField<D>& a, const std::type_identity_t<Vec<D>>& e, const SolveOptions& opts = {}) {
  StiffnessOperator<D> op(a.a, true);
  VectorField<D> ae(a.grid(), Vec<D>::Zero());
  for (Index c = 0; c < ae.size(); ++c) ae[c] = -(a[c] * e);
  const std::vector<double> b = op.transpose_gradient(ae);
  std::vector<double> x(b.size(), 0.0);
  const CgReport rep = detail::solve_system(op, Topology::periodic, b, x, opts);
  detail::normalize_mean_zero<D>(a.grid(), true, x);
  Solution<D> s = detail::package(op, std::move(x), rep);
  double acc = 0.0;
  for (Index c = 0; c < s.gradient.size(); ++c) {
    s.gradient[c] += e;
    s.flux[c] = a[c] * s.gradient[c];
    acc += 0.5 * s.gradient[c].dot(s.flux[c]);
  }
  s.energy = acc / static_cast<double>(s.gradient.size());
  return s;
}

/// -div(a D psi) = div f in the weak sense mean(Dphi.aDpsi) = -mean(Dphi.f),
/// with zero Dirichlet data or on the cube as a torus (psi of mean zero).
template <int D>
Solution<D> solve_forced(const CoefficientField<D>& a, const TriadicCube<D>& cube, const VectorField<D>& f, ForcingBC bc,
                         const SolveOptions& opts = {}) {
  const MatrixField<D> local = detail::local_field(a, cube);
  const bool periodic = bc == ForcingBC::periodic;
  StiffnessOperator<D> op(local, periodic);
  const VectorField<D> floc = f.grid == local.grid ? f : restrict_to(f, cube);
  std::vector<double> b = op.transpose_gradient(floc);
  for (auto& v : b) v = -v;
  std::vector<double> x(b.size(), 0.0);
  const CgReport rep = detail::solve_system(op, periodic ? Topology::periodic : Topology::dirichlet, b, x, opts);
  if (periodic) detail::normalize_mean_zero<D>(local.grid, true, x);
  Solution<D> s = detail::package(op, std::move(x), rep);
  s.energy = op.energy(s.u.values);
  return s;
}

/// Five-point cell Laplacian on the cube of `rhs` treated as a torus.
template <int D>
ScalarField<D> periodic_laplacian(const ScalarField<D>& u) {
  const GridSpec<D>& g = u.grid;
  const long n = g.n();
  const double inv_h2 = 1.0 / (g.h() * g.h());
  ScalarField<D> out(g, 0.0);
  IVec<D> c{};
  Index flat = 0;
  do {
    double acc = 0.0;
    for (int a = 0; a < D; ++a) {
      IVec<D> lo = c, hi = c;
      lo[a] -= 1;
      hi[a] += 1;
      acc += u[flatten_wrapped<D>(lo, n)] + u[flatten_wrapped<D>(hi, n)] - 2.0 * u[flat];
    }
    out[flat++] = inv_h2 * acc;
  } while (advance<D>(c, n));
  return out;
}

/// Mean-zero periodic solution of -Lap u = rhs with the five-point cell
/// Laplacian; the FFT inverse is wrapped in CG to certify the residual.
template <int D>
ScalarField<D> solve_poisson_periodic(const ScalarField<D>& rhs, const SolveOptions& opts = {}) {
  opts.validate();
  const GridSpec<D>& g = rhs.grid;
  require(g.n() >= 2, "periodic Poisson needs at least two cells per side");
  double mean = 0.0, scale = 0.0;
  for (double v : rhs.values) {
    mean += v;
    scale += std::abs(v);
  }
  mean /= static_cast<double>(rhs.size());
  scale /= static_cast<double>(rhs.size());
  if (std::abs(mean) > 1e-10 * std::max(scale, 1e-300)) throw ArgumentError("periodic Poisson right side has nonzero mean");
  SpectralPreconditioner<D> sp(g.n(), g.h(), Topology::periodic, ReferenceStencil::five_point);
  const std::vector<double> ones_unit(static_cast<std::size_t>(rhs.size()), 1.0 / std::sqrt(static_cast<double>(rhs.size())));
  Projection project = [&ones_unit](std::vector<double>& v) { detail::project_out({ones_unit}, v); };
  LinearMap apply_op = [&g](const std::vector<double>& in, std::vector<double>& out) {
    ScalarField<D> u(g, 0.0);
    u.values = in;
    const ScalarField<D> l = periodic_laplacian(u);
    out.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = -l.values[i];
  };
  LinearMap precond = [&sp](const std::vector<double>& in, std::vector<double>& out) { sp.apply(in, out); };
  std::vector<double> x(rhs.values.size(), 0.0);
  const CgReport rep = pcg(apply_op, precond, project, rhs.values, x, opts.tol, opts.max_iter, opts.record_history);
  if (!rep.converged) throw SolverError("periodic Poisson solve did not converge", rep.residual, rep.iterations);
  ScalarField<D> out(g, 0.0);
  out.values = std::move(x);
  return out;
}

/// Exact pseudo-inverse of G^T G on a periodic node grid (one FFT pair).
template <int D>
NodeField<D> invert_periodic_q1(const NodeField<D>& rhs) {
  require(rhs.periodic, "invert_periodic_q1 expects a periodic node field");
  const GridSpec<D>& g = rhs.grid;
  SpectralPreconditioner<D> sp(g.n(), g.h(), Topology::periodic, ReferenceStencil::q1_center);
  NodeField<D> out(g, true);
  sp.apply(rhs.values, out.values);
  return out;
}

}  // namespace hlab
