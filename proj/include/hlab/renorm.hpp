#pragma once

// Heat-kernel coarsening: Gaussian smoothing at scale r, the coarse-grained
// field b_r, the minimal-scale proxy and the fluctuation cascade.
//
// Phi_r(x) = (4 pi r^2)^{-d/2} exp(-|x|^2 / 4r^2), i.e. variance 2r^2 per
// coordinate, sampled at cell offsets and truncated at six standard deviations.

#include "hlab/coarse.hpp"
#include "hlab/common.hpp"
#include "hlab/correctors.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace hlab {

/// Normalised 1D weights of Phi_r on offsets -R..R (in cells of size h).
struct HeatKernel1D {
  double r = 0.0;
  double h = 1.0;
  long radius = 0;
  std::vector<double> weights;  // index j + radius
  double truncation_tail = 0.0;  // continuous mass beyond the support, all axes

  HeatKernel1D() = default;
  HeatKernel1D(double r_, double h_, int dim) : r(r_), h(h_) {
    if (!(r_ >= h_)) throw ArgumentError("heat kernel radius must be at least one grid cell");
    const double sigma = std::sqrt(2.0) * r;
    radius = static_cast<long>(std::ceil(6.0 * sigma / h));
    weights.resize(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long j = -radius; j <= radius; ++j) {
      const double x = static_cast<double>(j) * h;
      const double w = std::exp(-x * x / (4.0 * r * r));
      weights[static_cast<std::size_t>(j + radius)] = w;
      sum += w;
    }
    for (auto& w : weights) w /= sum;
    const double tail1 = std::erfc((static_cast<double>(radius) + 0.5) * h / (sigma * std::sqrt(2.0)));
    truncation_tail = 1.0 - std::pow(1.0 - tail1, dim);
  }

  double operator()(long j) const { return std::labs(j) > radius ? 0.0 : weights[static_cast<std::size_t>(j + radius)]; }
};

struct ConvolutionReport {
  long radius_cells = 0;
  double truncation_tail = 0.0;
  double max_boundary_loss = 0.0;  // worst kernel mass outside the domain (zero extension)
};

namespace detail {

template <int D, class T>
void convolve_axis(std::vector<T>& values, long n, int axis, const HeatKernel1D& k, bool periodic) {
  const std::vector<T> src = values;
  const T zero = zero_like(src.front());
  IVec<D> idx{};
  Index flat = 0;
  do {
    T acc = zero;
    for (long j = -k.radius; j <= k.radius; ++j) {
      IVec<D> s = idx;
      s[axis] += j;
      if (periodic) {
        s[axis] = floor_mod(s[axis], n);
      } else if (s[axis] < 0 || s[axis] >= n) {
        continue;
      }
      acc += k(j) * src[static_cast<std::size_t>(flatten<D>(s, n))];
    }
    values[static_cast<std::size_t>(flat++)] = acc;
  } while (advance<D>(idx, n));
}

inline double worst_inside_mass(const HeatKernel1D& k, long n) {
  double worst = 1.0;
  for (long i = 0; i < n; ++i) {
    double m = 0.0;
    for (long j = -k.radius; j <= k.radius; ++j)
      if (i + j >= 0 && i + j < n) m += k(j);
    worst = std::min(worst, m);
  }
  return worst;
}

}  // namespace detail

/// Separable convolution of a cell field with Phi_r; periodic wrap on tori,
/// zero extension otherwise (the lost kernel mass is reported).
template <int D, class T>
CellField<D, T> heat_convolve(const CellField<D, T>& f, double r, bool periodic, ConvolutionReport* report = nullptr) {
  const HeatKernel1D k(r, f.grid.h(), D);
  CellField<D, T> out = f;
  for (int a = 0; a < D; ++a) detail::convolve_axis<D, T>(out.values, f.grid.n(), a, k, periodic);
  if (report) {
    report->radius_cells = k.radius;
    report->truncation_tail = k.truncation_tail;
    report->max_boundary_loss = periodic ? 0.0 : 1.0 - std::pow(detail::worst_inside_mass(k, f.grid.n()), D);
  }
  return out;
}

/// Node-field variant (periodic node grids wrap, others zero-extend).
template <int D>
NodeField<D> heat_convolve(const NodeField<D>& f, double r, ConvolutionReport* report = nullptr) {
  const HeatKernel1D k(r, f.grid.h(), D);
  NodeField<D> out = f;
  const long n = f.grid.nodes_per_side(f.periodic);
  for (int a = 0; a < D; ++a) detail::convolve_axis<D, double>(out.values, n, a, k, f.periodic);
  if (report) {
    report->radius_cells = k.radius;
    report->truncation_tail = k.truncation_tail;
    report->max_boundary_loss = f.periodic ? 0.0 : 1.0 - std::pow(detail::worst_inside_mass(k, n), D);
  }
  return out;
}

/// (f * Phi_r)(x_c) at one cell of a torus field by direct summation.
template <int D, class T>
T heat_average_at(const CellField<D, T>& f, const HeatKernel1D& k, const IVec<D>& cell) {
  const long n = f.grid.n();
  const long w = 2 * k.radius + 1;
  T acc = zero_like(f.values.front());
  IVec<D> j{};
  do {
    double weight = 1.0;
    IVec<D> s{};
    for (int a = 0; a < D; ++a) {
      const long off = j[a] - k.radius;
      weight *= k(off);
      s[a] = cell[a] + off;
    }
    acc += weight * f[flatten_wrapped<D>(s, n)];
  } while (advance<D>(j, w));
  return acc;
}

/// Cell of `g` whose closure contains the point x (ties go to the upper cell).
template <int D>
IVec<D> cell_containing(const GridSpec<D>& g, const Vec<D>& x) {
  IVec<D> c{};
  for (int a = 0; a < D; ++a) {
    const long i = static_cast<long>(std::floor((x(a) - g.cube.lower(a)) / g.h()));
    if (i < 0 || i >= g.n()) throw ArgumentError("point lies outside the grid");
    c[a] = i;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Coarse-grained field b_r.

template <int D>
struct HeatSample {
  IVec<D> cell{};
  Mat<D> G = Mat<D>::Zero();  // columns: smoothed gradients of the corrected planes
  Mat<D> Q = Mat<D>::Zero();  // columns: smoothed fluxes
  Mat<D> b = Mat<D>::Zero();  // Q G^{-1}, or abar where degenerate
  Mat<D> blended = Mat<D>::Zero();
  double cond = 0.0;
  bool degenerate = false;
  bool within_envelope = true;  // |b - abar| <= Lambda d
  double chi = 1.0;
};

template <int D>
struct HeatCoarsening {
  double r = 0.0;
  long radius_cells = 0;
  double truncation_tail = 0.0;
  Mat<D> abar = Mat<D>::Zero();
  std::vector<HeatSample<D>> samples;

  std::size_t degenerate_count() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.degenerate ? 1 : 0;
    return n;
  }
};

struct HeatCoarseningOptions {
  double cond_limit = 1e3;
  double Lambda = 0.0;  // envelope scale; 0 means max eigenvalue of abar times 4
};

inline double chi_cutoff(double minimal_scale, double r) { return std::clamp(2.0 - minimal_scale / r, 0.0, 1.0); }

/// b_r at the given cells from periodic correctors on a torus of side >= 12 r.
/// `minimal_scale`, when given, returns the proxy scale at a cell and sets the
/// blend weight chi = min(1, (2 - X/r)_+); degenerate points get chi = 0.
template <int D>
HeatCoarsening<D> coarse_grained_b(const CorrectorSet<D>& set, double r, const std::vector<IVec<D>>& cells,
                                   const HeatCoarseningOptions& opts = {},
                                   const std::function<double(const IVec<D>&)>& minimal_scale = {}) {
  require(set.mode == CorrectorMode::periodic, "coarse_grained_b needs periodic correctors");
  if (set.grid.cube.side() < 12.0 * r) throw ArgumentError("torus side must be at least 12 r");
  const HeatKernel1D k(r, set.grid.h(), D);
  HeatCoarsening<D> hc;
  hc.r = r;
  hc.radius_cells = k.radius;
  hc.truncation_tail = k.truncation_tail;
  hc.abar = set.abar;
  const double Lambda = opts.Lambda > 0.0 ? opts.Lambda : 4.0 * max_eig<D>(set.abar);
  for (const auto& c : cells) {
    HeatSample<D> s;
    s.cell = c;
    for (int j = 0; j < D; ++j) {
      s.G.col(j) = heat_average_at<D, Vec<D>>(set.gradient[static_cast<std::size_t>(j)], k, c);
      s.Q.col(j) = heat_average_at<D, Vec<D>>(set.flux[static_cast<std::size_t>(j)], k, c);
    }
    Eigen::JacobiSVD<Mat<D>> svd(s.G);
    const auto sv = svd.singularValues();
    s.cond = sv(D - 1) > 0.0 ? sv(0) / sv(D - 1) : std::numeric_limits<double>::infinity();
    s.degenerate = !(s.cond <= opts.cond_limit);
    s.b = s.degenerate ? set.abar : Mat<D>(s.Q * s.G.inverse());
    s.within_envelope = sym_norm<D>(0.5 * (s.b + s.b.transpose()) - set.abar) <= Lambda * D &&
                        (s.b - set.abar).norm() <= Lambda * D * std::sqrt(static_cast<double>(D));
    s.chi = s.degenerate ? 0.0 : (minimal_scale ? chi_cutoff(minimal_scale(c), r) : 1.0);
    s.blended = s.chi * s.b + (1.0 - s.chi) * set.abar;
    hc.samples.push_back(s);
  }
  return hc;
}

// ---------------------------------------------------------------------------
// Minimal-scale proxy.

struct MinimalScaleProxy {
  int level = -1;  // -1: no admissible level
  double scale = std::numeric_limits<double>::infinity();
  double threshold = 0.0;
  std::vector<double> max_gap;  // per level n, max over windows of |a - a*|

  bool finite() const { return level >= 0; }
};

/// Smallest n such that every level n' in [n, region level] has
/// max_z |a(z + box_n') - a*(z + box_n')| <= delta (Lambda - lambda) over the
/// triadic windows of `region`.
template <int D>
MinimalScaleProxy minimal_scale_proxy(const CoefficientField<D>& a, const TriadicCube<D>& region, double delta,
                                      const CoarseOptions& opts = {}) {
  if (!(delta > 0.0 && delta <= 0.5)) throw ArgumentError("minimal_scale_proxy needs delta in (0, 1/2]");
  MinimalScaleProxy out;
  out.threshold = delta * (a.Lambda - a.lambda);
  for (int n = 0; n <= region.level; ++n) {
    double worst = 0.0;
    for (const auto& r : level_matrices(a, region, n, opts)) worst = std::max(worst, sym_norm<D>(r.a - r.a_star));
    out.max_gap.push_back(worst);
  }
  const double slack = 10.0 * opts.solve.tol;
  for (int n = region.level; n >= 0; --n) {
    if (out.max_gap[static_cast<std::size_t>(n)] > out.threshold + slack) break;
    out.level = n;
  }
  if (out.finite()) out.scale = static_cast<double>(ipow3(out.level));
  return out;
}

// ---------------------------------------------------------------------------
// Fluctuation cascade.

struct CascadeOptions {
  int M = 6;                        // torus box_M
  int k = 1;                        // cells per unit length
  std::vector<double> radii{4, 8, 16, 32};
  std::vector<int> levels{2, 3, 4, 5};  // e1.a(box_n)e1 at these n
  std::size_t seeds = 64;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  int bootstrap = 200;
  SolveOptions solve{};
};

template <int D>
struct FluctuationTable {
  std::vector<double> radii;
  std::vector<int> levels;
  std::vector<std::uint64_t> seeds;
  // samples_b[r][entry][member], entry = i*D + j, of the blended b_r(0)
  std::vector<std::vector<std::vector<double>>> samples_b;
  // samples_a[level][member] = e1.a(box_n)e1
  std::vector<std::vector<double>> samples_a;
  std::vector<Mat<D>> mean_b, variance_b;
  std::vector<double> mean_a, variance_a;
  std::vector<FitTarget> fit_b;  // per entry, slope of log variance vs log r
  FitTarget fit_a;               // slope of log variance vs log 3^n
  std::size_t degenerate = 0;

  nlohmann::json summary() const {
    nlohmann::json fb = nlohmann::json::array();
    for (std::size_t e = 0; e < fit_b.size(); ++e) {
      nlohmann::json f = fit_b[e];
      f["i"] = e / D + 1;
      f["j"] = e % D + 1;
      fb.push_back(f);
    }
    return {{"radii", radii}, {"levels", levels}, {"members", seeds.size()}, {"degenerate_samples", degenerate},
            {"fit_b", fb},    {"fit_a", fit_a}};
  }

  void write_csv(std::ostream& os) const {
    os.precision(17);
    os << "observable,scale,i,j,mean,variance\n";
    for (std::size_t r = 0; r < radii.size(); ++r)
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j)
          os << "b_r," << radii[r] << ',' << i + 1 << ',' << j + 1 << ',' << mean_b[r](i, j) << ',' << variance_b[r](i, j) << '\n';
    for (std::size_t n = 0; n < levels.size(); ++n)
      os << "a_box," << ipow3(levels[n]) << ",1,1," << mean_a[n] << ',' << variance_a[n] << '\n';
  }
};

template <int D>
struct CascadeMember {
  std::vector<Mat<D>> b;  // per radius
  std::vector<double> a11;
  std::size_t degenerate = 0;
};

/// One realization: periodic correctors on the torus box_M, b_r at the
/// origin cell for every radius, and e1.a(box_n)e1 on the centred subcubes.
template <int D>
CascadeMember<D> cascade_member(const FieldSpec& spec, const CascadeOptions& opt, std::uint64_t seed) {
  const GridSpec<D> g(opt.M, opt.k);
  const auto field = generate_field<D>(spec, g, seed);
  CascadeMember<D> m;
  if (!opt.radii.empty()) {
    CorrectorOptions co;
    co.solve = opt.solve;
    co.flux_correctors = false;
    const auto set = periodic_homogenized_matrix(field, co);
    const IVec<D> origin = cell_containing<D>(g, Vec<D>::Zero());
    HeatCoarseningOptions ho;
    ho.Lambda = field.Lambda;
    for (double r : opt.radii) {
      const auto hc = coarse_grained_b(set, r, {origin}, ho);
      m.b.push_back(hc.samples.front().blended);
      m.degenerate += hc.degenerate_count();
    }
  }
  for (int n : opt.levels) {
    require(n <= opt.M, "cascade level exceeds the torus level");
    const auto v = solve_dirichlet_affine(field, TriadicCube<D>{n, {}}, unit<D>(0), opt.solve);
    m.a11.push_back(2.0 * v.energy);
  }
  return m;
}

namespace detail {

/// Variance slope, or a NaN slope with method "undefined" when some variance
/// vanishes (deterministic observables).
inline FitTarget guarded_variance_slope(const std::vector<double>& scales, const std::vector<std::vector<double>>& rows,
                                        const RateFitOptions& fo) {
  try {
    return variance_slope(scales, rows, fo);
  } catch (const ArgumentError&) {
    FitTarget f;
    f.expected = fo.expected;
    f.band_lo = fo.band_lo;
    f.band_hi = fo.band_hi;
    f.slope = f.ci_lo = f.ci_hi = std::numeric_limits<double>::quiet_NaN();
    f.ci_method = "undefined";
    f.points = scales.size();
    return f;
  }
}

}  // namespace detail

template <int D>
FluctuationTable<D> fluctuation_cascade(const FieldSpec& spec, const CascadeOptions& opt) {
  require(opt.seeds >= 1, "fluctuation cascade needs at least one seed");
  for (std::size_t i = 1; i < opt.radii.size(); ++i) require(opt.radii[i] > opt.radii[i - 1], "radii must increase");
  const auto members = run_members<CascadeMember<D>>(opt.seeds, opt.master_seed, opt.jobs,
                                                     [&](std::uint64_t seed, std::size_t) { return cascade_member<D>(spec, opt, seed); });
  FluctuationTable<D> t;
  t.radii = opt.radii;
  t.levels = opt.levels;
  for (std::size_t i = 0; i < opt.seeds; ++i) t.seeds.push_back(member_seed(opt.master_seed, i));
  const std::size_t N = members.size();
  t.samples_b.assign(opt.radii.size(), std::vector<std::vector<double>>(static_cast<std::size_t>(D * D)));
  for (std::size_t r = 0; r < opt.radii.size(); ++r) {
    EnsembleStats st[D * D];
    for (std::size_t i = 0; i < N; ++i)
      for (int e = 0; e < D * D; ++e) {
        const double v = members[i].b[r](e / D, e % D);
        t.samples_b[r][static_cast<std::size_t>(e)].push_back(v);
        st[e].add(t.seeds[i], v);
      }
    Mat<D> mean, var;
    for (int e = 0; e < D * D; ++e) {
      mean(e / D, e % D) = st[e].mean();
      var(e / D, e % D) = st[e].variance();
    }
    t.mean_b.push_back(mean);
    t.variance_b.push_back(var);
  }
  t.samples_a.assign(opt.levels.size(), {});
  for (std::size_t n = 0; n < opt.levels.size(); ++n) {
    EnsembleStats st;
    for (std::size_t i = 0; i < N; ++i) {
      t.samples_a[n].push_back(members[i].a11[n]);
      st.add(t.seeds[i], members[i].a11[n]);
    }
    t.mean_a.push_back(st.mean());
    t.variance_a.push_back(st.variance());
  }
  for (const auto& m : members) t.degenerate += m.degenerate;
  RateFitOptions fo;
  fo.bootstrap = opt.bootstrap;
  fo.expected = -static_cast<double>(D);
  fo.band_lo = -2.7;
  fo.band_hi = -1.3;
  fo.seed = opt.master_seed;
  if (opt.radii.size() >= 3) {
    for (int e = 0; e < D * D; ++e) {
      std::vector<std::vector<double>> rows;
      for (std::size_t r = 0; r < opt.radii.size(); ++r) rows.push_back(t.samples_b[r][static_cast<std::size_t>(e)]);
      t.fit_b.push_back(detail::guarded_variance_slope(opt.radii, rows, fo));
    }
  }
  if (opt.levels.size() >= 3) {
    std::vector<double> scales;
    for (int n : opt.levels) scales.push_back(static_cast<double>(ipow3(n)));
    t.fit_a = detail::guarded_variance_slope(scales, t.samples_a, fo);
  }
  return t;
}

/// Shift of b_r(0) when the torus box_M is replaced by box_{M+1} carrying the
/// same realization (unit-cell values are keyed by absolute position).
template <int D>
double torus_shift(const FieldSpec& spec, int M, int k, double r, std::uint64_t seed, const SolveOptions& solve = {}) {
  CascadeOptions opt;
  opt.k = k;
  opt.radii = {r};
  opt.levels = {};
  opt.solve = solve;
  opt.M = M;
  const auto small = cascade_member<D>(spec, opt, seed);
  opt.M = M + 1;
  const auto big = cascade_member<D>(spec, opt, seed);
  return (small.b.front() - big.b.front()).norm();
}

}  // namespace hlab
