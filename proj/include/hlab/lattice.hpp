#pragma once

// Triadic-cube geometry, grid functions and the discrete calculus shared by
// every solver in the library.
//
// Conventions
//   * The macro cube of level m centred at z is z + (-3^m/2, 3^m/2)^d.
//   * A grid with resolution k has N = 3^m k cells per side and spacing 1/k,
//     so every triadic subcube of level 0 <= n <= m is a union of cells.
//   * Cell and node arrays are row-major in (x_1, ..., x_d), x_d fastest.
//   * Node fields on a torus have N^d values (node i identified with i mod N);
//     otherwise (N+1)^d values.
//   * The cell gradient of a node field is the gradient of its Q1
//     interpolant at the cell centre.

#include "hlab/common.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace hlab {

template <int D>
struct TriadicCube {
  static_assert(D == 2 || D == 3, "only d = 2 and d = 3 are supported");

  int level = 0;
  IVec<D> center{};

  double side() const { return static_cast<double>(ipow3(level)); }
  double lower(int a) const { return static_cast<double>(center[a]) - 0.5 * side(); }

  /// Whether `inner` lies inside this cube.
  bool contains(const TriadicCube& inner) const {
    if (inner.level > level) return false;
    const long half_outer = ipow3(level);
    const long half_inner = ipow3(inner.level);
    for (int a = 0; a < D; ++a) {
      // compare 2*|dz| + 3^n <= 3^m to stay in integers
      const long dz = 2 * std::labs(inner.center[a] - center[a]);
      if (dz + half_inner > half_outer) return false;
    }
    return true;
  }

  bool operator==(const TriadicCube& o) const { return level == o.level && center == o.center; }
};

template <int D>
struct GridSpec {
  TriadicCube<D> cube{};
  int k = 1;

  GridSpec() = default;
  GridSpec(int m, int k_, IVec<D> center = {}) : cube{m, center}, k(k_) { validate(); }
  GridSpec(const TriadicCube<D>& c, int k_) : cube(c), k(k_) { validate(); }

  void validate() const {
    require(cube.level >= 0, "grid level must be >= 0");
    require(k >= 1, "grid resolution must be >= 1");
  }

  int m() const { return cube.level; }
  long n() const { return ipow3(cube.level) * k; }
  double h() const { return 1.0 / k; }
  Index cell_count() const { return ipow<D>(n()); }
  Index node_count(bool periodic) const { return ipow<D>(periodic ? n() : n() + 1); }
  long nodes_per_side(bool periodic) const { return periodic ? n() : n() + 1; }

  double node_coord(int a, long i) const { return cube.lower(a) + static_cast<double>(i) * h(); }
  double cell_coord(int a, long i) const { return cube.lower(a) + (static_cast<double>(i) + 0.5) * h(); }

  bool operator==(const GridSpec& o) const { return cube == o.cube && k == o.k; }
  bool operator!=(const GridSpec& o) const { return !(*this == o); }
};

// ---------------------------------------------------------------------------
// Multi-index helpers.

template <int D>
IVec<D> unflatten(Index flat, long n) {
  IVec<D> idx{};
  for (int a = D - 1; a >= 0; --a) {
    idx[a] = static_cast<long>(flat % n);
    flat /= n;
  }
  return idx;
}

template <int D>
Index flatten(const IVec<D>& idx, long n) {
  Index flat = 0;
  for (int a = 0; a < D; ++a) flat = flat * n + idx[a];
  return flat;
}

template <int D>
Index flatten_wrapped(IVec<D> idx, long n) {
  for (int a = 0; a < D; ++a) idx[a] = floor_mod(idx[a], n);
  return flatten<D>(idx, n);
}

template <int D>
bool advance(IVec<D>& idx, long n) {
  for (int a = D - 1; a >= 0; --a) {
    if (++idx[a] < n) return true;
    idx[a] = 0;
  }
  return false;
}

template <int D>
Vec<D> cell_center(const GridSpec<D>& g, const IVec<D>& c) {
  Vec<D> x;
  for (int a = 0; a < D; ++a) x(a) = g.cell_coord(a, c[a]);
  return x;
}

template <int D>
Vec<D> node_position(const GridSpec<D>& g, const IVec<D>& i) {
  Vec<D> x;
  for (int a = 0; a < D; ++a) x(a) = g.node_coord(a, i[a]);
  return x;
}

inline constexpr int corner_sign(int corner, int a) { return ((corner >> a) & 1) ? 1 : -1; }

template <int D>
using Corners = std::array<Index, (1 << D)>;

/// Node indices of the 2^d corners of cell `c`. Bit a of the corner id is the
/// offset in direction a.
template <int D>
Corners<D> cell_corners(const IVec<D>& c, long n_cells, bool periodic) {
  Corners<D> out{};
  const long nn = periodic ? n_cells : n_cells + 1;
  for (int s = 0; s < (1 << D); ++s) {
    Index flat = 0;
    for (int a = 0; a < D; ++a) {
      long i = c[a] + ((s >> a) & 1);
      if (periodic && i == n_cells) i = 0;
      flat = flat * nn + i;
    }
    out[static_cast<std::size_t>(s)] = flat;
  }
  return out;
}

/// Visits every cell in row-major order with its flat index and corner nodes.
template <int D, class F>
void for_each_cell(const GridSpec<D>& g, bool periodic, F&& fn) {
  const long n = g.n();
  IVec<D> c{};
  Index flat = 0;
  do {
    fn(flat, c, cell_corners<D>(c, n, periodic));
    ++flat;
  } while (advance<D>(c, n));
}

// ---------------------------------------------------------------------------
// Grid functions.

template <int D, class T>
struct CellField {
  GridSpec<D> grid{};
  std::vector<T> values;

  CellField() = default;
  explicit CellField(const GridSpec<D>& g, T init = T{})
      : grid(g), values(static_cast<std::size_t>(g.cell_count()), init) {}

  Index size() const { return static_cast<Index>(values.size()); }
  T& operator[](Index i) { return values[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return values[static_cast<std::size_t>(i)]; }
};

template <int D>
using ScalarField = CellField<D, double>;
template <int D>
using VectorField = CellField<D, Vec<D>>;
template <int D>
using MatrixField = CellField<D, Mat<D>>;

template <int D>
VectorField<D> zero_vector_field(const GridSpec<D>& g) {
  return VectorField<D>(g, Vec<D>::Zero());
}

template <int D>
struct NodeField {
  GridSpec<D> grid{};
  bool periodic = false;
  std::vector<double> values;

  NodeField() = default;
  NodeField(const GridSpec<D>& g, bool per, double init = 0.0)
      : grid(g), periodic(per), values(static_cast<std::size_t>(g.node_count(per)), init) {}

  long per_side() const { return grid.nodes_per_side(periodic); }
  Index size() const { return static_cast<Index>(values.size()); }
  double& operator[](Index i) { return values[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return values[static_cast<std::size_t>(i)]; }
};

/// Node field sampled from a function of position.
template <int D>
NodeField<D> sample_nodes(const GridSpec<D>& g, bool periodic, const std::function<double(const Vec<D>&)>& f) {
  NodeField<D> u(g, periodic);
  const long nn = u.per_side();
  IVec<D> i{};
  Index flat = 0;
  do {
    u[flat++] = f(node_position<D>(g, i));
  } while (advance<D>(i, nn));
  return u;
}

/// The affine function x -> p.x on the nodes of a non-periodic grid.
template <int D>
NodeField<D> affine_nodes(const GridSpec<D>& g, const Vec<D>& p) {
  return sample_nodes<D>(g, false, [&](const Vec<D>& x) { return p.dot(x); });
}

template <int D>
bool is_boundary_node(const IVec<D>& i, long n_cells) {
  for (int a = 0; a < D; ++a)
    if (i[a] == 0 || i[a] == n_cells) return true;
  return false;
}

inline double sq_norm(double x) { return x * x; }
template <int D>
double sq_norm(const Vec<D>& x) { return x.squaredNorm(); }
template <int D>
double sq_norm(const Mat<D>& x) { return x.squaredNorm(); }

template <class T>
T zero_like(const T& sample) {
  if constexpr (std::is_arithmetic_v<T>) {
    (void)sample;
    return T{0};
  } else {
    return T::Zero();
  }
}

// ---------------------------------------------------------------------------
// Discrete calculus.

/// Cell-centre gradient of the Q1 interpolant.
template <int D>
VectorField<D> discrete_gradient(const NodeField<D>& u) {
  VectorField<D> g(u.grid, Vec<D>::Zero());
  const double scale = 1.0 / (u.grid.h() * static_cast<double>(1 << (D - 1)));
  for_each_cell<D>(u.grid, u.periodic, [&](Index c, const IVec<D>&, const Corners<D>& nodes) {
    Vec<D> grad = Vec<D>::Zero();
    for (int s = 0; s < (1 << D); ++s) {
      const double v = u[nodes[static_cast<std::size_t>(s)]];
      for (int a = 0; a < D; ++a) grad(a) += corner_sign(s, a) * v;
    }
    g[c] = scale * grad;
  });
  return g;
}

/// Negative adjoint of discrete_gradient under the volume-normalised cell and
/// node inner products. On non-periodic grids the value is reported on
/// interior nodes only; boundary nodes carry the boundary term and are zero.
template <int D>
NodeField<D> discrete_divergence(const VectorField<D>& g, bool periodic) {
  NodeField<D> div(g.grid, periodic);
  const double scale = 1.0 / (g.grid.h() * static_cast<double>(1 << (D - 1)));
  for_each_cell<D>(g.grid, periodic, [&](Index c, const IVec<D>&, const Corners<D>& nodes) {
    for (int s = 0; s < (1 << D); ++s) {
      double acc = 0.0;
      for (int a = 0; a < D; ++a) acc += corner_sign(s, a) * g[c](a);
      div[nodes[static_cast<std::size_t>(s)]] -= scale * acc;
    }
  });
  if (!periodic) {
    const long nc = g.grid.n();
    IVec<D> i{};
    Index flat = 0;
    do {
      if (is_boundary_node<D>(i, nc)) div[flat] = 0.0;
      ++flat;
    } while (advance<D>(i, nc + 1));
  }
  return div;
}

/// Values of the Q1 interpolant at cell centres.
template <int D>
ScalarField<D> center_values(const NodeField<D>& u) {
  ScalarField<D> f(u.grid, 0.0);
  const double w = 1.0 / static_cast<double>(1 << D);
  for_each_cell<D>(u.grid, u.periodic, [&](Index c, const IVec<D>&, const Corners<D>& nodes) {
    double acc = 0.0;
    for (Index n : nodes) acc += u[n];
    f[c] = w * acc;
  });
  return f;
}

template <int D, class T>
T field_mean(const CellField<D, T>& f) {
  T acc = zero_like(f.values.front());
  for (const auto& v : f.values) acc += v;
  return acc / static_cast<double>(f.size());
}

/// Volume-normalised L2 norm.
template <int D, class T>
double l2_norm(const CellField<D, T>& f) {
  double acc = 0.0;
  for (const auto& v : f.values) acc += sq_norm(v);
  return std::sqrt(acc / static_cast<double>(f.size()));
}

/// Volume-normalised L2 norm of f - (f).
template <int D, class T>
double l2_oscillation(const CellField<D, T>& f) {
  const T mean = field_mean(f);
  double acc = 0.0;
  for (const auto& v : f.values) acc += sq_norm(T(v - mean));
  return std::sqrt(acc / static_cast<double>(f.size()));
}

template <int D, class T>
CellField<D, T> operator-(const CellField<D, T>& a, const CellField<D, T>& b) {
  require(a.grid == b.grid, "field grids differ");
  CellField<D, T> out(a.grid, zero_like(a.values.front()));
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <int D>
double dot(const VectorField<D>& a, const VectorField<D>& b) {
  require(a.grid == b.grid, "field grids differ");
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i) acc += a[i].dot(b[i]);
  return acc / static_cast<double>(a.size());
}

template <int D>
double dot(const NodeField<D>& a, const NodeField<D>& b) {
  require(a.grid == b.grid && a.periodic == b.periodic, "node field layouts differ");
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc / static_cast<double>(a.grid.cell_count());
}

// ---------------------------------------------------------------------------
// Triadic geometry.

/// The 3^{d(level - n)} level-n subcubes tiling `cube`, row-major by centre.
template <int D>
std::vector<TriadicCube<D>> triadic_partition(const TriadicCube<D>& cube, int n) {
  if (n < 0 || n > cube.level) throw ArgumentError("triadic_partition: level out of range");
  const long per_side = ipow3(cube.level - n);
  const long step = ipow3(n);
  std::vector<TriadicCube<D>> out;
  out.reserve(static_cast<std::size_t>(ipow<D>(per_side)));
  IVec<D> j{};
  do {
    TriadicCube<D> sub{n, {}};
    for (int a = 0; a < D; ++a) sub.center[a] = cube.center[a] + (2 * j[a] - (per_side - 1)) / 2 * step;
    out.push_back(sub);
  } while (advance<D>(j, per_side));
  return out;
}

/// Offset (in cells) of `sub` inside grid `g`.
template <int D>
IVec<D> cell_offset(const GridSpec<D>& g, const TriadicCube<D>& sub) {
  if (!g.cube.contains(sub)) throw ArgumentError("cube is not inside the grid");
  IVec<D> off{};
  for (int a = 0; a < D; ++a) {
    // (lower(sub) - lower(grid)) * k, kept integral
    const long twice = 2 * (sub.center[a] - g.cube.center[a]) - ipow3(sub.level) + ipow3(g.cube.level);
    off[a] = twice / 2 * g.k;
  }
  return off;
}

template <int D, class T>
CellField<D, T> restrict_to(const CellField<D, T>& f, const TriadicCube<D>& sub) {
  if (sub == f.grid.cube) return f;
  const IVec<D> off = cell_offset<D>(f.grid, sub);
  GridSpec<D> g(sub, f.grid.k);
  CellField<D, T> out(g, f.values.front());
  const long n = g.n();
  const long big = f.grid.n();
  IVec<D> c{};
  Index flat = 0;
  do {
    IVec<D> src{};
    for (int a = 0; a < D; ++a) src[a] = c[a] + off[a];
    out[flat++] = f[flatten<D>(src, big)];
  } while (advance<D>(c, n));
  return out;
}

template <int D, class T>
T cell_average(const CellField<D, T>& f, const TriadicCube<D>& cube) {
  return field_mean(restrict_to(f, cube));
}

/// Averages of f on every level-n subcube of the grid's cube, computed by
/// successive 3^d-block aggregation. Index layout matches triadic_partition.
template <int D, class T>
std::vector<std::vector<T>> level_averages(const CellField<D, T>& f) {
  const int m = f.grid.m();
  const long k = f.grid.k;
  std::vector<std::vector<T>> out(static_cast<std::size_t>(m + 1));
  const T zero = zero_like(f.values.front());
  // level 0 from cells
  {
    const long blocks = ipow3(m);
    std::vector<T> avg(static_cast<std::size_t>(ipow<D>(blocks)), zero);
    const long n = f.grid.n();
    IVec<D> c{};
    Index flat = 0;
    do {
      IVec<D> b{};
      for (int a = 0; a < D; ++a) b[a] = c[a] / k;
      avg[static_cast<std::size_t>(flatten<D>(b, blocks))] += f[flat++];
    } while (advance<D>(c, n));
    const double w = 1.0 / static_cast<double>(ipow<D>(k));
    for (auto& v : avg) v *= w;
    out[0] = std::move(avg);
  }
  for (int lv = 1; lv <= m; ++lv) {
    const long fine = ipow3(m - lv + 1);
    const long coarse = ipow3(m - lv);
    std::vector<T> avg(static_cast<std::size_t>(ipow<D>(coarse)), zero);
    IVec<D> c{};
    Index flat = 0;
    do {
      IVec<D> b{};
      for (int a = 0; a < D; ++a) b[a] = c[a] / 3;
      avg[static_cast<std::size_t>(flatten<D>(b, coarse))] += out[static_cast<std::size_t>(lv - 1)][static_cast<std::size_t>(flat++)];
    } while (advance<D>(c, fine));
    const double w = 1.0 / static_cast<double>(ipow<D>(3));
    for (auto& v : avg) v *= w;
    out[static_cast<std::size_t>(lv)] = std::move(avg);
  }
  return out;
}

/// Multiscale weak-norm estimator on `cube`:
///   ||f||_L2 + sum_{n<m} 3^n (mean_z |(f)_{z+box_n}|^2)^{1/2},
/// with all prefactor constants equal to one.
template <int D, class T>
double weak_norm_estimate(const CellField<D, T>& f, const TriadicCube<D>& cube) {
  const auto local = restrict_to(f, cube);
  double est = l2_norm(local);
  const auto avgs = level_averages(local);
  for (int n = 0; n < cube.level; ++n) {
    double acc = 0.0;
    for (const auto& v : avgs[static_cast<std::size_t>(n)]) acc += sq_norm(v);
    est += static_cast<double>(ipow3(n)) * std::sqrt(acc / static_cast<double>(avgs[static_cast<std::size_t>(n)].size()));
  }
  return est;
}

template <int D, class T>
double weak_norm_estimate(const CellField<D, T>& f) {
  return weak_norm_estimate(f, f.grid.cube);
}

}  // namespace hlab
