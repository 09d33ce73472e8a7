#pragma once

// Fast inverses of constant-coefficient reference operators on tensor grids,
// backed by FFTW. Used as CG preconditioners: for the cell-centre Q1 operator
// the preconditioned spectrum lies in [lambda, Lambda] regardless of grid size.

#include "hlab/common.hpp"
#include "hlab/lattice.hpp"

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

namespace hlab {

enum class Topology { dirichlet, neumann, periodic };

/// Which constant-coefficient stencil the preconditioner inverts.
enum class ReferenceStencil {
  q1_center,  // G^T G with G the cell-centre Q1 gradient (node unknowns)
  five_point  // nearest-neighbour graph Laplacian (cell-site unknowns)
};

namespace detail {

struct FftwBuffer {
  double* ptr = nullptr;
  explicit FftwBuffer(std::size_t n) : ptr(static_cast<double*>(fftw_malloc(sizeof(double) * std::max<std::size_t>(n, 1)))) {
    if (!ptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

/// Process-wide cache of FFTW plans keyed by (kind, dims). Plans are created
/// under a lock and executed through the thread-safe new-array interface.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan r2r(const std::vector<int>& dims, fftw_r2r_kind kind) {
    auto key = std::make_tuple(static_cast<int>(kind), dims);
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    auto it = r2r_.find(key);
    if (it != r2r_.end()) return it->second;
    std::size_t total = 1;
    for (int d : dims) total *= static_cast<std::size_t>(d);
    FftwBuffer in(total), out(total);
    std::vector<fftw_r2r_kind> kinds(dims.size(), kind);
    fftw_plan p = fftw_plan_r2r(static_cast<int>(dims.size()), dims.data(), in.ptr, out.ptr, kinds.data(), FFTW_ESTIMATE);
    r2r_.emplace(key, p);
    return p;
  }

  std::pair<fftw_plan, fftw_plan> r2c(const std::vector<int>& dims) {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    auto it = r2c_.find(dims);
    if (it != r2c_.end()) return it->second;
    std::size_t total = 1;
    for (int d : dims) total *= static_cast<std::size_t>(d);
    const std::size_t complex_total = total / static_cast<std::size_t>(dims.back()) * static_cast<std::size_t>(dims.back() / 2 + 1);
    FftwBuffer real(total);
    auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * complex_total));
    fftw_plan fwd = fftw_plan_dft_r2c(static_cast<int>(dims.size()), dims.data(), real.ptr, spec, FFTW_ESTIMATE);
    fftw_plan bwd = fftw_plan_dft_c2r(static_cast<int>(dims.size()), dims.data(), spec, real.ptr, FFTW_ESTIMATE);
    fftw_free(spec);
    auto pair = std::make_pair(fwd, bwd);
    r2c_.emplace(dims, pair);
    return pair;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [k, p] : r2r_) fftw_destroy_plan(p);
    for (auto& [k, p] : r2c_) {
      fftw_destroy_plan(p.first);
      fftw_destroy_plan(p.second);
    }
  }
  std::map<std::tuple<int, std::vector<int>>, fftw_plan> r2r_;
  std::map<std::vector<int>, std::pair<fftw_plan, fftw_plan>> r2c_;
};

inline double stiffness_symbol(double theta, double h) { return (2.0 - 2.0 * std::cos(theta)) / (h * h); }
inline double averaging_symbol(double theta) { return 0.5 + 0.5 * std::cos(theta); }

template <int D>
double reference_symbol(const std::array<double, D>& theta, double h, ReferenceStencil st) {
  double acc = 0.0;
  for (int a = 0; a < D; ++a) {
    double term = stiffness_symbol(theta[a], h);
    if (st == ReferenceStencil::q1_center)
      for (int b = 0; b < D; ++b)
        if (b != a) term *= averaging_symbol(theta[b]);
    acc += term;
  }
  return acc;
}

}  // namespace detail

/// Pseudo-inverse of the reference operator. The vectors it acts on are full
/// node (or site) arrays of the given topology; Dirichlet boundary entries are
/// ignored on input and zero on output. Modes where the reference symbol
/// vanishes (constants, and hourglass modes of the cell-centre stencil) are
/// mapped to zero.
template <int D>
class SpectralPreconditioner {
 public:
  /// `cells` is the number of cells per side; `h` the grid spacing. With a
  /// positive `shift` the operator inverted is shift*I + scale*reference.
  SpectralPreconditioner(long cells, double h, Topology topo, ReferenceStencil stencil, double scale = 1.0,
                         double shift = 0.0)
      : cells_(cells), h_(h), topo_(topo) {
    require(cells >= 1, "spectral preconditioner needs at least one cell");
    require(shift >= 0.0, "spectral shift must be nonnegative");
    switch (topo) {
      case Topology::dirichlet: len_ = cells - 1; break;
      case Topology::neumann: len_ = cells + 1; break;
      case Topology::periodic: len_ = cells; break;
    }
    full_ = topo == Topology::periodic ? cells : cells + 1;
    if (len_ <= 0) return;
    if (topo == Topology::neumann && len_ < 2) return;

    std::vector<int> dims(D, static_cast<int>(len_));
    if (topo == Topology::periodic) {
      auto plans = detail::PlanCache::instance().r2c(dims);
      fwd_ = plans.first;
      bwd_ = plans.second;
      const long last = len_ / 2 + 1;
      inv_symbol_.resize(static_cast<std::size_t>(ipow<D - 1>(len_) * last));
      IVec<D> j{};
      std::size_t flat = 0;
      const double norm = 1.0 / static_cast<double>(ipow<D>(len_));
      for (Index idx = 0; idx < static_cast<Index>(inv_symbol_.size()); ++idx) {
        Index rem = idx;
        for (int a = D - 1; a >= 0; --a) {
          const long n_a = a == D - 1 ? last : len_;
          j[a] = static_cast<long>(rem % n_a);
          rem /= n_a;
        }
        std::array<double, D> th{};
        for (int a = 0; a < D; ++a) th[a] = 2.0 * M_PI * static_cast<double>(j[a]) / static_cast<double>(len_);
        const double sym = shift + scale * detail::reference_symbol<D>(th, h, stencil);
        inv_symbol_[flat++] = sym > 1e-12 * scale / (h * h) ? norm / sym : 0.0;
      }
    } else {
      const fftw_r2r_kind kind = topo == Topology::dirichlet ? FFTW_RODFT00 : FFTW_REDFT00;
      plan_ = detail::PlanCache::instance().r2r(dims, kind);
      inv_symbol_.resize(static_cast<std::size_t>(ipow<D>(len_)));
      const double norm = 1.0 / static_cast<double>(ipow<D>(2 * cells));
      IVec<D> j{};
      std::size_t flat = 0;
      do {
        std::array<double, D> th{};
        for (int a = 0; a < D; ++a) {
          const double jj = topo == Topology::dirichlet ? static_cast<double>(j[a] + 1) : static_cast<double>(j[a]);
          th[a] = M_PI * jj / static_cast<double>(cells);
        }
        const double sym = shift + scale * detail::reference_symbol<D>(th, h, stencil);
        inv_symbol_[flat++] = sym > 1e-12 * scale / (h * h) ? norm / sym : 0.0;
      } while (advance<D>(j, len_));
    }
  }

  bool trivial() const { return inv_symbol_.empty(); }

  void apply(const std::vector<double>& r, std::vector<double>& z) const {
    z.assign(r.size(), 0.0);
    if (trivial()) return;
    const std::size_t n = static_cast<std::size_t>(ipow<D>(len_));
    detail::FftwBuffer buf(n), spec_buf(n);
    gather(r, buf.ptr);
    if (topo_ == Topology::periodic) {
      const std::size_t nc = inv_symbol_.size();
      auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc));
      fftw_execute_dft_r2c(fwd_, buf.ptr, spec);
      for (std::size_t i = 0; i < nc; ++i) {
        spec[i][0] *= inv_symbol_[i];
        spec[i][1] *= inv_symbol_[i];
      }
      fftw_execute_dft_c2r(bwd_, spec, buf.ptr);
      fftw_free(spec);
    } else {
      fftw_execute_r2r(plan_, buf.ptr, spec_buf.ptr);
      for (std::size_t i = 0; i < n; ++i) spec_buf.ptr[i] *= inv_symbol_[i];
      fftw_execute_r2r(plan_, spec_buf.ptr, buf.ptr);
    }
    scatter(buf.ptr, z);
  }

 private:
  // Copies the active unknowns into a contiguous transform buffer; for the
  // Neumann topology this also applies the inverse boundary weights.
  void gather(const std::vector<double>& r, double* buf) const {
    IVec<D> j{};
    std::size_t flat = 0;
    do {
      IVec<D> node = j;
      double w = 1.0;
      if (topo_ == Topology::dirichlet) {
        for (int a = 0; a < D; ++a) node[a] += 1;
      } else if (topo_ == Topology::neumann) {
        for (int a = 0; a < D; ++a)
          if (j[a] == 0 || j[a] == len_ - 1) w *= 2.0;
      }
      buf[flat++] = w * r[static_cast<std::size_t>(flatten<D>(node, full_))];
    } while (advance<D>(j, len_));
  }

  void scatter(const double* buf, std::vector<double>& z) const {
    IVec<D> j{};
    std::size_t flat = 0;
    do {
      IVec<D> node = j;
      if (topo_ == Topology::dirichlet)
        for (int a = 0; a < D; ++a) node[a] += 1;
      z[static_cast<std::size_t>(flatten<D>(node, full_))] = buf[flat++];
    } while (advance<D>(j, len_));
  }

  long cells_;
  double h_;
  Topology topo_;
  long len_ = 0;
  long full_ = 0;
  fftw_plan plan_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
  std::vector<double> inv_symbol_;
};

}  // namespace hlab
