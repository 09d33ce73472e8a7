#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hlab {

template <int D>
using Vec = Eigen::Matrix<double, D, 1>;
template <int D>
using Mat = Eigen::Matrix<double, D, D>;

using Index = std::ptrdiff_t;

template <int D>
using IVec = std::array<long, D>;

inline constexpr const char* kVersion = "0.3.0";

// ---------------------------------------------------------------------------
// Errors. Every failure surfaced to the harness derives from Error so the CLI
// can map it to a structured error record.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ArgumentError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "argument_error"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_error"; }
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}
  const char* kind() const noexcept override { return "solver_error"; }
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ArgumentError(msg);
}

// ---------------------------------------------------------------------------
// Integer helpers.

constexpr long ipow3(int n) {
  long r = 1;
  for (int i = 0; i < n; ++i) r *= 3;
  return r;
}

template <int D>
constexpr Index ipow(Index base) {
  Index r = 1;
  for (int i = 0; i < D; ++i) r *= base;
  return r;
}

inline long floor_mod(long a, long n) {
  long r = a % n;
  return r < 0 ? r + n : r;
}

// ---------------------------------------------------------------------------
// Counter-based randomness. splitmix64 is used both as the seed mixer for
// ensemble members and as the per-unit-cell stream generator.

inline constexpr const char* kPrngName = "splitmix64-counter-v1";

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0xD1B54A32D192ED03ull));
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

/// Independent stream attached to one integer lattice site.
template <int D>
class SiteStream {
 public:
  SiteStream(std::uint64_t seed, const IVec<D>& site) {
    std::uint64_t key = splitmix64(seed);
    for (int a = 0; a < D; ++a)
      key = splitmix64(key ^ static_cast<std::uint64_t>(site[a]) * 0xA24BAED4963EE407ull);
    key_ = key;
  }
  std::uint64_t next() { return splitmix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ull); }
  double uniform() { return to_unit(next()); }
  double normal() {
    // Box-Muller; u1 in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Small symmetric-matrix utilities.

template <int D>
double min_eig(const Mat<D>& m) {
  Eigen::SelfAdjointEigenSolver<Mat<D>> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

template <int D>
double max_eig(const Mat<D>& m) {
  Eigen::SelfAdjointEigenSolver<Mat<D>> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(D - 1);
}

/// Operator 2-norm of a symmetric matrix.
template <int D>
double sym_norm(const Mat<D>& m) {
  Eigen::SelfAdjointEigenSolver<Mat<D>> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// True when lo <= hi as quadratic forms, up to `slack` in the smallest eigenvalue.
template <int D>
bool psd_leq(const Mat<D>& lo, const Mat<D>& hi, double slack) {
  return min_eig<D>(hi - lo) >= -slack;
}

namespace detail {

/// Largest of the asymmetry of a flux-form matrix and its distance to the
/// energy form.
template <int D>
double matrix_mismatch(const Mat<D>& energy_form, const Mat<D>& flux_form) {
  return std::max((flux_form - flux_form.transpose()).cwiseAbs().maxCoeff(), (energy_form - flux_form).cwiseAbs().maxCoeff());
}

}  // namespace detail

template <int D>
Vec<D> unit(int i) {
  Vec<D> e = Vec<D>::Zero();
  e(i) = 1.0;
  return e;
}

}  // namespace hlab
