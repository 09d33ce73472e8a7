#pragma once

#include "hlab/common.hpp"

#include <functional>
#include <vector>

namespace hlab {

using LinearMap = std::function<void(const std::vector<double>&, std::vector<double>&)>;
using Projection = std::function<void(std::vector<double>&)>;

struct CgReport {
  int iterations = 0;
  double residual = 0.0;  // preconditioned residual, relative to the right side
  bool converged = false;
  std::vector<double> residual_history;
  std::vector<double> energy_history;  // 1/2 x.Ax - b.x after each step
};

inline double vdot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Preconditioned conjugate gradients for a symmetric positive semidefinite
/// operator restricted to the range of `project`. `x` holds the initial guess
/// on entry and the iterate on exit. Stops when sqrt(r.Pr / b.Pb) <= tol.
inline CgReport pcg(const LinearMap& apply_op, const LinearMap& precond, const Projection& project,
                    const std::vector<double>& b, std::vector<double>& x, double tol, int max_iter,
                    bool record = false) {
  CgReport rep;
  const std::size_t n = b.size();
  std::vector<double> r(n), z(n), p(n), ap(n);
  x.resize(n, 0.0);
  project(x);

  std::vector<double> pb(n);
  precond(b, pb);
  project(pb);
  const double bnorm2 = vdot(b, pb);
  if (!(bnorm2 > 0.0)) {
    std::fill(x.begin(), x.end(), 0.0);
    rep.converged = true;
    return rep;
  }

  apply_op(x, ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - ap[i];
  project(r);
  precond(r, z);
  project(z);
  double rz = vdot(r, z);
  rep.residual = std::sqrt(std::max(rz, 0.0) / bnorm2);
  if (record) rep.residual_history.push_back(rep.residual);
  if (rep.residual <= tol) {
    rep.converged = true;
    return rep;
  }
  p = z;
  for (int it = 1; it <= max_iter; ++it) {
    apply_op(p, ap);
    project(ap);
    const double pap = vdot(p, ap);
    if (!(pap > 0.0)) break;
    const double alpha = rz / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    precond(r, z);
    project(z);
    const double rz_new = vdot(r, z);
    rep.iterations = it;
    rep.residual = std::sqrt(std::max(rz_new, 0.0) / bnorm2);
    if (record) {
      rep.residual_history.push_back(rep.residual);
      // b - r = Ax for the current iterate
      double e = 0.0;
      for (std::size_t i = 0; i < n; ++i) e += 0.5 * x[i] * (b[i] - r[i]) - b[i] * x[i];
      rep.energy_history.push_back(e);
    }
    if (rep.residual <= tol) {
      rep.converged = true;
      return rep;
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return rep;
}

/// One Galerkin step on span(basis): x += W c with (W^T A W) c = W^T (b - A x).
/// Afterwards the residual is orthogonal to every basis vector.
inline void galerkin_correct(const LinearMap& apply_op, const std::vector<std::vector<double>>& basis,
                             const std::vector<double>& b, std::vector<double>& x) {
  const int k = static_cast<int>(basis.size());
  if (k == 0) return;
  std::vector<double> ax(b.size());
  apply_op(x, ax);
  std::vector<double> r(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) r[i] = b[i] - ax[i];
  Eigen::MatrixXd gram(k, k);
  Eigen::VectorXd rhs(k);
  std::vector<std::vector<double>> aw(static_cast<std::size_t>(k), std::vector<double>(b.size()));
  for (int i = 0; i < k; ++i) apply_op(basis[static_cast<std::size_t>(i)], aw[static_cast<std::size_t>(i)]);
  for (int i = 0; i < k; ++i) {
    rhs(i) = vdot(basis[static_cast<std::size_t>(i)], r);
    for (int j = 0; j < k; ++j) gram(i, j) = vdot(basis[static_cast<std::size_t>(i)], aw[static_cast<std::size_t>(j)]);
  }
  const Eigen::VectorXd c = gram.ldlt().solve(rhs);
  for (int i = 0; i < k; ++i)
    for (std::size_t j = 0; j < b.size(); ++j) x[j] += c(i) * basis[static_cast<std::size_t>(i)][j];
}

}  // namespace hlab
