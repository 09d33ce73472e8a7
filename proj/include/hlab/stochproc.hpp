#pragma once

// Random conductance network on cell sites, variable-speed random walks,
// and the parabolic Green function of the same generator.

#include "hlab/cg.hpp"
#include "hlab/common.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"
#include "hlab/solver.hpp"
#include "hlab/spectral.hpp"
#include "hlab/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace hlab {

/// Sites are the cells of a torus; edge (x, a) joins x and x + e_a.
template <int D>
struct ConductanceNetwork {
  GridSpec<D> grid{};
  std::vector<std::array<double, D>> c;  // c[x][a]
  double lambda = 1.0;
  double Lambda = 1.0;

  Index sites() const { return static_cast<Index>(c.size()); }
  double edge(Index x, int a) const { return c[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)]; }

  double mean_conductance() const {
    double acc = 0.0;
    for (const auto& e : c)
      for (double v : e) acc += v;
    return acc / static_cast<double>(c.size() * D);
  }

  Index neighbor(const IVec<D>& x, int a, long step) const {
    IVec<D> y = x;
    y[a] += step;
    return flatten_wrapped<D>(y, grid.n());
  }

  /// (L u)(x) = h^{-2} sum_a [c(x,a)(u(x+e_a) - u(x)) - c(x-e_a,a)(u(x) - u(x-e_a))]
  void apply_generator(const std::vector<double>& u, std::vector<double>& out) const {
    const long n = grid.n();
    const double inv_h2 = 1.0 / (grid.h() * grid.h());
    out.assign(u.size(), 0.0);
    IVec<D> x{};
    Index flat = 0;
    do {
      double acc = 0.0;
      for (int a = 0; a < D; ++a) {
        const Index up = neighbor(x, a, 1), dn = neighbor(x, a, -1);
        acc += edge(flat, a) * (u[static_cast<std::size_t>(up)] - u[static_cast<std::size_t>(flat)]) -
               edge(dn, a) * (u[static_cast<std::size_t>(flat)] - u[static_cast<std::size_t>(dn)]);
      }
      out[static_cast<std::size_t>(flat++)] = inv_h2 * acc;
    } while (advance<D>(x, n));
  }
};

/// Harmonic mean of the axis-diagonal entries of the two cells sharing each
/// edge; the field is treated as periodic.
template <int D>
ConductanceNetwork<D> build_network(const CoefficientField<D>& a) {
  const GridSpec<D>& g = a.grid();
  require(g.n() >= 2, "conductance network needs at least two cells per side");
  ConductanceNetwork<D> net;
  net.grid = g;
  net.c.resize(static_cast<std::size_t>(g.cell_count()));
  net.lambda = std::numeric_limits<double>::infinity();
  net.Lambda = 0.0;
  IVec<D> x{};
  Index flat = 0;
  do {
    for (int ax = 0; ax < D; ++ax) {
      const double al = a[flat](ax, ax);
      const double ar = a[net.neighbor(x, ax, 1)](ax, ax);
      const double ce = 2.0 / (1.0 / al + 1.0 / ar);
      net.c[static_cast<std::size_t>(flat)][static_cast<std::size_t>(ax)] = ce;
      net.lambda = std::min(net.lambda, ce);
      net.Lambda = std::max(net.Lambda, ce);
    }
    ++flat;
  } while (advance<D>(x, g.n()));
  if (net.lambda < a.lambda * (1.0 - 1e-12) || net.Lambda > a.Lambda * (1.0 + 1e-12))
    throw NumericalError("edge conductances escape the ellipticity bounds of the field");
  return net;
}

// ---------------------------------------------------------------------------

template <int D>
struct NetworkHomogenization {
  Mat<D> abar = Mat<D>::Zero();
  std::vector<std::vector<double>> chi;  // site correctors, mean zero
  int iterations = 0;
};

/// Network cell problem: chi_k periodic with mean zero minimising
/// mean sum_a c_a (delta_ak + D_a chi_k)^2; abar_kl is the mixed energy.
template <int D>
NetworkHomogenization<D> network_homogenized_matrix(const ConductanceNetwork<D>& net, const SolveOptions& opts = {}) {
  opts.validate();
  const GridSpec<D>& g = net.grid;
  const long n = g.n();
  const double h = g.h();
  const std::size_t N = static_cast<std::size_t>(net.sites());
  SpectralPreconditioner<D> sp(n, h, Topology::periodic, ReferenceStencil::five_point, net.mean_conductance());
  LinearMap apply_op = [&net](const std::vector<double>& in, std::vector<double>& out) {
    net.apply_generator(in, out);
    for (auto& v : out) v = -v;
  };
  LinearMap precond = [&sp](const std::vector<double>& in, std::vector<double>& out) { sp.apply(in, out); };
  Projection project = [](std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (auto& x : v) x -= m;
  };
  NetworkHomogenization<D> out;
  for (int k = 0; k < D; ++k) {
    std::vector<double> b(N, 0.0);
    IVec<D> x{};
    Index flat = 0;
    do {
      b[static_cast<std::size_t>(flat)] = (net.edge(flat, k) - net.edge(net.neighbor(x, k, -1), k)) / h;
      ++flat;
    } while (advance<D>(x, n));
    std::vector<double> chi(N, 0.0);
    const CgReport rep = pcg(apply_op, precond, project, b, chi, opts.tol, opts.max_iter);
    if (!rep.converged) throw SolverError("network cell problem did not converge", rep.residual, rep.iterations);
    out.iterations += rep.iterations;
    out.chi.push_back(std::move(chi));
  }
  for (int k = 0; k < D; ++k)
    for (int l = k; l < D; ++l) {
      double acc = 0.0;
      IVec<D> x{};
      Index flat = 0;
      do {
        for (int a = 0; a < D; ++a) {
          const Index up = net.neighbor(x, a, 1);
          const auto& ck = out.chi[static_cast<std::size_t>(k)];
          const auto& cl = out.chi[static_cast<std::size_t>(l)];
          const double gk = (a == k ? 1.0 : 0.0) + (ck[static_cast<std::size_t>(up)] - ck[static_cast<std::size_t>(flat)]) / h;
          const double gl = (a == l ? 1.0 : 0.0) + (cl[static_cast<std::size_t>(up)] - cl[static_cast<std::size_t>(flat)]) / h;
          acc += net.edge(flat, a) * gk * gl;
        }
        ++flat;
      } while (advance<D>(x, n));
      out.abar(k, l) = out.abar(l, k) = acc / static_cast<double>(N);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Walks.

struct WalkOptions {
  double horizon = 100.0;
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::vector<double> times;  // sample times; default: horizon / 10 .. horizon
  bool random_start = true;   // start uniformly on the torus, else at site 0
  bool keep_paths = false;
};

template <int D>
struct WalkReport {
  std::vector<double> times;
  std::vector<Vec<D>> mean;    // empirical mean displacement
  std::vector<Mat<D>> cov;     // empirical covariance of the displacement
  std::vector<double> rel_error;  // max|cov/t - target| / max|target|
  std::vector<double> mean_z;     // max_a |mean_a| / (sd_a / sqrt N)
  Mat<D> abar_net = Mat<D>::Zero();
  Mat<D> target = Mat<D>::Zero();  // 2 abar_net
  double stabilization = 0.0;      // max over t in [T/2, T] of max|cov/t - cov(T)/T| / max|cov(T)/T|
  std::size_t paths = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t jumps = 0;
  std::vector<Index> final_sites;       // wrapped site at the last sample time
  std::vector<long> displacements;      // [path][time][axis] in lattice steps, if kept

  Mat<D> scaled_cov(std::size_t i) const { return cov[i] / times[i]; }

  void write_csv(std::ostream& os) const {
    os << "t";
    for (int i = 0; i < D; ++i) os << ",mean_" << i + 1;
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) os << ",cov_" << i + 1 << j + 1;
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) os << ",target_" << i + 1 << j + 1;
    os << ",rel_error,mean_z\n";
    os.precision(17);
    for (std::size_t s = 0; s < times.size(); ++s) {
      os << times[s];
      for (int i = 0; i < D; ++i) os << ',' << mean[s](i);
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) os << ',' << cov[s](i, j);
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) os << ',' << target(i, j);
      os << ',' << rel_error[s] << ',' << mean_z[s] << '\n';
    }
  }

  /// Raw path dump: one JSON header line, then int64 little-endian lattice
  /// displacements laid out [path][time][axis].
  void write_path_dump(std::ostream& os, double h) const {
    require(!displacements.empty(), "path dump needs keep_paths");
    nlohmann::json hdr = {{"format", "hlab-paths-v1"}, {"dim", D},         {"paths", paths}, {"times", times},
                          {"h", h},                   {"dtype", "int64le"}, {"layout", "path,time,axis"}};
    os << hdr.dump() << '\n';
    for (long v : displacements) {
      const std::int64_t x = v;
      unsigned char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((static_cast<std::uint64_t>(x) >> (8 * b)) & 0xFFu);
      os.write(reinterpret_cast<const char*>(bytes), 8);
    }
  }
};

namespace detail {

inline double exp_draw(std::mt19937_64& rng, double rate) {
  const double u = to_unit(rng());  // [0, 1)
  return -std::log1p(-u) / rate;
}

template <int D>
struct PathResult {
  std::vector<std::array<long, D>> disp;  // per sample time
  Index final_site = 0;
  std::uint64_t jumps = 0;
};

template <int D>
PathResult<D> run_path(const ConductanceNetwork<D>& net, const std::vector<double>& times, std::uint64_t seed, bool random_start) {
  std::mt19937_64 rng(seed);
  const long n = net.grid.n();
  const double inv_h2 = 1.0 / (net.grid.h() * net.grid.h());
  IVec<D> site{};
  if (random_start)
    for (int a = 0; a < D; ++a) site[a] = static_cast<long>(rng() % static_cast<std::uint64_t>(n));
  std::array<long, D> disp{};
  PathResult<D> out;
  out.disp.reserve(times.size());
  double t = 0.0;
  std::size_t next = 0;
  std::array<double, 2 * D> rates{};
  while (next < times.size()) {
    const Index flat = flatten<D>(site, n);
    double total = 0.0;
    for (int a = 0; a < D; ++a) {
      rates[static_cast<std::size_t>(2 * a)] = inv_h2 * net.edge(flat, a);
      rates[static_cast<std::size_t>(2 * a + 1)] = inv_h2 * net.edge(net.neighbor(site, a, -1), a);
      total += rates[static_cast<std::size_t>(2 * a)] + rates[static_cast<std::size_t>(2 * a + 1)];
    }
    t += exp_draw(rng, total);
    while (next < times.size() && times[next] <= t) {
      out.disp.push_back(disp);
      ++next;
    }
    if (next == times.size()) break;
    double pick = to_unit(rng()) * total;
    int move = 2 * D - 1;
    for (int e = 0; e < 2 * D; ++e) {
      if (pick < rates[static_cast<std::size_t>(e)]) {
        move = e;
        break;
      }
      pick -= rates[static_cast<std::size_t>(e)];
    }
    const int a = move / 2;
    const long step = (move % 2 == 0) ? 1 : -1;
    disp[static_cast<std::size_t>(a)] += step;
    site[a] = floor_mod(site[a] + step, n);
    ++out.jumps;
  }
  out.final_site = flatten<D>(site, n);
  return out;
}

}  // namespace detail

/// Variable-speed walk with jump rate c_e / h^2 across each edge; path i
/// draws from std::mt19937_64 seeded with mix_seed(seed, i).
template <int D>
WalkReport<D> simulate_walks(const ConductanceNetwork<D>& net, const WalkOptions& opts, const SolveOptions& cell_solve = {}) {
  if (opts.paths < 1000) throw ArgumentError("simulate_walks needs at least 1000 paths");
  require(opts.horizon > 0.0, "walk horizon must be positive");
  std::vector<double> times = opts.times;
  if (times.empty())
    for (int i = 1; i <= 10; ++i) times.push_back(opts.horizon * i / 10.0);
  std::sort(times.begin(), times.end());
  require(times.front() > 0.0 && times.back() <= opts.horizon * (1.0 + 1e-12), "sample times must lie in (0, horizon]");

  std::vector<detail::PathResult<D>> res(opts.paths);
  parallel_for_index(opts.paths, opts.jobs, [&](std::size_t i) {
    res[i] = detail::run_path(net, times, member_seed(opts.seed, i), opts.random_start);
  });

  WalkReport<D> rep;
  rep.times = times;
  rep.paths = opts.paths;
  rep.master_seed = opts.seed;
  rep.abar_net = network_homogenized_matrix(net, cell_solve).abar;
  rep.target = 2.0 * rep.abar_net;
  const double h = net.grid.h();
  const double N = static_cast<double>(opts.paths);
  for (std::size_t s = 0; s < times.size(); ++s) {
    Vec<D> mean = Vec<D>::Zero();
    for (const auto& r : res)
      for (int a = 0; a < D; ++a) mean(a) += h * static_cast<double>(r.disp[s][static_cast<std::size_t>(a)]);
    mean /= N;
    Mat<D> cov = Mat<D>::Zero();
    for (const auto& r : res) {
      Vec<D> x;
      for (int a = 0; a < D; ++a) x(a) = h * static_cast<double>(r.disp[s][static_cast<std::size_t>(a)]) - mean(a);
      cov += x * x.transpose();
    }
    cov /= (N - 1.0);
    rep.mean.push_back(mean);
    rep.cov.push_back(cov);
    rep.rel_error.push_back((cov / times[s] - rep.target).cwiseAbs().maxCoeff() / rep.target.cwiseAbs().maxCoeff());
    double z = 0.0;
    for (int a = 0; a < D; ++a) {
      const double se = std::sqrt(cov(a, a) / N);
      if (se > 0.0) z = std::max(z, std::abs(mean(a)) / se);
    }
    rep.mean_z.push_back(z);
  }
  const Mat<D> last = rep.scaled_cov(times.size() - 1);
  for (std::size_t s = 0; s < times.size(); ++s)
    if (times[s] >= 0.5 * times.back() * (1.0 - 1e-12))
      rep.stabilization = std::max(rep.stabilization, (rep.scaled_cov(s) - last).cwiseAbs().maxCoeff() / last.cwiseAbs().maxCoeff());
  for (const auto& r : res) {
    rep.jumps += r.jumps;
    rep.final_sites.push_back(r.final_site);
  }
  if (opts.keep_paths) {
    rep.displacements.reserve(opts.paths * times.size() * D);
    for (const auto& r : res)
      for (const auto& d : r.disp)
        for (long v : d) rep.displacements.push_back(v);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Parabolic Green function.

struct GreenOptions {
  double dt = 0.0;          // 0: 0.25 h^2
  double tol = 1e-12;       // CG relative residual per step
  int max_iter = 2000;
  double bulk_factor = 3.0;  // errors and envelope margins on |x - y| <= bulk_factor sqrt(t)
  double mass_limit = 1e-8;  // per-step mass drift before correction
};

/// Envelope constants on the bulk. `literal_*` use
/// Gamma_alpha(t,x) = t^{-d/2} exp(-alpha |x|^2 / t); `kernel_*` use the
/// probability heat kernels of diffusivity kappa,
/// (4 pi kappa t)^{-d/2} exp(-|x|^2 / 4 kappa t). Upper comparisons take
/// alpha = 1/(8 Lambda) (kappa = 2 Lambda), lower ones alpha = 1/(2 lambda)
/// (kappa = lambda / 2).
struct EnvelopeMargins {
  double literal_upper = 0.0;  // max P / Gamma_{1/(8 Lambda)}
  double literal_lower = 0.0;  // min P / Gamma_{1/(2 lambda)}
  double kernel_upper = 0.0;   // max P / Phi_{2 Lambda}
  double kernel_lower = 0.0;   // min P / Phi_{lambda / 2}
};

template <int D>
struct GreenReport {
  double t = 0.0;
  double dt = 0.0;
  int steps = 0;
  IVec<D> source{};
  ScalarField<D> P;  // density: mass per site divided by h^d
  Mat<D> abar = Mat<D>::Zero();
  double sup_rel_error = 0.0;  // bulk max |P - Pbar| / Pbar
  double l1_error = 0.0;       // sum |P - Pbar| h^d over the torus
  double max_mass_drift = 0.0;
  double mass = 0.0;
  EnvelopeMargins envelope;
  long iterations = 0;

  nlohmann::json summary() const {
    nlohmann::json j = {{"t", t},
                        {"dt", dt},
                        {"steps", steps},
                        {"sup_rel_error", sup_rel_error},
                        {"l1_error", l1_error},
                        {"max_mass_drift", max_mass_drift},
                        {"mass", mass},
                        {"iterations", iterations},
                        {"envelope",
                         {{"literal_upper", envelope.literal_upper},
                          {"literal_lower", envelope.literal_lower},
                          {"kernel_upper", envelope.kernel_upper},
                          {"kernel_lower", envelope.kernel_lower}}}};
    j["source"] = std::vector<long>(source.begin(), source.end());
    std::vector<double> ab;
    for (int i = 0; i < D; ++i)
      for (int k = 0; k < D; ++k) ab.push_back(abar(i, k));
    j["abar"] = ab;
    return j;
  }
};

/// Pbar(t,x) = (det abar)^{-1/2} (4 pi t)^{-d/2} exp(-x.abar^{-1}x / 4t)
template <int D>
double homogenized_kernel(const Mat<D>& abar, double t, const Vec<D>& x) {
  return std::pow(4.0 * M_PI * t, -0.5 * D) / std::sqrt(abar.determinant()) * std::exp(-x.dot(abar.inverse() * x) / (4.0 * t));
}

namespace detail {

template <int D>
Vec<D> minimal_image(const GridSpec<D>& g, const IVec<D>& from, const IVec<D>& to) {
  const long n = g.n();
  Vec<D> d;
  for (int a = 0; a < D; ++a) {
    long s = floor_mod(to[a] - from[a], n);
    if (2 * s > n) s -= n;
    d(a) = g.h() * static_cast<double>(s);
  }
  return d;
}

}  // namespace detail

/// Implicit Euler for d/dt u = L u from a unit mass at `source`, one
/// preconditioned CG solve per step; the solve error on the total mass is
/// checked against mass_limit and then removed by a constant shift.
template <int D>
GreenReport<D> parabolic_green(const ConductanceNetwork<D>& net, double t, const std::type_identity_t<IVec<D>>& source,
                               const std::type_identity_t<Mat<D>>& abar,
                               const GreenOptions& opts = {}) {
  const GridSpec<D>& g = net.grid;
  const long n = g.n();
  const double h = g.h();
  require(t > 0.0, "Green time must be positive");
  for (int a = 0; a < D; ++a) require(source[a] >= 0 && source[a] < n, "Green source outside the torus");
  const double dt_req = opts.dt > 0.0 ? opts.dt : 0.25 * h * h;
  if (dt_req > t) throw ArgumentError("time step exceeds the horizon");
  const int steps = static_cast<int>(std::ceil(t / dt_req - 1e-9));
  const double dt = t / steps;
  const double vol = std::pow(h, D);
  const std::size_t N = static_cast<std::size_t>(net.sites());

  SpectralPreconditioner<D> sp(n, h, Topology::periodic, ReferenceStencil::five_point, dt * net.mean_conductance(), 1.0);
  std::vector<double> lu;
  LinearMap apply_op = [&](const std::vector<double>& in, std::vector<double>& out) {
    net.apply_generator(in, lu);
    out.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] - dt * lu[i];
  };
  LinearMap precond = [&sp](const std::vector<double>& in, std::vector<double>& out) { sp.apply(in, out); };
  Projection identity = [](std::vector<double>&) {};

  GreenReport<D> rep;
  rep.t = t;
  rep.dt = dt;
  rep.steps = steps;
  rep.source = source;
  rep.abar = abar;
  std::vector<double> u(N, 0.0);
  u[static_cast<std::size_t>(flatten<D>(source, n))] = 1.0 / vol;
  auto total = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s * vol;
  };
  for (int s = 0; s < steps; ++s) {
    const double before = total(u);
    std::vector<double> next = u;
    const CgReport cg = pcg(apply_op, precond, identity, u, next, opts.tol, opts.max_iter);
    if (!cg.converged) throw SolverError("Green stepper solve did not converge", cg.residual, cg.iterations);
    rep.iterations += cg.iterations;
    const double drift = total(next) - before;
    rep.max_mass_drift = std::max(rep.max_mass_drift, std::abs(drift));
    if (std::abs(drift) > opts.mass_limit) throw NumericalError("Green stepper mass drift " + std::to_string(drift) + " exceeds the limit");
    const double shift = drift / (vol * static_cast<double>(N));
    for (auto& v : next) v -= shift;
    u = std::move(next);
  }
  rep.mass = total(u);
  rep.P = ScalarField<D>(g, 0.0);
  rep.P.values = u;

  const double bulk2 = opts.bulk_factor * opts.bulk_factor * t;
  const double lam = net.lambda, Lam = net.Lambda;
  rep.envelope.literal_lower = rep.envelope.kernel_lower = std::numeric_limits<double>::infinity();
  IVec<D> x{};
  Index flat = 0;
  do {
    const Vec<D> d = detail::minimal_image<D>(g, source, x);
    const double p = u[static_cast<std::size_t>(flat)];
    const double pbar = homogenized_kernel<D>(abar, t, d);
    rep.l1_error += std::abs(p - pbar) * vol;
    const double r2 = d.squaredNorm();
    if (r2 <= bulk2) {
      rep.sup_rel_error = std::max(rep.sup_rel_error, std::abs(p - pbar) / pbar);
      const double tp = std::pow(t, -0.5 * D);
      const double g_up = tp * std::exp(-r2 / (8.0 * Lam * t));
      const double g_lo = tp * std::exp(-r2 / (2.0 * lam * t));
      const double k_up = std::pow(4.0 * M_PI * 2.0 * Lam, -0.5 * D) * g_up;
      const double k_lo = std::pow(4.0 * M_PI * 0.5 * lam, -0.5 * D) * g_lo;
      rep.envelope.literal_upper = std::max(rep.envelope.literal_upper, p / g_up);
      rep.envelope.literal_lower = std::min(rep.envelope.literal_lower, p / g_lo);
      rep.envelope.kernel_upper = std::max(rep.envelope.kernel_upper, p / k_up);
      rep.envelope.kernel_lower = std::min(rep.envelope.kernel_lower, p / k_lo);
    }
    ++flat;
  } while (advance<D>(x, n));
  return rep;
}

template <int D>
GreenReport<D> parabolic_green(const CoefficientField<D>& a, double t, const std::type_identity_t<IVec<D>>& source,
                               const std::type_identity_t<Mat<D>>& abar,
                               const GreenOptions& opts = {}) {
  return parabolic_green(build_network(a), t, source, abar, opts);
}

/// |P(t,x,y) - P(t,y,x)| from two stepper runs.
template <int D>
double green_asymmetry(const ConductanceNetwork<D>& net, double t, const std::type_identity_t<IVec<D>>& x,
                       const std::type_identity_t<IVec<D>>& y, const GreenOptions& opts = {}) {
  const Mat<D> id = Mat<D>::Identity();
  const auto from_y = parabolic_green(net, t, y, id, opts);
  const auto from_x = parabolic_green(net, t, x, id, opts);
  return std::abs(from_y.P[flatten<D>(x, net.grid.n())] - from_x.P[flatten<D>(y, net.grid.n())]);
}

/// Total variation between the walk occupation at its last sample time and
/// the Green function mass P h^d from the same start site.
template <int D>
double occupation_total_variation(const WalkReport<D>& walks, const GreenReport<D>& green) {
  require(!walks.final_sites.empty(), "walk report has no final sites");
  const std::size_t N = static_cast<std::size_t>(green.P.size());
  std::vector<double> hist(N, 0.0);
  for (Index s : walks.final_sites) hist[static_cast<std::size_t>(s)] += 1.0 / static_cast<double>(walks.final_sites.size());
  const double vol = std::pow(green.P.grid.h(), D);
  double tv = 0.0;
  for (std::size_t i = 0; i < N; ++i) tv += std::abs(hist[i] - green.P.values[i] * vol);
  return 0.5 * tv;
}

}  // namespace hlab
