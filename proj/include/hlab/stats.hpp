#pragma once

// Ensemble statistics, deterministic parallel ensembles and power-law fits.

#include "hlab/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace hlab {

/// Count, mean, M2, min and max of a scalar observable with the seed of every
/// member. The moments are always the Welford accumulation over members in
/// ascending seed order, so merging is exact and independent of grouping.
class EnsembleStats {
 public:
  struct Member {
    std::uint64_t seed;
    double value;
  };

  EnsembleStats() = default;

  void add(std::uint64_t seed, double value) {
    if (!std::isfinite(value)) throw NumericalError("ensemble member value is not finite");
    members_.push_back({seed, value});
    recompute();
  }

  static EnsembleStats merge(const EnsembleStats& a, const EnsembleStats& b) {
    EnsembleStats out;
    out.members_ = a.members_;
    out.members_.insert(out.members_.end(), b.members_.begin(), b.members_.end());
    out.recompute();
    return out;
  }

  std::size_t count() const { return members_.size(); }
  double mean() const { return mean_; }
  double m2() const { return m2_; }
  double min() const { return min_; }
  double max() const { return max_; }
  /// Sample variance M2/(n-1); zero when fewer than two members.
  double variance() const { return count() > 1 ? m2_ / static_cast<double>(count() - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double std_error() const { return count() > 0 ? std::sqrt(variance() / static_cast<double>(count())) : 0.0; }
  const std::vector<Member>& members() const { return members_; }
  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (const auto& m : members_) s.push_back(m.seed);
    return s;
  }

  bool operator==(const EnsembleStats& o) const {
    return count() == o.count() && mean_ == o.mean_ && m2_ == o.m2_ && min_ == o.min_ && max_ == o.max_;
  }

 private:
  void recompute() {
    std::stable_sort(members_.begin(), members_.end(), [](const Member& x, const Member& y) {
      return x.seed != y.seed ? x.seed < y.seed : x.value < y.value;
    });
    mean_ = 0.0;
    m2_ = 0.0;
    min_ = std::numeric_limits<double>::infinity();
    max_ = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    for (const auto& m : members_) {
      ++n;
      const double delta = m.value - mean_;
      mean_ += delta / static_cast<double>(n);
      m2_ += delta * (m.value - mean_);
      min_ = std::min(min_, m.value);
      max_ = std::max(max_, m.value);
    }
    if (n == 0) min_ = max_ = 0.0;
  }

  std::vector<Member> members_;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double min_ = 0.0;
  double max_ = 0.0;
};

// ---------------------------------------------------------------------------

inline int default_jobs() {
  if (const char* env = std::getenv("HLAB_JOBS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return j;
    } catch (...) {
    }
  }
  return 1;
}

struct MemberFailure {
  std::size_t index;
  std::uint64_t seed;
  std::string kind;
  std::string message;
};

class EnsembleError : public Error {
 public:
  explicit EnsembleError(std::vector<MemberFailure> failures)
      : Error(describe(failures)), failures_(std::move(failures)) {}
  const char* kind() const noexcept override { return "ensemble_error"; }
  const std::vector<MemberFailure>& failures() const { return failures_; }

 private:
  static std::string describe(const std::vector<MemberFailure>& f) {
    std::string s = std::to_string(f.size()) + " ensemble member(s) failed";
    if (!f.empty()) s += "; first (index " + std::to_string(f.front().index) + "): " + f.front().message;
    return s;
  }
  std::vector<MemberFailure> failures_;
};

inline std::uint64_t member_seed(std::uint64_t master, std::size_t index) {
  return mix_seed(master, static_cast<std::uint64_t>(index));
}

/// Calls fn(i) for i = 0..n-1 on `jobs` workers; exceptions are rethrown
/// after all workers finish (the one with the lowest index wins).
template <class F>
void parallel_for_index(std::size_t n, int jobs, F&& fn) {
  std::atomic<std::size_t> next{0};
  std::mutex m;
  std::size_t failed_at = std::numeric_limits<std::size_t>::max();
  std::exception_ptr failure;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

/// Runs fn(seed, index) for index = 0..n-1 on `jobs` workers pulling indices
/// from a shared counter. Results are returned in index order. Every member
/// is attempted; failures are collected and raised together afterwards.
template <class T>
std::vector<T> run_members(std::size_t n, std::uint64_t master, int jobs,
                           const std::function<T(std::uint64_t, std::size_t)>& fn) {
  require(n >= 1, "ensemble size must be >= 1");
  std::vector<std::optional<T>> slots(n);
  std::vector<MemberFailure> failures;
  std::mutex failure_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const std::uint64_t seed = member_seed(master, i);
      try {
        slots[i].emplace(fn(seed, i));
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failures.push_back({i, seed, e.kind(), e.what()});
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failures.push_back({i, seed, "error", e.what()});
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    throw EnsembleError(std::move(failures));
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Scalar ensemble: member i uses seed mix_seed(master, i).
inline EnsembleStats ensemble(const std::function<double(std::uint64_t)>& realization, std::size_t n,
                              std::uint64_t master, int jobs = 1) {
  const auto values = run_members<double>(n, master, jobs, [&](std::uint64_t seed, std::size_t) { return realization(seed); });
  EnsembleStats st;
  for (std::size_t i = 0; i < n; ++i) st.add(member_seed(master, i), values[i]);
  return st;
}

// ---------------------------------------------------------------------------
// Power-law fits.

struct FitTarget {
  double expected = 0.0;   // declared exponent
  double band_lo = 0.0;    // acceptance band for the fitted slope
  double band_hi = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::string ci_method;   // "bootstrap", "ols", or "none"
  std::size_t points = 0;

  bool in_band() const { return slope >= band_lo && slope <= band_hi; }
};

namespace detail {
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

/// Non-finite numbers (undefined fits, open bands) serialise as null.
inline void to_json(nlohmann::json& j, const FitTarget& f) {
  using detail::finite_or_null;
  j = {{"expected", f.expected},
       {"band", {finite_or_null(f.band_lo), finite_or_null(f.band_hi)}},
       {"slope", finite_or_null(f.slope)},
       {"intercept", finite_or_null(f.intercept)},
       {"ci", {finite_or_null(f.ci_lo), finite_or_null(f.ci_hi)}},
       {"ci_method", f.ci_method},
       {"points", f.points},
       {"in_band", f.in_band()}};
}

namespace detail {

inline std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ArgumentError("rate_fit needs at least two distinct scales");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * v[lo] + w * v[hi];
}

/// Two-sided Student t quantile at 97.5% for small degrees of freedom.
inline double t975(std::size_t dof) {
  static const double table[] = {0.0, 12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228};
  if (dof == 0) return std::numeric_limits<double>::infinity();
  if (dof <= 10) return table[dof];
  return 1.96 + 2.5 / static_cast<double>(dof);
}

}  // namespace detail

struct RateFitOptions {
  int bootstrap = 200;
  double confidence = 0.95;
  std::uint64_t seed = 0x5eedULL;
  double expected = 0.0;
  double band_lo = -std::numeric_limits<double>::infinity();
  double band_hi = std::numeric_limits<double>::infinity();
};

/// Least-squares slope of log(value) against log(scale). With per-point
/// standard errors, the CI is a parametric bootstrap (log values perturbed by
/// the delta-method error se/value); otherwise the OLS t-interval.
inline FitTarget rate_fit(const std::vector<double>& scales, const std::vector<double>& values,
                          const std::vector<double>& std_errors = {}, const RateFitOptions& opt = {}) {
  require(scales.size() == values.size(), "rate_fit: scales and values differ in length");
  require(scales.size() >= 3, "rate_fit needs at least 3 points");
  require(std_errors.empty() || std_errors.size() == values.size(), "rate_fit: standard errors differ in length");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw ArgumentError("rate_fit: scales must be positive");
    if (!(values[i] > 0.0)) throw ArgumentError("rate_fit: values must be positive");
    x.push_back(std::log(scales[i]));
    y.push_back(std::log(values[i]));
  }
  FitTarget out;
  out.expected = opt.expected;
  out.band_lo = opt.band_lo;
  out.band_hi = opt.band_hi;
  out.points = x.size();
  const auto [slope, icept] = detail::ols(x, y);
  out.slope = slope;
  out.intercept = icept;
  const double alpha = 0.5 * (1.0 - opt.confidence);
  if (!std_errors.empty() && opt.bootstrap > 0) {
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> nd;
    std::vector<double> slopes;
    slopes.reserve(static_cast<std::size_t>(opt.bootstrap));
    std::vector<double> yb(y.size());
    for (int b = 0; b < opt.bootstrap; ++b) {
      for (std::size_t i = 0; i < y.size(); ++i) yb[i] = y[i] + nd(rng) * std_errors[i] / values[i];
      slopes.push_back(detail::ols(x, yb).first);
    }
    out.ci_lo = std::min(detail::quantile(slopes, alpha), slope);
    out.ci_hi = std::max(detail::quantile(slopes, 1.0 - alpha), slope);
    out.ci_method = "bootstrap";
  } else if (x.size() > 2) {
    double mx = 0.0;
    for (double v : x) mx += v;
    mx /= static_cast<double>(x.size());
    double sxx = 0.0, rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxx += (x[i] - mx) * (x[i] - mx);
      const double r = y[i] - (icept + slope * x[i]);
      rss += r * r;
    }
    const double se = std::sqrt(rss / static_cast<double>(x.size() - 2) / sxx);
    const double t = detail::t975(x.size() - 2);
    out.ci_lo = slope - t * se;
    out.ci_hi = slope + t * se;
    out.ci_method = "ols";
  } else {
    out.ci_lo = out.ci_hi = slope;
    out.ci_method = "none";
  }
  return out;
}

/// Slope of log(variance) against log(scale) where samples[s][i] is the
/// observable at scale s for ensemble member i; CI by bootstrap over members.
inline FitTarget variance_slope(const std::vector<double>& scales, const std::vector<std::vector<double>>& samples,
                                const RateFitOptions& opt = {}) {
  require(scales.size() == samples.size(), "variance_slope: scale count mismatch");
  auto variances = [&](const std::vector<std::size_t>& pick) {
    std::vector<double> v;
    for (const auto& row : samples) {
      double mean = 0.0;
      for (std::size_t i : pick) mean += row[i];
      mean /= static_cast<double>(pick.size());
      double acc = 0.0;
      for (std::size_t i : pick) acc += (row[i] - mean) * (row[i] - mean);
      v.push_back(acc / static_cast<double>(pick.size() - 1));
    }
    return v;
  };
  const std::size_t n = samples.front().size();
  require(n >= 2, "variance_slope needs at least two members");
  for (const auto& row : samples) require(row.size() == n, "variance_slope: ragged samples");
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  RateFitOptions point = opt;
  point.bootstrap = 0;
  FitTarget fit = rate_fit(scales, variances(all), {}, point);
  if (opt.bootstrap > 0) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> slopes;
    std::vector<std::size_t> idx(n);
    for (int b = 0; b < opt.bootstrap; ++b) {
      for (auto& i : idx) i = pick(rng);
      const auto v = variances(idx);
      bool ok = true;
      for (double x : v) ok = ok && x > 0.0;
      if (!ok) continue;
      std::vector<double> lx, ly;
      for (std::size_t s = 0; s < scales.size(); ++s) {
        lx.push_back(std::log(scales[s]));
        ly.push_back(std::log(v[s]));
      }
      slopes.push_back(detail::ols(lx, ly).first);
    }
    if (!slopes.empty()) {
      const double alpha = 0.5 * (1.0 - opt.confidence);
      fit.ci_lo = std::min(detail::quantile(slopes, alpha), fit.slope);
      fit.ci_hi = std::max(detail::quantile(slopes, 1.0 - alpha), fit.slope);
      fit.ci_method = "bootstrap";
    }
  }
  return fit;
}

}  // namespace hlab
