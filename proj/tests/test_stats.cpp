#include "hlab/stats.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hlab;

TEST(EnsembleStats, MatchesTwoPassMoments) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(3.0, 2.0);
  EnsembleStats st;
  std::vector<double> xs;
  for (std::uint64_t i = 0; i < 500; ++i) {
    xs.push_back(nd(rng));
    st.add(mix_seed(9, i), xs.back());
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= 500.0;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= 499.0;
  EXPECT_NEAR(st.mean(), mean, 1e-12);
  EXPECT_NEAR(st.variance(), var, 1e-10);
  EXPECT_EQ(st.min(), *std::min_element(xs.begin(), xs.end()));
  EXPECT_EQ(st.max(), *std::max_element(xs.begin(), xs.end()));
}

TEST(EnsembleStats, MergeIsExactAndAssociative) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int trial = 0; trial < 20; ++trial) {
    EnsembleStats a, b, c, all;
    for (std::uint64_t i = 0; i < 90; ++i) {
      const double x = u(rng);
      const std::uint64_t seed = mix_seed(trial, i);
      (i % 3 == 0 ? a : i % 3 == 1 ? b : c).add(seed, x);
      all.add(seed, x);
    }
    const auto left = EnsembleStats::merge(EnsembleStats::merge(a, b), c);
    const auto right = EnsembleStats::merge(a, EnsembleStats::merge(c, b));
    EXPECT_TRUE(left == all);
    EXPECT_TRUE(right == all);
    EXPECT_EQ(left.m2(), all.m2());
  }
}

TEST(EnsembleStats, RejectsNonFinite) {
  EnsembleStats st;
  EXPECT_THROW(st.add(1, std::nan("")), NumericalError);
}

TEST(RunMembers, DeterministicAcrossJobCounts) {
  auto fn = [](std::uint64_t seed, std::size_t) { return to_unit(splitmix64(seed)); };
  const auto one = run_members<double>(64, 77, 1, fn);
  const auto four = run_members<double>(64, 77, 4, fn);
  EXPECT_EQ(one, four);
  const auto st1 = ensemble([](std::uint64_t s) { return to_unit(s); }, 32, 5, 1);
  const auto st3 = ensemble([](std::uint64_t s) { return to_unit(s); }, 32, 5, 3);
  EXPECT_TRUE(st1 == st3);
  EXPECT_EQ(st1.seeds(), st3.seeds());
}

TEST(RunMembers, CollectsFailuresAfterAllMembersRun) {
  std::atomic<int> calls{0};
  try {
    run_members<int>(10, 1, 2, [&](std::uint64_t, std::size_t i) {
      ++calls;
      if (i % 4 == 1) throw SolverError("no convergence", 1.0, 5);
      return static_cast<int>(i);
    });
    FAIL() << "expected EnsembleError";
  } catch (const EnsembleError& e) {
    EXPECT_EQ(e.failures().size(), 3u);
    EXPECT_EQ(e.failures()[0].index, 1u);
    EXPECT_EQ(e.failures()[0].kind, "solver_error");
  }
  EXPECT_EQ(calls.load(), 10);
}

TEST(RateFit, RecoversExactPowerLaw) {
  std::vector<double> s{1, 3, 9, 27}, v;
  for (double x : s) v.push_back(5.0 * std::pow(x, -1.5));
  const auto fit = rate_fit(s, v);
  EXPECT_NEAR(fit.slope, -1.5, 1e-12);
  EXPECT_NEAR(std::exp(fit.intercept), 5.0, 1e-10);
  EXPECT_EQ(fit.ci_method, "ols");
  EXPECT_NEAR(fit.ci_lo, -1.5, 1e-8);
}

TEST(RateFit, BootstrapIntervalCoversTruth) {
  std::vector<double> s{4, 8, 16, 32}, v, se;
  for (double x : s) {
    v.push_back(std::pow(x, -2.0));
    se.push_back(0.05 * std::pow(x, -2.0));
  }
  RateFitOptions o;
  o.band_lo = -2.7;
  o.band_hi = -1.3;
  const auto fit = rate_fit(s, v, se, o);
  EXPECT_EQ(fit.ci_method, "bootstrap");
  EXPECT_LE(fit.ci_lo, -2.0);
  EXPECT_GE(fit.ci_hi, -2.0);
  EXPECT_TRUE(fit.in_band());
}

TEST(RateFit, RejectsBadInput) {
  EXPECT_THROW(rate_fit({1, 2}, {1, 2}), ArgumentError);
  EXPECT_THROW(rate_fit({1, 2, 3}, {1, -2, 3}), ArgumentError);
  EXPECT_THROW(rate_fit({2, 2, 2}, {1, 2, 3}), ArgumentError);
}

TEST(VarianceSlope, WhiteNoiseAverages) {
  // Block averages of iid noise over n cells have variance 1/n.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<double> scales{4, 16, 64, 256};
  std::vector<std::vector<double>> samples(scales.size());
  for (int member = 0; member < 400; ++member)
    for (std::size_t s = 0; s < scales.size(); ++s) {
      double acc = 0.0;
      for (int i = 0; i < static_cast<int>(scales[s]); ++i) acc += nd(rng);
      samples[s].push_back(acc / scales[s]);
    }
  const auto fit = variance_slope(scales, samples);
  EXPECT_NEAR(fit.slope, -1.0, 0.1);
  EXPECT_LE(fit.ci_lo, fit.slope);
  EXPECT_GE(fit.ci_hi, fit.slope);
}
