#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "subcrit/stats.hpp"

using namespace subcrit;

namespace {

const BranchingParams kPreset(1.0, 0.25, 1.0);

SimConfig small_config(NormKind kind, double alpha = 0.5) {
  SimConfig c;
  c.T = 16.0;
  c.dt = 0.25;
  c.R = 6.0;
  c.seed = 31;
  c.norm = kind == NormKind::T ? Normalization::lln() : kind == NormKind::sqrtT ? Normalization::clt() : Normalization::mdp(alpha);
  return c;
}

// plain leave-one-out jackknife for reference
template <class F>
Estimate brute_jackknife(const std::vector<double>& x, const std::vector<double>& y, F stat) {
  const std::size_t n = x.size();
  std::vector<double> vals;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a, b;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) a.push_back(x[j]), b.push_back(y[j]);
    vals.push_back(stat(a, b));
  }
  double m = 0.0;
  for (double v : vals) m += v;
  m /= n;
  double s = 0.0;
  for (double v : vals) s += (v - m) * (v - m);
  return {stat(x, y), std::sqrt((n - 1.0) / n * s)};
}

double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (a.size() - 1.0);
}

}  // namespace

TEST(Estimators, LogMeanExpShift) {
  const std::vector<double> x{1000.0, 1000.0, 1000.0 + std::log(4.0)};
  EXPECT_NEAR(log_mean_exp(x), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> y{0.1, -0.3, 0.7};
  EXPECT_NEAR(log_mean_exp(y), std::log((std::exp(0.1) + std::exp(-0.3) + std::exp(0.7)) / 3.0), 1e-15);
}

TEST(Estimators, EffectiveSampleSize) {
  EXPECT_NEAR(effective_sample_size(std::vector<double>(50, 2.0)), 50.0, 1e-12);
  std::vector<double> z(50, 0.0);
  z[7] = 60.0;
  EXPECT_NEAR(effective_sample_size(z), 1.0, 1e-12);
}

TEST(Jackknife, MatchesLeaveOneOut) {
  auto rng = make_rng(3, 0);
  std::normal_distribution<double> n;
  std::vector<double> x(40), y(40);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    y[i] = 0.5 * x[i] + n(rng);
  }
  const auto fast = covariance_jackknife(x, y);
  const auto slow = brute_jackknife(x, y, sample_cov);
  EXPECT_NEAR(fast.value, slow.value, 1e-12);
  EXPECT_NEAR(fast.std_error, slow.std_error, 1e-12);
  EXPECT_GE(fast.std_error, 0.0);
  const auto corr = correlation_jackknife(x, y);
  const auto corr_slow = brute_jackknife(x, y, [](const std::vector<double>& a, const std::vector<double>& b) {
    return sample_cov(a, b) / std::sqrt(sample_cov(a, a) * sample_cov(b, b));
  });
  EXPECT_NEAR(corr.value, corr_slow.value, 1e-12);
  EXPECT_NEAR(corr.std_error, corr_slow.std_error, 1e-12);
}

TEST(Jackknife, GaussianShapeStatistics) {
  auto rng = make_rng(8, 0);
  std::normal_distribution<double> n;
  std::vector<double> x(20000);
  for (auto& v : x) v = 2.0 + 3.0 * n(rng);
  const auto k = excess_kurtosis_jackknife(x);
  const auto s = skewness_jackknife(x);
  EXPECT_LT(std::abs(k.value), 4.0 * k.std_error);
  EXPECT_LT(std::abs(s.value), 4.0 * s.std_error);
  std::exponential_distribution<double> e(1.0);
  for (auto& v : x) v = e(rng);
  EXPECT_NEAR(excess_kurtosis_jackknife(x).value, 6.0, 1.5);
  EXPECT_NEAR(skewness_jackknife(x).value, 2.0, 0.2);
}

TEST(Bootstrap, SeededAndContainsEstimate) {
  auto rng = make_rng(5, 0);
  std::normal_distribution<double> n;
  std::vector<double> x(300);
  for (auto& v : x) v = n(rng);
  const auto a = bootstrap_log_mean_exp(x, 200, 9);
  const auto b = bootstrap_log_mean_exp(x, 200, 9);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_LE(a.ci_lo, a.estimate);
  EXPECT_GE(a.ci_hi, a.estimate);
  EXPECT_NEAR(a.estimate, 0.5, 4.0 * a.std_error);
}

TEST(Ensemble, DeterministicAcrossWorkers) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto cfg = small_config(NormKind::sqrtT);
  const auto m = MotionModel::brownian(1.0);
  auto c = cfg;
  c.R = 14.0;
  const auto a = run_ensemble(c, kPreset, m, phi, 24, 1, 4);
  const auto b = run_ensemble(c, kPreset, m, phi, 24, 8, 4);
  EXPECT_EQ(a.fingerprint, b.fingerprint);
  ASSERT_EQ(a.size(), 24u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.reps[i].X.values(), b.reps[i].X.values());
    EXPECT_EQ(a.reps[i].seed, b.reps[i].seed);
  }
  EXPECT_EQ(a.intervals(), 16u);
  auto other = c;
  other.seed = 32;
  EXPECT_NE(run_ensemble(other, kPreset, m, phi, 24, 2, 4).fingerprint, a.fingerprint);
}

TEST(Ensemble, ErrorsNameTheReplicate) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  auto cfg = small_config(NormKind::T);
  cfg.particle_cap = 1;
  try {
    run_ensemble(cfg, BranchingParams(1.0, 0.45, 3.0), MotionModel::degenerate(), phi, 10, 4);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("replicate "), std::string::npos);
  }
  EXPECT_THROW(run_ensemble(cfg, kPreset, MotionModel::degenerate(), phi, 0, 1), DomainError);
  EXPECT_THROW(run_ensemble(small_config(NormKind::T), kPreset, MotionModel::degenerate(), phi, 4, 1, 3), DomainError);
}

TEST(Clt, RequiresSqrtNormalization) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto set = run_ensemble(small_config(NormKind::T), kPreset, MotionModel::degenerate(), phi, 8, 2);
  const auto forms = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  EXPECT_THROW(clt_verify(set, LimitModel::bps, kPreset, forms, {{1.0, 1.0}}), DomainError);
}

TEST(Clt, ReportIsPureFunctionOfSet) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto set = run_ensemble(small_config(NormKind::sqrtT), kPreset, MotionModel::degenerate(), phi, 200, 4, 8);
  const auto forms = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  const auto a = clt_verify(set, LimitModel::bps, kPreset, forms, {{1.0, 1.0}, {0.5, 1.0}});
  const auto b = clt_verify(set, LimitModel::bps, kPreset, forms, {{1.0, 1.0}, {0.5, 1.0}});
  EXPECT_EQ(a.covariances[0].empirical.value, b.covariances[0].empirical.value);
  EXPECT_EQ(a.excess_kurtosis.std_error, b.excess_kurtosis.std_error);
  EXPECT_NEAR(a.covariances[1].predicted, 0.5 * a.covariances[0].predicted, 1e-12);
  EXPECT_GE(a.covariances[0].empirical.std_error, 0.0);
}

TEST(Cgf, ZeroSymmetryAndSecondOrder) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto set = run_ensemble(small_config(NormKind::moderate, 0.5), kPreset, MotionModel::degenerate(), phi, 3000, 8);
  const auto z = empirical_cgf(set, 0.0, 0.5);
  EXPECT_EQ(z.estimate, 0.0);
  const double th = 0.02;
  const auto p = empirical_cgf(set, th, 0.5);
  const auto n = empirical_cgf(set, -th, 0.5);
  ASSERT_TRUE(p.reliable);
  ASSERT_TRUE(n.reliable);
  EXPECT_LT(std::abs(p.estimate - n.estimate), 3.0 * std::hypot(p.std_error, n.std_error) + 0.15 * std::abs(p.estimate));
  // second-order: T^-a log E exp(th T^a X) ~ th^2 T^a Var X / 2
  const double Ta = std::sqrt(set.T);
  const double var = variance_of(set.x_at(set.intervals()));
  const double mean = mean_of(set.x_at(set.intervals()));
  const double second = th * mean + 0.5 * th * th * Ta * var;
  EXPECT_NEAR(0.5 * (p.estimate + n.estimate), 0.5 * th * th * Ta * var, 0.15 * 0.5 * th * th * Ta * var);
  EXPECT_NEAR(p.estimate, second, 0.15 * std::abs(second) + 3.0 * p.std_error);
  EXPECT_THROW(empirical_cgf(set, th, 0.4), DomainError);
  EXPECT_THROW(empirical_cgf(set, th, 1.0), DomainError);
}

TEST(Cgf, EssFloorMarksUnreliable) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto set = run_ensemble(small_config(NormKind::moderate, 0.5), kPreset, MotionModel::degenerate(), phi, 40, 4);
  const auto c = empirical_cgf(set, 20.0, 0.5);
  EXPECT_FALSE(c.reliable);
  EXPECT_TRUE(std::isnan(c.estimate));
  EXPECT_LE(c.ess, 40.0);
}

TEST(Suprema, Examples) {
  const auto flat = PathSample(std::vector<double>(17, 0.0));
  const auto L0 = dyadic_L(flat);
  for (double v : L0) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(suprema_check(flat).holds);
  const auto line = PathSample::from_function(16, [](double t) { return t; });
  const auto L = dyadic_L(line);
  ASSERT_EQ(L.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(L[k], std::ldexp(1.0, -static_cast<int>(k) - 1), 1e-15);
  const auto c = suprema_check(line);
  EXPECT_NEAR(c.bound, 2.0 * 15.0 / 16.0 + 1.0, 1e-14);
  EXPECT_TRUE(c.holds);
  EXPECT_THROW(dyadic_L(PathSample::from_function(12, [](double t) { return t; })), DomainError);
}

TEST(Suprema, HoldsForRandomWalks) {
  auto rng = make_rng(6, 0);
  std::normal_distribution<double> n;
  for (int r = 0; r < 500; ++r) {
    std::vector<double> w{0.0};
    for (int i = 0; i < 256; ++i) w.push_back(w.back() + n(rng) + (r % 3 == 0 ? 0.3 : 0.0));
    EXPECT_TRUE(suprema_check(PathSample(w)).holds);
  }
}

TEST(PathBounds, FittedConstantStable) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  auto cfg = small_config(NormKind::sqrtT);
  cfg.T = 64.0;
  cfg.dt = 0.25;
  const auto small = run_ensemble(cfg, kPreset, MotionModel::degenerate(), phi, 1000, 8, 16);
  const auto big = run_ensemble(cfg, kPreset, MotionModel::degenerate(), phi, 2000, 8, 16);
  const auto a = path_bound_checks(small), b = path_bound_checks(big);
  EXPECT_EQ(a.suprema_violations, 0u);
  EXPECT_EQ(b.suprema_violations, 0u);
  EXPECT_EQ(a.suprema_fraction, 1.0);
  EXPECT_GT(a.fitted_c, 0.0);
  EXPECT_NEAR(a.fitted_c / b.fitted_c, 1.0, 0.2);
  for (const auto& pt : a.design) {
    EXPECT_LE(pt.theta, std::pow(cfg.T, -0.25) + 1e-15);
    EXPECT_LE(pt.theta * pt.theta * pt.lag, 0.1 + 1e-12);
  }
}
