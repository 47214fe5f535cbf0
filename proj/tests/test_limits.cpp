#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "subcrit/limits.hpp"

using namespace subcrit;

namespace {

const BranchingParams kPreset(1.0, 0.25, 1.0);
const double kSqrtHalfPi = std::sqrt(std::numbers::pi / 2.0);

double super_root(double th) { return (0.5 - std::sqrt(0.25 - th)) / 0.5; }

// (1/2pi) int |phi^|^2 / (Q + w^2/2)^k dw for phi = exp(-x^2), sigma = 1
double fourier_pairing(double Q, int k) {
  const auto rule = gauss_legendre(40);
  double s = 0.0;
  for (int p = -60; p < 60; ++p)
    s += gauss_panel(
        [&](double w) { return std::numbers::pi * std::exp(-0.5 * w * w) / std::pow(Q + 0.5 * w * w, k); }, 0.25 * p,
        0.25 * p + 0.25, rule);
  return s / (2.0 * std::numbers::pi);
}

}  // namespace

TEST(QuadraticForms, DegenerateClosedForm) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto f = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  EXPECT_NEAR(f.T1, 5.01326, 1e-5);
  EXPECT_NEAR(f.T2, 10.02651, 1e-5);
  EXPECT_NEAR(f.T1, kSqrtHalfPi / 0.25, 1e-13);
  EXPECT_NEAR(f.T2, kSqrtHalfPi / 0.125, 1e-13);
}

TEST(QuadraticForms, BrownianAgainstFourierOracle) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const double Q = 0.5;
  const auto f = quadratic_forms(MotionModel::brownian(1.0), Q, phi);
  EXPECT_NEAR(f.T1, fourier_pairing(Q, 1) / Q, 1e-9);
  EXPECT_NEAR(f.T2, fourier_pairing(Q, 2) / Q, 1e-9);
  EXPECT_TRUE(f.finite);
}

TEST(QuadraticForms, BilinearSymmetry) {
  const auto a = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto b = TestFunction::gaussian_bump({1.5}, 0.6, 2.0);
  for (const auto& m : {MotionModel::brownian(0.8), MotionModel::ornstein_uhlenbeck(0.2, 1.0),
                        MotionModel::compound_poisson(1.0, 0.5)}) {
    const auto ab = quadratic_forms(m, 0.5, a, b);
    const auto ba = quadratic_forms(m, 0.5, b, a);
    EXPECT_NEAR(ab.T1, ba.T1, 1e-9 * std::abs(ab.T1)) << m.describe();
    EXPECT_NEAR(ab.T2, ba.T2, 1e-9 * std::abs(ab.T2)) << m.describe();
    EXPECT_GE(ab.T1, 0.0);
    EXPECT_GE(ab.T2, 0.0);
  }
}

TEST(QuadraticForms, OrnsteinUhlenbeckAgainstGridOperator) {
  const auto phi = TestFunction::gaussian_bump({0.5}, 1.0);
  const auto m = MotionModel::ornstein_uhlenbeck(0.2, 1.0);
  GridOptions go;
  go.h = 0.05;
  const auto gp = GridProblem::build(kPreset, m, phi, go);
  const Vec u = gp.potential().apply(gp.phi());
  const double r = lebesgue_decay_rate(m, 0.5);
  const auto f = quadratic_forms(m, 0.5, phi, 1e-9);
  EXPECT_NEAR(f.T1, gp.integrate(gp.phi().cwiseProduct(u)) / r, 2e-3 * f.T1);
  EXPECT_NEAR(f.T2, gp.integrate(u.cwiseProduct(u)) / r, 2e-3 * f.T2);
}

TEST(QuadraticForms, DivergentOuMarksA4) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto m = MotionModel::ornstein_uhlenbeck(0.7, 1.0);
  const auto f = quadratic_forms(m, 0.5, phi);
  EXPECT_FALSE(f.finite);
  auto rep = check_assumptions(m, kPreset, phi, {1.0, 2.0, 3.0, 4.0});
  complete_a4(rep, f);
  EXPECT_EQ(rep.at("A4").status, CheckStatus::fail);
  auto ok = check_assumptions(MotionModel::brownian(1.0), kPreset, phi, {1.0, 2.0, 3.0, 4.0});
  complete_a4(ok, quadratic_forms(MotionModel::brownian(1.0), 0.5, phi));
  EXPECT_EQ(ok.at("A4").status, CheckStatus::pass);
}

TEST(CltCovariance, Examples) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto f = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  EXPECT_EQ(clt_covariance(LimitModel::bps, 0.0, 0.7, kPreset, f), 0.0);
  EXPECT_NEAR(clt_covariance(LimitModel::bps, 1.0, 1.0, kPreset, f), 7.51989, 1e-5);
  EXPECT_NEAR(clt_covariance(LimitModel::super, 1.0, 1.0, kPreset, f), 2.50663, 1e-5);
  EXPECT_NEAR(clt_covariance(LimitModel::bps, 0.3, 0.8, kPreset, f), 0.3 * 7.51989, 1e-5);
  EXPECT_THROW(clt_covariance(LimitModel::bps, 1.2, 0.5, kPreset, f), DomainError);
  for (auto model : {LimitModel::bps, LimitModel::super})
    EXPECT_NEAR(mdp_denominator(model, kPreset, f), 4.0 * clt_covariance(model, 1.0, 1.0, kPreset, f), 1e-12);
}

TEST(LlnSlope, Examples) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  EXPECT_NEAR(lln_slope(kPreset, MotionModel::brownian(1.0), phi), 2.0 * std::sqrt(std::numbers::pi), 1e-12);
  EXPECT_NEAR(lln_slope({1.0, 0.25, 3.0}, MotionModel::brownian(1.0), phi), 6.0 * std::sqrt(std::numbers::pi), 1e-12);
  EXPECT_EQ(lln_slope(kPreset, MotionModel::degenerate(), phi), lln_slope(kPreset, MotionModel::brownian(2.0), phi));
  EXPECT_THROW(lln_slope(kPreset, MotionModel::ornstein_uhlenbeck(0.7, 1.0), phi), DomainError);
}

TEST(LambdaMeasure, DegenerateSuper) {
  const SteadyStateFamily fam(OneParticleModel::super, GridProblem::point(kPreset));
  EXPECT_EQ(lambda_measure(fam, MeasureOnUnit{}), 0.0);
  EXPECT_NEAR(lambda_measure(fam, MeasureOnUnit::dirac(1.0, 0.16)), 0.4, 1e-10);
  EXPECT_NEAR(lambda_measure(fam, MeasureOnUnit::dirac(0.5, 0.16)), 0.2, 1e-10);
  EXPECT_THROW(lambda_measure(fam, MeasureOnUnit::dirac(1.0, 0.3)), ThresholdError);
}

TEST(LambdaMeasure, AdditiveOverDisjointLevels) {
  const auto gp = GridProblem::build(kPreset, MotionModel::brownian(1.0), TestFunction::gaussian_bump({0.0}, 1.0));
  const SteadyStateFamily fam(OneParticleModel::bps, gp);
  // chi = 0.1 on [0, 0.3) and 0.05 on [0.3, 0.8)
  const MeasureOnUnit nu({{0.8, 0.05}, {0.3, 0.05}});
  const double whole = lambda_measure(fam, nu);
  const double parts = 0.3 * lambda_measure(fam, MeasureOnUnit::dirac(1.0, 0.1)) +
                       0.5 * lambda_measure(fam, MeasureOnUnit::dirac(1.0, 0.05));
  EXPECT_NEAR(whole, parts, 1e-12);
}

TEST(LdpScalar, DegenerateSuperClosedForm) {
  const SteadyStateFamily fam(OneParticleModel::super, GridProblem::point(kPreset));
  const SteadyCumulant L{&fam};
  const double mu = 2.0;  // H/Q
  EXPECT_LT(ldp_rate_scalar(L, mu).value, 1e-12);
  for (double x : {0.5 * mu, 0.8 * mu, 1.5 * mu, 3.0 * mu}) {
    const double th = (0.25 - 1.0 / (x * x)) / 1.0;
    const double ref = x * th - super_root(th);
    const auto r = ldp_rate_scalar(L, x);
    EXPECT_NEAR(r.value, ref, 1e-8) << x;
    EXPECT_NEAR(r.maximizer[0], th, 1e-7) << x;
    EXPECT_FALSE(r.boundary_active[0]);
  }
}

TEST(LdpScalar, ZeroAtLlnValueAndConvex) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto gp = GridProblem::build(kPreset, MotionModel::brownian(1.0), phi);
  for (auto m : {OneParticleModel::bps, OneParticleModel::super}) {
    const SteadyStateFamily fam(m, gp);
    const SteadyCumulant L{&fam};
    const double mean = kPreset.H * gp.integrate(gp.potential().apply(gp.phi()));
    EXPECT_LT(ldp_rate_scalar(L, mean).value, 1e-10);
    std::vector<double> xs, vals;
    for (double x = 0.4 * mean; x <= 2.0 * mean; x += 0.2 * mean) {
      xs.push_back(x);
      vals.push_back(ldp_rate_scalar(L, x).value);
      EXPECT_GE(vals.back(), 0.0);
    }
    for (std::size_t i = 1; i + 1 < xs.size(); ++i) EXPECT_LE(vals[i], 0.5 * (vals[i - 1] + vals[i + 1]) + 1e-10);
  }
}

TEST(LdpScalar, BoundaryActiveBeyondSlopeAtThreshold) {
  const QuadraticCumulant quad{1.0};
  EXPECT_NEAR(ldp_rate_scalar(quad, 3.0).value, 2.25, 1e-12);
  // bps on the point grid has a finite slope at the threshold
  const SteadyStateFamily fam(OneParticleModel::bps, GridProblem::point(kPreset));
  const SteadyCumulant L{&fam};
  const double top = fam.upper() * (1.0 - 1e-9);
  const double slope_top = L.derivative(top);
  const auto r = ldp_rate_scalar(L, 2.0 * slope_top);
  EXPECT_TRUE(r.boundary_active[0]);
  EXPECT_NEAR(r.maximizer[0], top, 1e-15);
}

TEST(LdpScalar, ZeroLevel) {
  const SteadyStateFamily bps(OneParticleModel::bps, GridProblem::point(kPreset));
  const auto b = ldp_rate_scalar(SteadyCumulant{&bps}, 0.0);
  EXPECT_NEAR(b.value, kPreset.H, 1e-6);
  const SteadyStateFamily sup(OneParticleModel::super, GridProblem::point(kPreset));
  const auto s = ldp_rate_scalar(SteadyCumulant{&sup}, 0.0);
  EXPECT_TRUE(s.unbounded);
  EXPECT_GT(s.value, 1e3);
}

TEST(LdpPath, SeparableEmbedding) {
  const SteadyStateFamily fam(OneParticleModel::super, GridProblem::point(kPreset));
  const SteadyCumulant L{&fam};
  const double mu = 2.0;
  const auto lln = PathSample::from_function(64, [&](double t) { return mu * t; });
  const auto r0 = ldp_rate_path(L, lln, 16);
  EXPECT_LT(r0.value, 1e-10);
  for (double s : r0.maximizer) EXPECT_NEAR(s, 0.0, 1e-9);
  for (double x : {0.5 * mu, mu, 1.5 * mu}) {
    const auto f = PathSample::from_function(64, [&](double t) { return x * t; });
    EXPECT_NEAR(ldp_rate_path(L, f, 16).value, ldp_rate_scalar(L, x).value, 1e-6) << x;
  }
  const SteadyStateFamily bfam(OneParticleModel::bps, GridProblem::point(kPreset));
  const auto zero = PathSample::from_function(8, [](double) { return 0.0; });
  const double z4 = ldp_rate_path(SteadyCumulant{&bfam}, zero, 4).value;
  EXPECT_NEAR(z4, ldp_rate_path(SteadyCumulant{&bfam}, zero, 8).value, 1e-12);
  EXPECT_NEAR(z4, ldp_rate_scalar(SteadyCumulant{&bfam}, 0.0).value, 1e-12);
  EXPECT_THROW(ldp_rate_path(L, PathSample(std::vector<double>{0.0, 1.0, 0.5}), 2), DomainError);
  EXPECT_THROW(ldp_rate_path(L, PathSample(std::vector<double>{0.1, 1.0, 1.5}), 2), DomainError);
}

TEST(LdpPath, QuadraticCumulantReproducesMdp) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto forms = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  const QuadraticCumulant quad{clt_covariance(LimitModel::bps, 1.0, 1.0, kPreset, forms)};
  const auto f = PathSample::from_function(128, [](double t) { return std::sin(2.0 * t) + 0.5 * t * t; });
  EXPECT_NEAR(ldp_rate_path(quad, f, 128).value, mdp_rate_path(LimitModel::bps, f, kPreset, forms).value, 1e-6);
}

TEST(MdpRate, Examples) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto forms = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  const auto line = PathSample::from_function(64, [](double t) { return t; });
  EXPECT_NEAR(mdp_rate_path(LimitModel::bps, line, kPreset, forms).value, 0.033245, 1e-6);
  const double x = 1.7;
  const auto xl = PathSample::from_function(64, [&](double t) { return x * t; });
  EXPECT_NEAR(mdp_rate_path(LimitModel::super, xl, kPreset, forms).value,
              x * x / (4.0 * kPreset.H * kPreset.Vq() * forms.T2), 1e-12);
  const auto f = PathSample::from_function(64, [](double t) { return t * t - t * t * t; });
  const auto f2 = PathSample::from_function(64, [](double t) { return 2.0 * (t * t - t * t * t); });
  EXPECT_NEAR(mdp_rate_path(LimitModel::bps, f2, kPreset, forms).value,
              4.0 * mdp_rate_path(LimitModel::bps, f, kPreset, forms).value, 1e-12);
}

TEST(MdpRate, RoughPathIsInfinite) {
  const auto phi = TestFunction::gaussian_bump({0.0}, 1.0);
  const auto forms = quadratic_forms(MotionModel::degenerate(), 0.5, phi);
  auto rng = make_rng(4, 0);
  std::normal_distribution<double> n;
  std::vector<double> w{0.0};
  for (int i = 0; i < 4096; ++i) w.push_back(w.back() + n(rng) / 64.0);
  const auto r = mdp_rate_path(LimitModel::bps, PathSample(w), kPreset, forms);
  EXPECT_TRUE(std::isinf(r.value));
}
