#pragma once
//!\file
//!\brief Markov families: exact transition sampling, semigroup, potential operator, assumption diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "subcrit/core_model.hpp"
#include "subcrit/quadrature.hpp"
#include "subcrit/rng.hpp"

namespace subcrit {

enum class MotionKind { degenerate, brownian, ornstein_uhlenbeck, compound_poisson };

inline const char* to_string(MotionKind k) {
  switch (k) {
    case MotionKind::degenerate: return "degenerate";
    case MotionKind::brownian: return "brownian";
    case MotionKind::ornstein_uhlenbeck: return "ornstein-uhlenbeck";
    case MotionKind::compound_poisson: return "compound-poisson";
  }
  return "?";
}

class MotionModel {
 public:
  static MotionModel degenerate(std::size_t d = 1) { return MotionModel(MotionKind::degenerate, d); }
  static MotionModel brownian(double sigma, std::size_t d = 1) {
    if (!(sigma > 0.0)) throw DomainError("brownian motion: sigma must be > 0");
    MotionModel m(MotionKind::brownian, d);
    m.sigma_ = sigma;
    return m;
  }
  /// sigma = 0 is accepted and gives the deterministic flow x e^{-theta t}.
  static MotionModel ornstein_uhlenbeck(double theta, double sigma, std::size_t d = 1) {
    if (!(theta > 0.0)) throw DomainError("ornstein-uhlenbeck: theta must be > 0");
    if (!(sigma >= 0.0)) throw DomainError("ornstein-uhlenbeck: sigma must be >= 0");
    MotionModel m(MotionKind::ornstein_uhlenbeck, d);
    m.theta_ = theta;
    m.sigma_ = sigma;
    return m;
  }
  static MotionModel compound_poisson(double rate, double jump_std, std::size_t d = 1) {
    if (!(rate > 0.0)) throw DomainError("compound-poisson: rate must be > 0");
    if (!(jump_std > 0.0)) throw DomainError("compound-poisson: jump std must be > 0");
    MotionModel m(MotionKind::compound_poisson, d);
    m.rho_ = rate;
    m.jump_std_ = jump_std;
    return m;
  }

  MotionKind kind() const { return kind_; }
  std::size_t dim() const { return d_; }
  double sigma() const { return sigma_; }
  double theta() const { return theta_; }
  double rate() const { return rho_; }
  double jump_std() const { return jump_std_; }
  bool translation_invariant() const { return kind_ != MotionKind::ornstein_uhlenbeck; }
  bool is_static() const { return kind_ == MotionKind::degenerate; }

  /// E[eta_t | eta_0 = x] along one axis.
  double mean_after(double x, double t) const {
    return kind_ == MotionKind::ornstein_uhlenbeck ? x * std::exp(-theta_ * t) : x;
  }

  /// Per-axis variance of eta_t for the Gaussian kinds.
  double gaussian_variance(double t) const {
    switch (kind_) {
      case MotionKind::brownian: return sigma_ * sigma_ * t;
      case MotionKind::ornstein_uhlenbeck: return sigma_ * sigma_ * (-std::expm1(-2.0 * theta_ * t)) / (2.0 * theta_);
      default: return 0.0;
    }
  }

  /// Exact transition sample, in place.
  void step(std::span<double> x, double dt, Rng& rng) const {
    if (!(dt > 0.0)) throw DomainError("MotionModel::step: dt must be > 0");
    step_unchecked(x, dt, rng);
  }

  std::vector<double> step(std::vector<double> x, double dt, Rng& rng) const {
    step(std::span<double>(x), dt, rng);
    return x;
  }

  void step_unchecked(std::span<double> x, double dt, Rng& rng) const {
    std::normal_distribution<double> normal;
    switch (kind_) {
      case MotionKind::degenerate: return;
      case MotionKind::brownian: {
        const double s = sigma_ * std::sqrt(dt);
        for (auto& xi : x) xi += s * normal(rng);
        return;
      }
      case MotionKind::ornstein_uhlenbeck: {
        const double a = std::exp(-theta_ * dt);
        const double s = std::sqrt(gaussian_variance(dt));
        for (auto& xi : x) xi = xi * a + (s > 0.0 ? s * normal(rng) : 0.0);
        return;
      }
      case MotionKind::compound_poisson: {
        std::poisson_distribution<long> jumps(rho_ * dt);
        const long k = jumps(rng);
        for (long j = 0; j < k; ++j)
          for (auto& xi : x) xi += jump_std_ * normal(rng);
        return;
      }
    }
  }

  std::string describe() const {
    std::string s = to_string(kind_);
    s += "(d=" + std::to_string(d_);
    if (kind_ == MotionKind::brownian) s += ", sigma=" + detail::fmt_g(sigma_);
    if (kind_ == MotionKind::ornstein_uhlenbeck) s += ", theta=" + detail::fmt_g(theta_) + ", sigma=" + detail::fmt_g(sigma_);
    if (kind_ == MotionKind::compound_poisson) s += ", rate=" + detail::fmt_g(rho_) + ", jump_std=" + detail::fmt_g(jump_std_);
    return s + ")";
  }

 private:
  MotionModel(MotionKind k, std::size_t d) : kind_(k), d_(d) {
    if (d == 0) throw DomainError("MotionModel: dimension must be >= 1");
  }
  MotionKind kind_;
  std::size_t d_;
  double sigma_ = 0.0;
  double theta_ = 0.0;
  double rho_ = 0.0;
  double jump_std_ = 0.0;
};

// ---------------------------------------------------------------------------
// Gaussian mixtures: T_t phi for Gaussian phi, as a function of the starting point
// ---------------------------------------------------------------------------

struct GaussComponent {
  double coef;
  std::vector<double> center;
  std::vector<double> W;  ///< exp(-((x - c)/W)^2) per axis

  double operator()(std::span<const double> x) const {
    double e = 0.0;
    for (std::size_t i = 0; i < center.size(); ++i) {
      const double z = (x[i] - center[i]) / W[i];
      e += z * z;
    }
    return coef * std::exp(-e);
  }
  double integral() const {
    double v = coef;
    for (double w : W) v *= std::sqrt(std::numbers::pi) * w;
    return v;
  }
};

inline double inner_product(const GaussComponent& a, const GaussComponent& b) {
  double v = a.coef * b.coef;
  for (std::size_t i = 0; i < a.center.size(); ++i) {
    const double pa = 1.0 / (a.W[i] * a.W[i]), pb = 1.0 / (b.W[i] * b.W[i]);
    const double dc = a.center[i] - b.center[i];
    v *= std::sqrt(std::numbers::pi / (pa + pb)) * std::exp(-pa * pb / (pa + pb) * dc * dc);
  }
  return v;
}

/// x -> E_x phi(eta_t) (no Q damping) as a finite Gaussian mixture.
inline std::vector<GaussComponent> evolve_gaussian(const MotionModel& m, const TestFunction& phi, double t) {
  if (!phi.is_gaussian()) throw UnsupportedError("analytic semigroup: custom test functions have no closed form");
  if (phi.dim() != m.dim()) throw DomainError("semigroup: test function and motion dimensions differ");
  const auto& c = phi.center();
  const auto& W = phi.gaussian_widths();
  auto smoothed = [&](double s2, double coef, double center_scale, double width_scale) {
    GaussComponent g{coef * phi.prefactor(), c, W};
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double S = W[i] * W[i] + 2.0 * s2;
      g.coef *= W[i] / std::sqrt(S);
      g.center[i] = c[i] * center_scale;
      g.W[i] = std::sqrt(S) * width_scale;
    }
    return g;
  };
  switch (m.kind()) {
    case MotionKind::degenerate: return {smoothed(0.0, 1.0, 1.0, 1.0)};
    case MotionKind::brownian: return {smoothed(m.gaussian_variance(t), 1.0, 1.0, 1.0)};
    case MotionKind::ornstein_uhlenbeck: {
      const double e = std::exp(m.theta() * t);
      return {smoothed(m.gaussian_variance(t), 1.0, e, e)};
    }
    case MotionKind::compound_poisson: {
      const double mu = m.rate() * t;
      std::vector<GaussComponent> out;
      double p = std::exp(-mu), cum = 0.0;
      for (long k = 0;; ++k) {
        if (k > 0) p *= mu / static_cast<double>(k);
        cum += p;
        if (p > 0.0) out.push_back(smoothed(static_cast<double>(k) * m.jump_std() * m.jump_std(), p, 1.0, 1.0));
        if (static_cast<double>(k) > mu && (1.0 - cum < 1e-17 || p < 1e-300)) break;
      }
      return out;
    }
  }
  return {};
}

inline double mixture_value(const std::vector<GaussComponent>& g, std::span<const double> x) {
  double v = 0.0;
  for (const auto& c : g) v += c(x);
  return v;
}

// ---------------------------------------------------------------------------
// Semigroup and potential operator
// ---------------------------------------------------------------------------

struct SemigroupMethod {
  enum class Kind { analytic, monte_carlo };
  Kind kind = Kind::analytic;
  std::size_t pairs = 0;  ///< antithetic pairs for Monte Carlo

  static SemigroupMethod analytic() { return {}; }
  static SemigroupMethod monte_carlo(std::size_t n_pairs) { return {Kind::monte_carlo, n_pairs}; }
};

struct SemigroupEstimate {
  double value;
  double std_error;  ///< 0 for analytic evaluation
};

inline bool has_analytic_semigroup(const MotionModel& m, const TestFunction& phi) {
  return m.kind() == MotionKind::degenerate || phi.is_gaussian();
}

/// T_t^Q phi(x) = e^{-Qt} E_x phi(eta_t).
inline SemigroupEstimate semigroup_apply(const MotionModel& m, double Q, const TestFunction& phi, double t,
                                         std::span<const double> x, SemigroupMethod method = SemigroupMethod::analytic(),
                                         Rng* rng = nullptr) {
  if (!(t >= 0.0)) throw DomainError("semigroup_apply: t must be >= 0");
  if (x.size() != m.dim()) throw DomainError("semigroup_apply: position has wrong dimension");
  if (t == 0.0) return {phi(x), 0.0};
  const double damp = std::exp(-Q * t);
  if (method.kind == SemigroupMethod::Kind::analytic) {
    if (m.kind() == MotionKind::degenerate) return {damp * phi(x), 0.0};
    if (!has_analytic_semigroup(m, phi))
      throw UnsupportedError("semigroup_apply: no analytic form for " + m.describe() + " with a custom test function");
    return {damp * mixture_value(evolve_gaussian(m, phi, t), x), 0.0};
  }
  if (rng == nullptr) throw DomainError("semigroup_apply: Monte Carlo needs an rng");
  if (method.pairs < 2) throw DomainError("semigroup_apply: Monte Carlo needs >= 2 antithetic pairs");
  std::vector<double> y(x.begin(), x.end()), ya(x.size());
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t k = 0; k < method.pairs; ++k) {
    std::copy(x.begin(), x.end(), y.begin());
    m.step_unchecked(y, t, *rng);
    for (std::size_t i = 0; i < y.size(); ++i) ya[i] = 2.0 * m.mean_after(x[i], t) - y[i];
    const double v = 0.5 * (phi(y) + phi(ya));
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(method.pairs);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
  return {damp * mean, damp * std::sqrt(var / n)};
}

inline double semigroup_apply(const MotionModel& m, double Q, const TestFunction& phi, double t, double x) {
  return semigroup_apply(m, Q, phi, t, std::span<const double>(&x, 1)).value;
}

struct PotentialEstimate {
  double value;
  double tail_bound;   ///< ||phi||_inf e^{-Q t_max} / Q
  double quad_error;
};

/// Time needed for the tail bound ||phi||_inf e^{-Qt}/Q to fall below tol.
inline double required_t_max(double Q, double sup_norm, double tol) {
  return std::max(0.0, std::log(sup_norm / (Q * tol)) / Q);
}

/// U^Q phi(x) = int_0^inf T_t^Q phi(x) dt.
inline PotentialEstimate potential_apply(const MotionModel& m, double Q, const TestFunction& phi,
                                         std::span<const double> x, double t_max, double tol) {
  if (!(Q > 0.0)) throw DomainError("potential_apply: Q must be > 0");
  if (!(tol > 0.0)) throw DomainError("potential_apply: tol must be > 0");
  if (m.kind() == MotionKind::degenerate) return {phi(x) / Q, 0.0, 0.0};
  const double tail = phi.sup_norm() * std::exp(-Q * t_max) / Q;
  if (tail > tol)
    throw DomainError("potential_apply: tail bound " + detail::fmt_g(tail) + " exceeds tol; need t_max >= " +
                      detail::fmt_g(required_t_max(Q, phi.sup_norm(), tol)));
  if (!has_analytic_semigroup(m, phi)) throw UnsupportedError("potential_apply: needs an analytic semigroup");
  auto f = [&](double t) { return semigroup_apply(m, Q, phi, t, x).value; };
  const auto r = integrate_adaptive(f, 0.0, t_max, 0.1 * tol, 16);
  return {r.value, tail, r.error};
}

inline double potential_apply(const MotionModel& m, double Q, const TestFunction& phi, double x, double tol = 1e-10) {
  const double tm = required_t_max(Q, phi.sup_norm(), 0.5 * tol) + 1.0;
  return potential_apply(m, Q, phi, std::span<const double>(&x, 1), tm, tol).value;
}

/// <lambda, T_t^Q phi>
inline double lebesgue_semigroup_mass(const MotionModel& m, double Q, const TestFunction& phi, double t) {
  if (!(t >= 0.0)) throw DomainError("lebesgue_semigroup_mass: t must be >= 0");
  double rate = -Q;
  if (m.kind() == MotionKind::ornstein_uhlenbeck) rate += static_cast<double>(m.dim()) * m.theta();
  return std::exp(rate * t) * phi.integral();
}

/// Exponential rate r with <lambda, T_t^Q phi> = e^{-r t} <lambda, phi>.
inline double lebesgue_decay_rate(const MotionModel& m, double Q) {
  return m.kind() == MotionKind::ornstein_uhlenbeck ? Q - static_cast<double>(m.dim()) * m.theta() : Q;
}

/// ||T_t^Q phi||_2 in closed form.
inline double semigroup_l2_norm(const MotionModel& m, double Q, const TestFunction& phi, double t) {
  if (m.kind() == MotionKind::degenerate) return std::exp(-Q * t) * std::sqrt(phi.square_integral());
  const auto g = evolve_gaussian(m, phi, t);
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) s += inner_product(g[i], g[j]);
  return std::exp(-Q * t) * std::sqrt(std::max(0.0, s));
}

// ---------------------------------------------------------------------------
// Assumption diagnostics
// ---------------------------------------------------------------------------

enum class CheckStatus { pass, fail, inconclusive };

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::inconclusive: return "inconclusive";
  }
  return "?";
}

struct AssumptionEntry {
  std::string name;
  CheckStatus status = CheckStatus::inconclusive;
  std::vector<double> times;
  std::vector<double> curve;
  double witness = 0.0;  ///< fitted rate, offending time, or last value, per entry
  std::string note;
};

struct AssumptionReport {
  std::vector<AssumptionEntry> entries;
  bool has_ou_verdict = false;
  CheckStatus ou_verdict = CheckStatus::inconclusive;

  const AssumptionEntry& at(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw DomainError("AssumptionReport: no entry " + name);
  }
  AssumptionEntry& at(const std::string& name) {
    for (auto& e : entries)
      if (e.name == name) return e;
    throw DomainError("AssumptionReport: no entry " + name);
  }
};

/// Least-squares slope of log(y) against t over the given index range.
inline double log_linear_slope(const std::vector<double>& t, const std::vector<double>& y, std::size_t from,
                               std::size_t to) {
  double st = 0, sy = 0, stt = 0, sty = 0, n = 0;
  for (std::size_t i = from; i < to; ++i) {
    if (!(y[i] > 0.0)) continue;
    const double ly = std::log(y[i]);
    st += t[i];
    sy += ly;
    stt += t[i] * t[i];
    sty += t[i] * ly;
    n += 1;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sty - st * sy) / (n * stt - st * st);
}

inline AssumptionReport check_assumptions(const MotionModel& m, const BranchingParams& p, const TestFunction& phi,
                                          const std::vector<double>& time_grid) {
  if (time_grid.size() < 3) throw DomainError("check_assumptions: need at least 3 times");
  for (std::size_t i = 0; i < time_grid.size(); ++i)
    if (!(time_grid[i] > 0.0) || (i > 0 && !(time_grid[i] > time_grid[i - 1])))
      throw DomainError("check_assumptions: time grid must be positive and increasing");
  const double Q = p.Q();
  const auto& t = time_grid;
  const std::size_t n = t.size(), half = n / 2;
  std::vector<double> l1(n), l2(n), a5(n), a8(n);
  for (std::size_t i = 0; i < n; ++i) {
    l1[i] = lebesgue_semigroup_mass(m, Q, phi, t[i]);
    a5[i] = std::pow(t[i], 1.5) * l1[i];
    a8[i] = std::min(1.0, std::pow(t[i], 2.0)) * l1[i];
  }
  const bool l2_known = phi.is_gaussian() || m.kind() == MotionKind::degenerate;
  for (std::size_t i = 0; i < n; ++i)
    l2[i] = l2_known ? semigroup_l2_norm(m, Q, phi, t[i]) : std::numeric_limits<double>::quiet_NaN();

  AssumptionReport r;
  r.entries.push_back({"A4", CheckStatus::inconclusive, {}, {}, 0.0, "delegated to quadratic_forms"});

  AssumptionEntry e5{"A5", CheckStatus::inconclusive, t, a5, a5.back(), "t^{3/2} ||T_t^Q phi||_1"};
  const double peak = *std::max_element(a5.begin(), a5.end());
  const bool tail_decreasing = std::is_sorted(a5.begin() + static_cast<long>(half), a5.end(), std::greater<>());
  if (tail_decreasing && a5.back() < 1e-6 * peak) e5.status = CheckStatus::pass;
  else if (!tail_decreasing && a5.back() >= a5[n - 2]) {
    e5.status = CheckStatus::fail;
    e5.witness = t.back();
    e5.note += "; still increasing at the final time";
  }
  r.entries.push_back(e5);

  auto decay_entry = [&](const std::string& name, const std::vector<double>& y, const std::string& what) {
    AssumptionEntry e{name, CheckStatus::inconclusive, t, y, 0.0, what};
    if (std::isnan(y[0])) {
      e.note += "; no closed form for this test function";
      return e;
    }
    const double slope = log_linear_slope(t, y, half, n);
    e.witness = -slope;
    e.status = (-slope > 0.0) ? CheckStatus::pass : CheckStatus::fail;
    e.note += "; witness = fitted exponential decay rate";
    return e;
  };
  r.entries.push_back(decay_entry("A6", l2, "||T_t^Q phi||_2"));
  r.entries.push_back(decay_entry("A7", l1, "||T_t^Q phi||_1"));
  r.entries.push_back({"A8", CheckStatus::inconclusive, t, a8, a8.back(), "(1 ^ t^2) ||T_t^Q phi||_1"});
  r.entries.push_back({"A9", CheckStatus::inconclusive, {}, {}, 0.0, "not evaluated on a finite grid"});

  if (m.kind() == MotionKind::ornstein_uhlenbeck) {
    r.has_ou_verdict = true;
    r.ou_verdict = static_cast<double>(m.dim()) * m.theta() < Q ? CheckStatus::pass : CheckStatus::fail;
  }
  return r;
}

}  // namespace subcrit
