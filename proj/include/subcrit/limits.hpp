#pragma once
//!\file
//!\brief Limit objects: T1/T2 forms, CLT covariance, LLN slope, Lambda(nu) and the LDP/MDP rate functions.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "subcrit/core_model.hpp"
#include "subcrit/motion.hpp"
#include "subcrit/pde.hpp"
#include "subcrit/quadrature.hpp"

namespace subcrit {

struct QuadraticForms {
  double T1 = 0.0;
  double T2 = 0.0;
  double T1_error = 0.0;
  double T2_error = 0.0;
  bool finite = true;  ///< false when the Lebesgue pairing of U^Q diverges
};

namespace detail {

/// <phi1, T_t phi2> (no Q damping), closed form.
inline double pair_after(const MotionModel& m, const TestFunction& f1, const TestFunction& f2, double t) {
  const auto g = evolve_gaussian(m, f2, t);
  const std::vector<GaussComponent> a{GaussComponent{f1.prefactor(), f1.center(), f1.gaussian_widths()}};
  double s = 0.0;
  for (const auto& c : g) s += inner_product(a[0], c);
  return s;
}

/// <T_s phi1, T_t phi2>
inline double pair_both(const MotionModel& m, const TestFunction& f1, double s, const TestFunction& f2, double t) {
  const auto g1 = evolve_gaussian(m, f1, s);
  const auto g2 = evolve_gaussian(m, f2, t);
  double v = 0.0;
  for (const auto& a : g1)
    for (const auto& b : g2) v += inner_product(a, b);
  return v;
}

}  // namespace detail

/// Bilinear T1(phi1, phi2) = 1/2 <lambda, U(phi1 U phi2 + phi2 U phi1)>, T2 = <lambda, U(U phi1 U phi2)>.
inline QuadraticForms quadratic_forms(const MotionModel& m, double Q, const TestFunction& f1, const TestFunction& f2,
                                      double tol = 1e-11) {
  if (!(Q > 0.0)) throw DomainError("quadratic_forms: Q must be > 0");
  QuadraticForms r;
  const double rate = lebesgue_decay_rate(m, Q);
  if (!(rate > 0.0)) {
    r.finite = false;
    r.T1 = r.T2 = std::numeric_limits<double>::infinity();
    return r;
  }
  if (m.kind() == MotionKind::degenerate) {
    const double p = product_integral(f1, f2);
    r.T1 = p / (Q * Q);
    r.T2 = p / (Q * Q * Q);
    return r;
  }
  if (!f1.is_gaussian() || !f2.is_gaussian())
    throw UnsupportedError("quadratic_forms: closed-form pairings need Gaussian test functions");
  const double t_max = std::log(1e17) / Q;
  // <phi1, U phi2>
  auto cross = [&](const TestFunction& a, const TestFunction& b) {
    return integrate_adaptive([&](double t) { return std::exp(-Q * t) * detail::pair_after(m, a, b, t); }, 0.0, t_max, tol, 32);
  };
  const auto c12 = cross(f1, f2);
  const auto c21 = cross(f2, f1);
  r.T1 = 0.5 * (c12.value + c21.value) / rate;
  r.T1_error = 0.5 * (c12.error + c21.error) / rate;
  if (m.translation_invariant()) {
    // symmetric transition: <T_s phi1, T_t phi2> = <phi1, T_{s+t} phi2>
    const auto q2 = integrate_adaptive([&](double u) { return u * std::exp(-Q * u) * detail::pair_after(m, f1, f2, u); },
                                       0.0, t_max + 40.0 / Q, tol, 32);
    r.T2 = q2.value / rate;
    r.T2_error = q2.error / rate;
  } else {
    double err = 0.0;
    const auto outer = integrate_adaptive(
        [&](double s) {
          const auto inner = integrate_adaptive(
              [&](double t) { return std::exp(-Q * (s + t)) * detail::pair_both(m, f1, s, f2, t); }, 0.0, t_max, tol, 8);
          err += inner.error;
          return inner.value;
        },
        0.0, t_max, tol, 8);
    r.T2 = outer.value / rate;
    r.T2_error = (outer.error + err * 1e-2) / rate;
  }
  return r;
}

inline QuadraticForms quadratic_forms(const MotionModel& m, double Q, const TestFunction& f, double tol = 1e-11) {
  return quadratic_forms(m, Q, f, f, tol);
}

/// Records the (A4) verdict from finiteness of the quadratic forms.
inline void complete_a4(AssumptionReport& rep, const QuadraticForms& forms) {
  auto& e = rep.at("A4");
  e.status = forms.finite && std::isfinite(forms.T1) && std::isfinite(forms.T2) ? CheckStatus::pass : CheckStatus::fail;
  e.witness = forms.T1 + forms.T2;
  e.note = "T1 + T2 by quadrature";
}

enum class LimitModel { bps, super };

inline OneParticleModel to_one_particle(LimitModel m) {
  return m == LimitModel::bps ? OneParticleModel::bps : OneParticleModel::super;
}

/// Covariance of the limiting Wiener process: H (s^t)(T1 + Vq T2) or V H q (s^t) T2.
inline double clt_covariance(LimitModel model, double s, double t, const BranchingParams& p, const QuadraticForms& f) {
  if (!(s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0)) throw DomainError("clt_covariance: s, t must lie in [0, 1]");
  const double st = std::min(s, t);
  if (model == LimitModel::bps) return p.H * st * (f.T1 + p.Vq() * f.T2);
  return p.Vq() * p.H * st * f.T2;
}

/// H <lambda, U^Q phi>
inline double lln_slope(const BranchingParams& p, const MotionModel& m, const TestFunction& phi) {
  const double r = lebesgue_decay_rate(m, p.Q());
  if (!(r > 0.0)) throw DomainError("lln_slope: d * theta_ou >= Q, the Lebesgue pairing diverges");
  return p.H * phi.integral() / r;
}

/// H int_0^1 <lambda, v_phi(., chi_nu(t))> dt.
inline double lambda_measure(const SteadyStateFamily& fam, const MeasureOnUnit& nu) {
  const double H = fam.problem().params().H;
  double s = 0.0;
  for (const auto& piece : nu.pieces()) {
    if (piece.value == 0.0) continue;
    if (piece.value >= fam.upper())
      throw ThresholdError("lambda_measure: chi level " + detail::fmt_g(piece.value) + " at or above " +
                               detail::fmt_g(fam.upper()),
                           piece.value / fam.upper());
    s += (piece.end - piece.start) * fam.value(piece.value);
  }
  return H * s;
}

// ---------------------------------------------------------------------------
// Convex conjugates
// ---------------------------------------------------------------------------

/// A convex cumulant s -> L(s) with derivative, finite on (-inf, upper).
template <class C>
concept CumulantModel = requires(const C& c, double s) {
  { c.value(s) } -> std::convertible_to<double>;
  { c.derivative(s) } -> std::convertible_to<double>;
  { c.upper() } -> std::convertible_to<double>;
};

/// L(s) = H <lambda, v_phi(., s)>.
struct SteadyCumulant {
  const SteadyStateFamily* fam;
  double value(double s) const { return fam->problem().params().H * fam->value(s); }
  double derivative(double s) const { return fam->problem().params().H * fam->derivative(s); }
  double upper() const { return fam->upper(); }
};

/// L(s) = K s^2.
struct QuadraticCumulant {
  double K;
  double value(double s) const { return K * s * s; }
  double derivative(double s) const { return 2.0 * K * s; }
  double upper() const { return std::numeric_limits<double>::infinity(); }
};

struct RateResult {
  double value = 0.0;
  std::vector<double> maximizer;
  std::vector<bool> boundary_active;
  bool unbounded = false;  ///< some supremum only approached as s -> -inf
};

struct ConjugateOptions {
  double boundary_margin = 1e-9;  ///< search s <= upper (1 - margin)
  double tol = 1e-13;
  double lower_limit = 1e8;
};

/// sup_s [x s - L(s)] with the maximiser.
template <CumulantModel C>
RateResult ldp_rate_scalar(const C& L, double x, const ConjugateOptions& opt = {}) {
  RateResult r;
  if (!std::isfinite(x)) throw DomainError("ldp_rate_scalar: x must be finite");
  const double up = std::isfinite(L.upper()) ? L.upper() * (1.0 - opt.boundary_margin) : std::numeric_limits<double>::infinity();
  auto h = [&](double s) { return L.derivative(s) - x; };
  const double h0 = h(0.0);
  double lo, hi, hlo, hhi;
  if (h0 == 0.0) {
    r.value = -L.value(0.0);
    r.maximizer = {0.0};
    r.boundary_active = {false};
    return r;
  }
  if (h0 < 0.0) {
    lo = 0.0, hlo = h0;
    hi = std::isfinite(up) ? up : 1.0;
    hhi = h(hi);
    while (!std::isfinite(up) && hhi < 0.0) hi *= 2.0, hhi = h(hi);
    if (hhi <= 0.0) {
      r.value = x * hi - L.value(hi);
      r.maximizer = {hi};
      r.boundary_active = {true};
      return r;
    }
  } else {
    hi = 0.0, hhi = h0;
    lo = -1.0, hlo = h(lo);
    while (hlo > 0.0 && -lo < opt.lower_limit) lo = std::max(2.0 * lo, -opt.lower_limit), hlo = h(lo);
    if (hlo > 0.0) {
      r.value = x * lo - L.value(lo);
      r.maximizer = {lo};
      r.boundary_active = {false};
      r.unbounded = true;
      return r;
    }
  }
  // Illinois regula falsi
  int side = 0;
  double s = 0.5 * (lo + hi);
  for (int it = 0; it < 300; ++it) {
    s = (lo * hhi - hi * hlo) / (hhi - hlo);
    if (!(s > lo && s < hi)) s = 0.5 * (lo + hi);
    const double hs = h(s);
    if (hs == 0.0) break;
    if ((hs < 0.0) == (hlo < 0.0)) {
      lo = s, hlo = hs;
      if (side == -1) hhi *= 0.5;
      side = -1;
    } else {
      hi = s, hhi = hs;
      if (side == 1) hlo *= 0.5;
      side = 1;
    }
    if (hi - lo <= opt.tol * std::max(1.0, std::abs(s))) break;
  }
  r.value = std::max(0.0, x * s - L.value(s));
  r.maximizer = {s};
  r.boundary_active = {false};
  return r;
}

/// Separable path conjugate: (1/n) sum_j Lambda*(n Delta f_j).
template <CumulantModel C>
RateResult ldp_rate_path(const C& L, const PathSample& f, std::size_t n, const ConjugateOptions& opt = {}) {
  if (n == 0) throw DomainError("ldp_rate_path: n must be >= 1");
  if (std::abs(f.front()) > 1e-12) throw DomainError("ldp_rate_path: f(0) must be 0");
  for (std::size_t j = 0; j < f.intervals(); ++j)
    if (f[j + 1] < f[j] - 1e-15) throw DomainError("ldp_rate_path: f must be nondecreasing");
  RateResult r;
  const double nd = static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double df = f.at(static_cast<double>(j + 1) / nd) - f.at(static_cast<double>(j) / nd);
    const auto s = ldp_rate_scalar(L, nd * df, opt);
    r.value += s.value / nd;
    r.maximizer.push_back(s.maximizer[0]);
    r.boundary_active.push_back(s.boundary_active[0]);
    r.unbounded = r.unbounded || s.unbounded;
  }
  return r;
}

/// 4H(T1 + Vq T2) or 4 H Vq T2.
inline double mdp_denominator(LimitModel model, const BranchingParams& p, const QuadraticForms& f) {
  return 4.0 * clt_covariance(model, 1.0, 1.0, p, f);
}

/// ||f||^2_{H^1} / denominator; +inf when the discrete H^1 norms keep growing under refinement.
inline RateResult mdp_rate_path(LimitModel model, const PathSample& f, const BranchingParams& p, const QuadraticForms& forms) {
  if (std::abs(f.front()) > 1e-12) throw DomainError("mdp_rate_path: f(0) must be 0");
  RateResult r;
  std::vector<double> norms;  // coarse to fine
  std::vector<std::size_t> strides;
  for (std::size_t s = 1; f.intervals() % s == 0 && f.intervals() / s >= 2; s *= 2) strides.push_back(s);
  for (auto it = strides.rbegin(); it != strides.rend(); ++it) norms.push_back(f.subsample(*it).h1_seminorm_sq());
  if (norms.size() >= 3) {
    const double r1 = norms[norms.size() - 2] / std::max(norms[norms.size() - 3], 1e-300);
    const double r2 = norms.back() / std::max(norms[norms.size() - 2], 1e-300);
    if (r1 >= 1.5 && r2 >= 1.5) {
      r.value = std::numeric_limits<double>::infinity();
      r.unbounded = true;
      return r;
    }
  }
  r.value = f.h1_seminorm_sq() / mdp_denominator(model, p, forms);
  return r;
}

}  // namespace subcrit
