#pragma once
//!\file
//!\brief Gauss-Legendre rules and adaptive panel integration.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace subcrit {

struct GaussRule {
  std::vector<double> nodes;    ///< on [-1, 1]
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule by Newton iteration on P_n.
inline GaussRule gauss_legendre(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  GaussRule r{std::vector<double>(n), std::vector<double>(n)};
  const double nd = static_cast<double>(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kd = static_cast<double>(k);
        const double p2 = ((2.0 * kd - 1.0) * x * p1 - (kd - 1.0) * p0) / kd;
        p0 = p1;
        p1 = p2;
      }
      dp = nd * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.weights[i] = w;
    r.weights[n - 1 - i] = w;
  }
  if (n == 1) {
    r.nodes[0] = 0.0;
    r.weights[0] = 2.0;
  }
  return r;
}

inline const GaussRule& gauss_legendre_cached(std::size_t n) {
  static const GaussRule r10 = gauss_legendre(10);
  static const GaussRule r20 = gauss_legendre(20);
  if (n == 10) return r10;
  if (n == 20) return r20;
  throw std::invalid_argument("gauss_legendre_cached: only 10 and 20 points are cached");
}

template <class F>
double gauss_panel(F&& f, double a, double b, const GaussRule& rule) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * f(c + h * rule.nodes[i]);
  return s * h;
}

struct QuadResult {
  double value;
  double error;  ///< sum of panel refinement differences
};

namespace detail {
template <class F>
QuadResult adaptive_rec(F& f, double a, double b, double whole, double tol, int depth, const GaussRule& rule) {
  const double m = 0.5 * (a + b);
  const double left = gauss_panel(f, a, m, rule);
  const double right = gauss_panel(f, m, b, rule);
  const double diff = std::abs(left + right - whole);
  if (diff <= tol || depth <= 0) return {left + right, diff};
  const auto l = adaptive_rec(f, a, m, left, 0.5 * tol, depth - 1, rule);
  const auto r = adaptive_rec(f, m, b, right, 0.5 * tol, depth - 1, rule);
  return {l.value + r.value, l.error + r.error};
}
}  // namespace detail

/// Adaptive bisection of 10-point Gauss-Legendre panels until halves agree to tol.
template <class F>
QuadResult integrate_adaptive(F&& f, double a, double b, double tol, int initial_panels = 8, int max_depth = 30) {
  const auto& rule = gauss_legendre_cached(10);
  QuadResult out{0.0, 0.0};
  const double h = (b - a) / initial_panels;
  for (int k = 0; k < initial_panels; ++k) {
    const double lo = a + k * h, hi = (k + 1 == initial_panels) ? b : a + (k + 1) * h;
    const double whole = gauss_panel(f, lo, hi, rule);
    const auto r = detail::adaptive_rec(f, lo, hi, whole, tol / initial_panels, max_depth, rule);
    out.value += r.value;
    out.error += r.error;
  }
  return out;
}

}  // namespace subcrit
