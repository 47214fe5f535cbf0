#pragma once
//!\file
//!\brief Spatial grids and the discrete motion, semigroup and potential operators on them.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <vector>

#include "subcrit/core_model.hpp"
#include "subcrit/motion.hpp"
#include "subcrit/quadrature.hpp"

namespace subcrit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Uniform 1-d grid (periodic for translation-invariant motions) or a single unit-volume point.
class SpatialGrid {
 public:
  static SpatialGrid point(double x0 = 0.0) {
    SpatialGrid g;
    g.x_ = {x0};
    g.h_ = 1.0;
    g.periodic_ = false;
    return g;
  }

  /// n points x_i = center - half_width + i h, i = 0..n-1, n even.
  static SpatialGrid uniform(double center, double half_width, double h, bool periodic) {
    if (!(h > 0.0) || !(half_width > h)) throw DomainError("SpatialGrid: need half_width > h > 0");
    auto n = static_cast<std::size_t>(std::ceil(2.0 * half_width / h));
    n += n % 2;
    SpatialGrid g;
    g.h_ = h;
    g.periodic_ = periodic;
    g.x_.resize(n);
    const double start = center - 0.5 * h * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) g.x_[i] = start + h * static_cast<double>(i);
    return g;
  }

  std::size_t size() const { return x_.size(); }
  bool is_point() const { return x_.size() == 1; }
  bool periodic() const { return periodic_; }
  double h() const { return h_; }
  double x(std::size_t i) const { return x_[i]; }
  const std::vector<double>& points() const { return x_; }

  /// <lambda, f> by the trapezoid rule (unit volume on the point grid).
  double integrate(const Vec& f) const { return h_ * f.sum(); }

 private:
  std::vector<double> x_;
  double h_ = 1.0;
  bool periodic_ = false;
};

/// Linear operator on grid functions: a multiple of the identity or a dense matrix.
class GridOperator {
 public:
  static GridOperator scalar(double a, std::size_t n) {
    GridOperator op;
    op.scalar_ = a;
    op.n_ = n;
    return op;
  }
  static GridOperator dense(Mat m) {
    GridOperator op;
    op.n_ = static_cast<std::size_t>(m.rows());
    op.m_ = std::move(m);
    return op;
  }

  bool is_scalar() const { return !m_.has_value(); }
  std::size_t size() const { return n_; }

  Vec apply(const Vec& v) const {
    if (is_scalar()) return scalar_ * v;
    return (*m_) * v;
  }
  void apply_to(const Vec& v, Vec& out) const {
    if (is_scalar()) out = scalar_ * v;
    else out.noalias() = (*m_) * v;
  }
  Mat matrix() const {
    if (is_scalar()) return scalar_ * Mat::Identity(static_cast<long>(n_), static_cast<long>(n_));
    return *m_;
  }
  GridOperator scaled(double a) const {
    if (is_scalar()) return scalar(a * scalar_, n_);
    return dense(a * (*m_));
  }
  /// max_i sum_j |A_ij|
  double inf_norm() const {
    if (is_scalar()) return std::abs(scalar_);
    return m_->cwiseAbs().rowwise().sum().maxCoeff();
  }

 private:
  double scalar_ = 1.0;
  std::size_t n_ = 0;
  std::optional<Mat> m_;
};

namespace detail {

/// Circulant matrix of the Fourier multiplier `symbol` on a periodic grid.
template <class S>
Mat circulant_from_symbol(std::size_t n, double h, S&& symbol) {
  const double period = h * static_cast<double>(n);
  const long nn = static_cast<long>(n);
  std::vector<double> s(n);
  for (long m = -nn / 2 + 1; m <= nn / 2; ++m) s[static_cast<std::size_t>(m + nn / 2 - 1)] = symbol(2.0 * std::numbers::pi * m / period);
  std::vector<double> c(n);
  for (long k = 0; k < nn; ++k) {
    double acc = 0.0;
    for (long m = -nn / 2 + 1; m <= nn / 2; ++m) {
      const long phase = (m * k) % nn;
      acc += s[static_cast<std::size_t>(m + nn / 2 - 1)] * std::cos(2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(nn));
    }
    c[static_cast<std::size_t>(k)] = acc / static_cast<double>(nn);
  }
  Mat A(nn, nn);
  for (long i = 0; i < nn; ++i)
    for (long j = 0; j < nn; ++j) A(i, j) = c[static_cast<std::size_t>(((i - j) % nn + nn) % nn)];
  return A;
}

/// E[(Y - a)^+] for Y ~ N(mu, s^2).
inline double call_payoff(double mu, double s, double a) {
  if (s <= 0.0) return std::max(mu - a, 0.0);
  const double z = (mu - a) / s;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return (mu - a) * cdf + s * pdf;
}

/// Product integration of a Gaussian transition density against hat functions.
inline Mat hat_transition(const SpatialGrid& g, double decay, double s) {
  const long n = static_cast<long>(g.size());
  const double h = g.h();
  Mat A = Mat::Zero(n, n);
  for (long i = 0; i < n; ++i) {
    const double mu = g.x(static_cast<std::size_t>(i)) * decay;
    const double reach = 9.0 * s + 2.0 * h;
    for (long j = 0; j < n; ++j) {
      const double xj = g.x(static_cast<std::size_t>(j));
      if (std::abs(xj - mu) > reach) continue;
      const double w = (call_payoff(mu, s, xj - h) - 2.0 * call_payoff(mu, s, xj) + call_payoff(mu, s, xj + h)) / h;
      A(i, j) = std::max(w, 0.0);
    }
  }
  return A;
}

}  // namespace detail

struct GridOptions {
  double h = 0.2;
  double far_field = 32.0;  ///< domain extends this many decay lengths of U^Q beyond the support of phi
  double phi_rel_cutoff = 1e-12;
};

/// Discretized one-particle problem: grid, branching constants, motion operators and phi on the grid.
class GridProblem {
 public:
  /// Unit-volume single point with phi = value (degenerate-motion oracle).
  static GridProblem point(const BranchingParams& p, double phi_value = 1.0) {
    if (!(phi_value > 0.0)) throw DomainError("GridProblem: phi value must be > 0");
    GridProblem gp(p, SpatialGrid::point());
    gp.phi_ = Vec::Constant(1, phi_value);
    gp.phi_sup_ = phi_value;
    gp.U_ = GridOperator::scalar(1.0 / p.Q(), 1);
    return gp;
  }

  static GridProblem build(const BranchingParams& p, const MotionModel& m, const TestFunction& phi,
                           const GridOptions& opt = {}) {
    if (m.dim() != 1 || phi.dim() != 1) throw UnsupportedError("GridProblem: field solvers support d = 1 only");
    const double Q = p.Q();
    const double c = phi.center()[0];
    const double r = phi.support_radius(opt.phi_rel_cutoff);
    SpatialGrid g;
    switch (m.kind()) {
      case MotionKind::degenerate: g = SpatialGrid::uniform(c, r + opt.h, opt.h, true); break;
      case MotionKind::brownian:
      case MotionKind::compound_poisson: {
        const double diff = m.kind() == MotionKind::brownian ? m.sigma() : m.jump_std() * std::sqrt(m.rate());
        const double kappa = std::sqrt(2.0 * Q) / diff;
        g = SpatialGrid::uniform(c, r + opt.far_field / kappa, opt.h, true);
        break;
      }
      case MotionKind::ornstein_uhlenbeck: {
        const double stat = m.sigma() / std::sqrt(2.0 * m.theta());
        g = SpatialGrid::uniform(0.0, std::abs(c) + r + 8.0 * stat + 4.0 * opt.h, opt.h, false);
        break;
      }
    }
    GridProblem gp(p, g);
    gp.motion_ = m;
    gp.phi_.resize(static_cast<long>(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) gp.phi_[static_cast<long>(i)] = phi(g.x(i));
    gp.phi_sup_ = phi.sup_norm();
    gp.phi_integral_ = phi.integral();
    gp.U_ = gp.build_potential();
    return gp;
  }

  const SpatialGrid& grid() const { return grid_; }
  const BranchingParams& params() const { return params_; }
  const std::optional<MotionModel>& motion() const { return motion_; }
  std::size_t size() const { return grid_.size(); }
  double Q() const { return params_.Q(); }
  double Vq() const { return params_.Vq(); }
  const Vec& phi() const { return phi_; }
  double phi_sup() const { return phi_sup_; }
  double integrate(const Vec& f) const { return grid_.integrate(f); }
  /// U^Q on the grid.
  const GridOperator& potential() const { return U_; }

  /// Motion-only transition operator P_dt (no Q damping).
  GridOperator transition(double dt) const {
    const std::size_t n = size();
    if (!motion_ || motion_->kind() == MotionKind::degenerate || dt == 0.0) return GridOperator::scalar(1.0, n);
    const auto& m = *motion_;
    switch (m.kind()) {
      case MotionKind::brownian:
        return GridOperator::dense(detail::circulant_from_symbol(
            n, grid_.h(), [&](double w) { return std::exp(-0.5 * m.sigma() * m.sigma() * w * w * dt); }));
      case MotionKind::compound_poisson:
        return GridOperator::dense(detail::circulant_from_symbol(n, grid_.h(), [&](double w) {
          return std::exp(-m.rate() * dt * (-std::expm1(-0.5 * m.jump_std() * m.jump_std() * w * w)));
        }));
      case MotionKind::ornstein_uhlenbeck:
        return GridOperator::dense(detail::hat_transition(grid_, std::exp(-m.theta() * dt), std::sqrt(m.gaussian_variance(dt))));
      default: break;
    }
    return GridOperator::scalar(1.0, n);
  }

  /// T_dt^Q on the grid.
  GridOperator semigroup(double dt) const { return transition(dt).scaled(std::exp(-Q() * dt)); }

 private:
  GridProblem(const BranchingParams& p, SpatialGrid g) : params_(p), grid_(std::move(g)) {}

  GridOperator build_potential() const {
    const std::size_t n = size();
    const double Q = params_.Q();
    if (!motion_ || motion_->kind() == MotionKind::degenerate) return GridOperator::scalar(1.0 / Q, n);
    const auto& m = *motion_;
    switch (m.kind()) {
      case MotionKind::brownian:
        return GridOperator::dense(detail::circulant_from_symbol(
            n, grid_.h(), [&](double w) { return 1.0 / (Q + 0.5 * m.sigma() * m.sigma() * w * w); }));
      case MotionKind::compound_poisson:
        return GridOperator::dense(detail::circulant_from_symbol(n, grid_.h(), [&](double w) {
          return 1.0 / (Q + m.rate() * (-std::expm1(-0.5 * m.jump_std() * m.jump_std() * w * w)));
        }));
      case MotionKind::ornstein_uhlenbeck: {
        const auto& rule = gauss_legendre_cached(10);
        const double t_max = std::log(1e14) / Q;
        Mat U = Mat::Zero(static_cast<long>(n), static_cast<long>(n));
        double a = 0.0, b = 0.01;
        while (a < t_max) {
          b = std::min(b, t_max);
          const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
          for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
            const double t = mid + half * rule.nodes[k];
            U += (half * rule.weights[k] * std::exp(-Q * t)) *
                 detail::hat_transition(grid_, std::exp(-m.theta() * t), std::sqrt(m.gaussian_variance(t)));
          }
          a = b;
          b = 2.0 * b;
        }
        return GridOperator::dense(std::move(U));
      }
      default: break;
    }
    return GridOperator::scalar(1.0 / Q, n);
  }

  BranchingParams params_;
  SpatialGrid grid_;
  std::optional<MotionModel> motion_;
  Vec phi_;
  double phi_sup_ = 0.0;
  double phi_integral_ = 0.0;
  GridOperator U_;
};

}  // namespace subcrit
