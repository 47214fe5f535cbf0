#pragma once
//!\file
//!\brief One-particle equations: time-dependent solvers, series representation, steady states, thresholds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "subcrit/core_model.hpp"
#include "subcrit/grid.hpp"

namespace subcrit {

/// bps: g = Psi (1 + v) + Vq v^2;  super: g = Psi + Vq v^2;  vbar: g = Psi - Vq v^2.
enum class OneParticleModel { bps, super, vbar };

inline const char* to_string(OneParticleModel m) {
  switch (m) {
    case OneParticleModel::bps: return "bps";
    case OneParticleModel::super: return "super";
    case OneParticleModel::vbar: return "vbar";
  }
  return "?";
}

/// Q0 of the model; +inf for vbar.
inline double model_threshold(OneParticleModel m, const BranchingParams& p) {
  const auto r = derive_constants(p);
  switch (m) {
    case OneParticleModel::bps: return r.Q0_branching;
    case OneParticleModel::super: return r.Q0_super;
    case OneParticleModel::vbar: return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Sources Psi(x, t0 - s) = phi(x) c(s) with c piecewise constant in s
// ---------------------------------------------------------------------------

class StepSource {
 public:
  StepSource(std::vector<double> cuts, std::vector<double> levels) : cuts_(std::move(cuts)), levels_(std::move(levels)) {
    if (cuts_.size() != levels_.size() + 1 || levels_.empty()) throw DomainError("StepSource: need one more cut than levels");
    if (cuts_.front() != 0.0) throw DomainError("StepSource: first cut must be 0");
    for (std::size_t i = 0; i + 1 < cuts_.size(); ++i)
      if (!(cuts_[i + 1] > cuts_[i])) throw DomainError("StepSource: cuts must increase");
  }

  static StepSource constant(double level, double horizon) { return StepSource({0.0, horizon}, {level}); }

  /// c(s) = scale * chi_nu(1 - s/T) for s in [0, T].
  static StepSource from_measure(const MeasureOnUnit& nu, double T, double scale) {
    if (!(T > 0.0)) throw DomainError("StepSource: T must be > 0");
    const auto pieces = nu.pieces();
    std::vector<double> cuts{0.0}, levels;
    for (auto it = pieces.rbegin(); it != pieces.rend(); ++it) {
      cuts.push_back(T * (1.0 - it->start));
      levels.push_back(scale * it->value);
    }
    cuts.back() = T;
    return StepSource(std::move(cuts), std::move(levels));
  }

  double horizon() const { return cuts_.back(); }
  const std::vector<double>& cuts() const { return cuts_; }
  const std::vector<double>& levels() const { return levels_; }
  double sup_abs() const {
    double m = 0.0;
    for (double l : levels_) m = std::max(m, std::abs(l));
    return m;
  }
  bool nonnegative() const {
    return std::all_of(levels_.begin(), levels_.end(), [](double l) { return l >= 0.0; });
  }
  StepSource scaled(double a) const {
    auto l = levels_;
    for (auto& x : l) x *= a;
    return StepSource(cuts_, std::move(l));
  }

 private:
  std::vector<double> cuts_;
  std::vector<double> levels_;
};

/// Time nodes containing every cut, with uniform steps <= dt_max inside each piece.
struct TimeGrid {
  std::vector<double> t;
  std::vector<double> level;  ///< source level on step j (t[j], t[j+1])

  std::size_t steps() const { return level.size(); }
  double dt(std::size_t j) const { return t[j + 1] - t[j]; }

  static TimeGrid build(const StepSource& src, double dt_max) {
    if (!(dt_max > 0.0)) throw DomainError("TimeGrid: dt must be > 0");
    TimeGrid g;
    g.t.push_back(0.0);
    const auto& c = src.cuts();
    for (std::size_t k = 0; k < src.levels().size(); ++k) {
      const double len = c[k + 1] - c[k];
      const auto m = static_cast<std::size_t>(std::max(1.0, std::ceil(len / dt_max - 1e-9)));
      for (std::size_t i = 1; i <= m; ++i) {
        g.t.push_back(i == m ? c[k + 1] : c[k] + len * static_cast<double>(i) / static_cast<double>(m));
        g.level.push_back(src.levels()[k]);
      }
    }
    return g;
  }
};

/// Numerical solution w(x_i, t_j) = v(x_i, t0 - t_j, t_j) on a grid.
struct SpaceTimeField {
  TimeGrid time;
  std::vector<Vec> values;  ///< one spatial slice per time node

  double at(std::size_t i, std::size_t j) const { return values[j][static_cast<long>(i)]; }
  const Vec& final_slice() const { return values.back(); }
  double sup_norm() const {
    double m = 0.0;
    for (const auto& v : values) m = std::max(m, v.cwiseAbs().maxCoeff());
    return m;
  }
  double min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& v : values) m = std::min(m, v.minCoeff());
    return m;
  }
  /// int_0^t0 <lambda, w(., t)> dt by the trapezoid rule.
  double space_time_integral(const GridProblem& gp) const {
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < values.size(); ++j)
      s += 0.5 * time.dt(j) * (gp.integrate(values[j]) + gp.integrate(values[j + 1]));
    return s;
  }
  double max_abs_diff(const SpaceTimeField& o) const {
    double m = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) m = std::max(m, (values[j] - o.values[j]).cwiseAbs().maxCoeff());
    return m;
  }
  SpaceTimeField minus(const SpaceTimeField& o) const {
    SpaceTimeField r{time, values};
    for (std::size_t j = 0; j < values.size(); ++j) r.values[j] -= o.values[j];
    return r;
  }
};

namespace detail {

inline Vec nonlinearity(OneParticleModel m, double Vq, const Vec& psi, const Vec& w) {
  switch (m) {
    case OneParticleModel::bps: return (psi.array() * (1.0 + w.array()) + Vq * w.array().square()).matrix();
    case OneParticleModel::super: return (psi.array() + Vq * w.array().square()).matrix();
    case OneParticleModel::vbar: return (psi.array() - Vq * w.array().square()).matrix();
  }
  return psi;
}

inline Vec nonlinearity_derivative(OneParticleModel m, double Vq, const Vec& psi, const Vec& w) {
  switch (m) {
    case OneParticleModel::bps: return (psi.array() + 2.0 * Vq * w.array()).matrix();
    case OneParticleModel::super: return (2.0 * Vq * w).eval();
    case OneParticleModel::vbar: return (-2.0 * Vq * w).eval();
  }
  return psi;
}

/// Exponential-integrator weights for one step: w+ = P(e^{-z} w + a0 g) + a1 g+.
struct EtdWeights {
  double decay, a0, a1;
  static EtdWeights make(double Q, double dt) {
    const double z = Q * dt;
    const double e = std::exp(-z);
    // series for small z avoids cancellation
    if (z < 1e-4) {
      const double a0 = dt * (0.5 - z / 3.0 + z * z / 8.0);
      const double a1 = dt * (0.5 - z / 6.0 + z * z / 24.0);
      return {e, a0, a1};
    }
    return {e, (1.0 - e * (1.0 + z)) / (Q * z), (z - 1.0 + e) / (Q * z)};
  }
};

/// Caches transition operators per distinct step length.
class TransitionCache {
 public:
  explicit TransitionCache(const GridProblem& gp) : gp_(gp) {}
  const GridOperator& get(double dt) {
    for (auto& [d, op] : ops_)
      if (std::abs(d - dt) <= 1e-13 * std::max(1.0, dt)) return op;
    ops_.emplace_back(dt, gp_.transition(dt));
    return ops_.back().second;
  }

 private:
  const GridProblem& gp_;
  std::vector<std::pair<double, GridOperator>> ops_;
};

/// Pointwise stable root of y = c' + a1 g(y) given b = P(...) part; returns false on blow-up.
inline bool implicit_root(OneParticleModel m, double Vq, double a1, const Vec& b, const Vec& psi, Vec& y) {
  const long n = b.size();
  y.resize(n);
  for (long i = 0; i < n; ++i) {
    const double c = b[i] + a1 * psi[i];
    double B = 1.0, disc;
    switch (m) {
      case OneParticleModel::bps:
        B = 1.0 - a1 * psi[i];
        disc = B * B - 4.0 * a1 * Vq * c;
        if (disc < 0.0 || B <= 0.0) return false;
        y[i] = 2.0 * c / (B + std::sqrt(disc));
        break;
      case OneParticleModel::super:
        disc = 1.0 - 4.0 * a1 * Vq * c;
        if (disc < 0.0) return false;
        y[i] = 2.0 * c / (1.0 + std::sqrt(disc));
        break;
      case OneParticleModel::vbar:
        disc = 1.0 + 4.0 * a1 * Vq * c;
        if (disc < 0.0) return false;
        y[i] = 2.0 * c / (1.0 + std::sqrt(disc));
        break;
    }
  }
  return true;
}

/// Discrete Duhamel operator D[f] with per-step left/right source values.
template <class Src>
SpaceTimeField duhamel(const GridProblem& gp, const TimeGrid& tg, Src&& src, TransitionCache& cache) {
  SpaceTimeField out{tg, {}};
  out.values.reserve(tg.t.size());
  out.values.push_back(Vec::Zero(static_cast<long>(gp.size())));
  Vec tmp;
  for (std::size_t j = 0; j < tg.steps(); ++j) {
    const auto w = EtdWeights::make(gp.Q(), tg.dt(j));
    const Vec left = src(j, 0), right = src(j, 1);
    cache.get(tg.dt(j)).apply_to(w.decay * out.values[j] + w.a0 * left, tmp);
    out.values.push_back(tmp + w.a1 * right);
  }
  return out;
}

}  // namespace detail

enum class Scheme { picard, time_stepping };

struct SolveOptions {
  Scheme scheme = Scheme::time_stepping;
  double dt = 0.05;
  double tol = 1e-10;
  std::size_t max_sweeps = 10000;
  double threshold_margin = 0.01;  ///< refuse ||Psi||_inf >= (1 - margin) Q0
  bool enforce_threshold = true;
};

struct SolveResult {
  SpaceTimeField field;
  std::size_t sweeps = 0;
  double residual = 0.0;
  bool monotone = true;
};

/// sup_{x,t} |Psi| / Q0.
inline double threshold_ratio(OneParticleModel m, const GridProblem& gp, const StepSource& src) {
  return gp.phi_sup() * src.sup_abs() / model_threshold(m, gp.params());
}

inline void check_threshold(OneParticleModel m, const GridProblem& gp, const StepSource& src, double margin) {
  if (m == OneParticleModel::vbar) return;
  const double ratio = threshold_ratio(m, gp, src);
  if (ratio >= 1.0 - margin)
    throw ThresholdError(std::string(to_string(m)) + ": ||Psi||_inf / Q0 = " + detail::fmt_g(ratio) +
                             " is not below the admissible limit " + detail::fmt_g(1.0 - margin),
                         ratio);
}

/// One application of the discrete fixed-point map F(w).
inline SpaceTimeField apply_fixed_point_map(OneParticleModel m, const GridProblem& gp, const StepSource& src,
                                            const SpaceTimeField& w, detail::TransitionCache& cache) {
  const auto& tg = w.time;
  const double Vq = gp.Vq();
  auto g = [&](std::size_t j, int side) {
    const Vec psi = tg.level[j] * gp.phi();
    return detail::nonlinearity(m, Vq, psi, w.values[j + static_cast<std::size_t>(side)]);
  };
  (void)src;
  return detail::duhamel(gp, tg, g, cache);
}

inline SolveResult solve_v(OneParticleModel m, const GridProblem& gp, const StepSource& src, const SolveOptions& opt = {}) {
  if (opt.enforce_threshold) check_threshold(m, gp, src, opt.threshold_margin);
  if (m == OneParticleModel::vbar && !src.nonnegative()) throw DomainError("vbar: Psi must be >= 0");
  const auto tg = TimeGrid::build(src, opt.dt);
  detail::TransitionCache cache(gp);
  const double Vq = gp.Vq();
  const double guard =
      m == OneParticleModel::vbar ? std::numeric_limits<double>::infinity() : (Vq > 0.0 ? gp.Q() / Vq : 1e12);
  SolveResult res;
  if (opt.scheme == Scheme::time_stepping) {
    res.field.time = tg;
    res.field.values.push_back(Vec::Zero(static_cast<long>(gp.size())));
    Vec b, y;
    for (std::size_t j = 0; j < tg.steps(); ++j) {
      const auto w = detail::EtdWeights::make(gp.Q(), tg.dt(j));
      const Vec psi = tg.level[j] * gp.phi();
      const Vec& cur = res.field.values[j];
      cache.get(tg.dt(j)).apply_to(w.decay * cur + w.a0 * detail::nonlinearity(m, Vq, psi, cur), b);
      if (!detail::implicit_root(m, Vq, w.a1, b, psi, y) || y.cwiseAbs().maxCoeff() > guard)
        throw ThresholdError("solve_v: solution blew up at t = " + detail::fmt_g(tg.t[j + 1]),
                             threshold_ratio(m, gp, src));
      res.field.values.push_back(y);
    }
    res.sweeps = 1;
  } else {
    SpaceTimeField w{tg, std::vector<Vec>(tg.t.size(), Vec::Zero(static_cast<long>(gp.size())))};
    double change = std::numeric_limits<double>::infinity();
    const bool expect_monotone = m != OneParticleModel::vbar && src.nonnegative();
    for (std::size_t k = 0; k < opt.max_sweeps; ++k) {
      auto next = apply_fixed_point_map(m, gp, src, w, cache);
      change = 0.0;
      double worst_drop = 0.0, scale = 0.0;
      for (std::size_t j = 0; j < w.values.size(); ++j) {
        const Vec d = next.values[j] - w.values[j];
        change = std::max(change, d.cwiseAbs().maxCoeff());
        worst_drop = std::min(worst_drop, d.minCoeff());
        scale = std::max(scale, next.values[j].cwiseAbs().maxCoeff());
      }
      if (expect_monotone && worst_drop < -1e-9 * std::max(scale, 1e-300) - 1e-15) res.monotone = false;
      if (next.sup_norm() > guard)
        throw ThresholdError("solve_v: Picard iterate exceeded the norm guard " + detail::fmt_g(guard),
                             threshold_ratio(m, gp, src));
      w = std::move(next);
      res.sweeps = k + 1;
      if (change < opt.tol) break;
    }
    if (!(change < opt.tol))
      throw ConvergenceError("solve_v: Picard did not converge in " + std::to_string(opt.max_sweeps) + " sweeps", change);
    res.field = std::move(w);
  }
  const auto Fw = apply_fixed_point_map(m, gp, src, res.field, cache);
  res.residual = Fw.max_abs_diff(res.field);
  return res;
}

inline SolveResult solve_vbar_super(const GridProblem& gp, const StepSource& src, const SolveOptions& opt = {}) {
  return solve_v(OneParticleModel::vbar, gp, src, opt);
}

/// Residual of a field against the integral equation discretised with halved steps (w interpolated linearly).
inline double refined_residual(OneParticleModel m, const GridProblem& gp, const SpaceTimeField& w) {
  TimeGrid fine;
  std::vector<Vec> wf;
  fine.t.push_back(0.0);
  wf.push_back(w.values[0]);
  for (std::size_t j = 0; j < w.time.steps(); ++j) {
    fine.t.push_back(0.5 * (w.time.t[j] + w.time.t[j + 1]));
    fine.t.push_back(w.time.t[j + 1]);
    fine.level.push_back(w.time.level[j]);
    fine.level.push_back(w.time.level[j]);
    wf.push_back(0.5 * (w.values[j] + w.values[j + 1]));
    wf.push_back(w.values[j + 1]);
  }
  SpaceTimeField wfine{fine, std::move(wf)};
  detail::TransitionCache cache(gp);
  const auto F = apply_fixed_point_map(m, gp, StepSource::constant(0.0, 1.0), wfine, cache);
  double r = 0.0;
  for (std::size_t j = 0; j < w.values.size(); ++j) r = std::max(r, (F.values[2 * j] - w.values[j]).cwiseAbs().maxCoeff());
  return r;
}

// ---------------------------------------------------------------------------
// Linear part and splitting
// ---------------------------------------------------------------------------

struct SplitResult {
  SpaceTimeField tilde_v;  ///< int_0^t T^Q_{t-s} Psi ds
  SpaceTimeField u;        ///< v - tilde_v
  double residual;         ///< sup |u - (its own integral equation)|
};

inline SpaceTimeField tilde_v(const GridProblem& gp, const TimeGrid& tg) {
  detail::TransitionCache cache(gp);
  return detail::duhamel(gp, tg, [&](std::size_t j, int) -> Vec { return tg.level[j] * gp.phi(); }, cache);
}

inline SplitResult tilde_v_and_split(OneParticleModel m, const GridProblem& gp, const SpaceTimeField& v) {
  if (m == OneParticleModel::vbar) throw UnsupportedError("tilde_v_and_split: defined for bps and super");
  const auto& tg = v.time;
  detail::TransitionCache cache(gp);
  auto tv = tilde_v(gp, tg);
  auto u = v.minus(tv);
  const double Vq = gp.Vq();
  auto src = [&](std::size_t j, int side) -> Vec {
    const Vec& vv = v.values[j + static_cast<std::size_t>(side)];
    Vec s = Vq * vv.array().square().matrix();
    if (m == OneParticleModel::bps) s += (tg.level[j] * gp.phi()).cwiseProduct(vv);
    return s;
  };
  const double residual = detail::duhamel(gp, tg, src, cache).max_abs_diff(u);
  return {std::move(tv), std::move(u), residual};
}

// ---------------------------------------------------------------------------
// Series representation of the superprocess equation
// ---------------------------------------------------------------------------

/// B_1 = B_2 = 1, B_n = sum_{k=1}^{n-1} B_k B_{n-k}.
inline std::vector<double> b_sequence(std::size_t n_max) {
  std::vector<double> B(n_max + 1, 0.0);
  for (std::size_t n = 1; n <= n_max; ++n) {
    if (n <= 2) B[n] = 1.0;
    else
      for (std::size_t k = 1; k < n; ++k) B[n] += B[k] * B[n - k];
  }
  return B;
}

/// D_1 = Q, D_2 = Q^{-2}, D_n = sum_{k=1}^{n-1} D_k D_{n-k}.
inline std::vector<double> d_sequence(std::size_t n_max, double Q) {
  std::vector<double> D(n_max + 1, 0.0);
  for (std::size_t n = 1; n <= n_max; ++n) {
    if (n == 1) D[n] = Q;
    else if (n == 2) D[n] = 1.0 / (Q * Q);
    else
      for (std::size_t k = 1; k < n; ++k) D[n] += D[k] * D[n - k];
  }
  return D;
}

struct SeriesTerms {
  std::vector<double> term_sup;  ///< ||F^{*n}||_inf, index n (index 0 unused)
  std::vector<double> B, D;
  std::vector<double> b_bound, d_bound;
  bool d_bound_enforced = false;  ///< the D bound is only valid for Q <= 1
  SpaceTimeField partial_sum;     ///< (Vq)^{-1} sum_n F^{*n}
};

inline SeriesTerms series_solution_super(const GridProblem& gp, const StepSource& src, std::size_t n_max,
                                         const SolveOptions& opt = {}) {
  check_threshold(OneParticleModel::super, gp, src, opt.threshold_margin);
  if (!src.nonnegative()) throw DomainError("series_solution_super: Psi must be >= 0");
  if (n_max < 1) throw DomainError("series_solution_super: n_max must be >= 1");
  const double Vq = gp.Vq(), Q = gp.Q();
  if (!(Vq > 0.0)) throw DomainError("series_solution_super: needs q > 0");
  const auto tg = TimeGrid::build(src, opt.dt);
  detail::TransitionCache cache(gp);
  std::vector<SpaceTimeField> F(n_max + 1);
  F[1] = detail::duhamel(gp, tg, [&](std::size_t j, int) -> Vec { return Vq * tg.level[j] * gp.phi(); }, cache);
  for (std::size_t n = 2; n <= n_max; ++n) {
    std::vector<Vec> prod(tg.t.size(), Vec::Zero(static_cast<long>(gp.size())));
    for (std::size_t j = 0; j < tg.t.size(); ++j)
      for (std::size_t l = 1; l < n; ++l) prod[j] += F[l].values[j].cwiseProduct(F[n - l].values[j]);
    F[n] = detail::duhamel(gp, tg, [&](std::size_t j, int side) -> const Vec& { return prod[j + static_cast<std::size_t>(side)]; }, cache);
  }
  SeriesTerms out;
  out.B = b_sequence(n_max);
  out.D = d_sequence(n_max, Q);
  out.term_sup.assign(n_max + 1, 0.0);
  out.b_bound.assign(n_max + 1, 0.0);
  out.d_bound.assign(n_max + 1, 0.0);
  out.d_bound_enforced = Q <= 1.0;
  const double vq_psi = Vq * gp.phi_sup() * src.sup_abs();
  out.partial_sum = SpaceTimeField{tg, std::vector<Vec>(tg.t.size(), Vec::Zero(static_cast<long>(gp.size())))};
  for (std::size_t n = 1; n <= n_max; ++n) {
    out.term_sup[n] = F[n].sup_norm();
    const double qpow = std::pow(Q, 1.0 - 2.0 * static_cast<double>(n));
    out.b_bound[n] = out.B[n] * qpow * std::pow(vq_psi, static_cast<double>(n));
    out.d_bound[n] = out.D[n] * qpow * std::pow(out.term_sup[1], static_cast<double>(n));
    const double slack = 1e-9 * out.b_bound[n] + 1e-300;
    if (out.term_sup[n] > out.b_bound[n] + slack)
      throw std::logic_error("series_solution_super: B bound violated at n = " + std::to_string(n));
    if (out.d_bound_enforced && out.term_sup[n] > out.d_bound[n] * (1.0 + 1e-9) + 1e-300)
      throw std::logic_error("series_solution_super: D bound violated at n = " + std::to_string(n));
    for (std::size_t j = 0; j < tg.t.size(); ++j) out.partial_sum.values[j] += F[n].values[j] / Vq;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Steady states v_phi(., theta)
// ---------------------------------------------------------------------------

struct SteadyOptions {
  double tol = 1e-12;
  std::size_t max_sweeps = 2000;
  double guard = 0.0;  ///< 0: Q/(Vq), or 1e12 when Vq = 0
};

enum class SteadyStatus { converged, diverged, max_sweeps };

struct SteadyOutcome {
  SteadyStatus status = SteadyStatus::max_sweeps;
  Vec v;
  std::size_t sweeps = 0;
  double last_change = 0.0;
  bool monotone = true;
};

/// Raw steady-state Picard iteration from 0; never throws on divergence.
inline SteadyOutcome steady_state_iterate(OneParticleModel m, const GridProblem& gp, double theta,
                                          const SteadyOptions& opt = {}) {
  const double Vq = gp.Vq();
  const double guard = opt.guard > 0.0 ? opt.guard : (Vq > 0.0 ? gp.Q() / Vq : 1e12);
  const Vec psi = theta * gp.phi();
  const auto& U = gp.potential();
  SteadyOutcome out;
  out.v = Vec::Zero(static_cast<long>(gp.size()));
  Vec next;
  for (std::size_t k = 0; k < opt.max_sweeps; ++k) {
    U.apply_to(detail::nonlinearity(m, Vq, psi, out.v), next);
    const Vec d = next - out.v;
    out.last_change = d.cwiseAbs().maxCoeff();
    const double scale = next.cwiseAbs().maxCoeff();
    if (theta >= 0.0 && m != OneParticleModel::vbar && d.minCoeff() < -1e-9 * scale - 1e-15) out.monotone = false;
    out.v = next;
    out.sweeps = k + 1;
    if (!std::isfinite(scale) || scale > guard) {
      out.status = SteadyStatus::diverged;
      return out;
    }
    if (out.last_change < opt.tol) {
      out.status = SteadyStatus::converged;
      return out;
    }
  }
  out.status = SteadyStatus::max_sweeps;
  return out;
}

/// Newton iteration for v = U g(v) from the starting point v0.
inline Vec steady_state_newton(OneParticleModel m, const GridProblem& gp, double theta, const SteadyOptions& opt,
                               Vec v0 = Vec()) {
  const double Vq = gp.Vq();
  const Vec psi = theta * gp.phi();
  const long n = static_cast<long>(gp.size());
  const Mat U = gp.potential().matrix();
  Vec v = v0.size() == n ? std::move(v0) : Vec::Zero(n);
  double step = std::numeric_limits<double>::infinity(), prev = step;
  for (std::size_t k = 0; k < 200; ++k) {
    const Vec r = v - U * detail::nonlinearity(m, Vq, psi, v);
    const Mat J = Mat::Identity(n, n) - U * detail::nonlinearity_derivative(m, Vq, psi, v).asDiagonal();
    const Vec d = J.partialPivLu().solve(-r);
    step = d.cwiseAbs().maxCoeff();
    v += d;
    if (m == OneParticleModel::bps) v = v.cwiseMax(-1.0 + 1e-300);
    const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
    if (step < opt.tol * scale) return v;
    // rounding floor reached
    if (step < 1e-8 * scale && step >= prev) return v;
    prev = step;
  }
  throw ConvergenceError("steady_state: Newton did not converge", step);
}

/// Upper admissible tilt Q0 / ||phi||_inf.
inline double theta_max(OneParticleModel m, const GridProblem& gp) { return model_threshold(m, gp.params()) / gp.phi_sup(); }

struct SteadyState {
  Vec v;
  std::size_t sweeps = 0;
  bool monotone = true;
};

inline SteadyState steady_state(OneParticleModel m, const GridProblem& gp, double theta, const SteadyOptions& opt = {}) {
  if (m == OneParticleModel::vbar) throw UnsupportedError("steady_state: bps or super only");
  const double tmax = theta_max(m, gp);
  if (theta >= tmax)
    throw ThresholdError("steady_state: theta = " + detail::fmt_g(theta) + " at or above threshold " + detail::fmt_g(tmax),
                         theta / tmax);
  if (theta == 0.0) return {Vec::Zero(static_cast<long>(gp.size())), 0, true};
  if (theta < 0.0) return {steady_state_newton(m, gp, theta, opt), 0, true};
  auto o = steady_state_iterate(m, gp, theta, opt);
  if (o.status == SteadyStatus::diverged)
    throw ThresholdError("steady_state: iterate exceeded the norm guard", theta / tmax);
  if (!o.monotone) throw std::logic_error("steady_state: Picard iterates not monotone");
  if (o.status != SteadyStatus::converged) {
    // slow contraction near the threshold: polish the monotone iterate with Newton
    Vec v = steady_state_newton(m, gp, theta, opt, o.v);
    if ((v - o.v).minCoeff() < -1e-9 * std::max(1.0, v.cwiseAbs().maxCoeff()))
      throw ConvergenceError("steady_state: Newton left the monotone branch", o.last_change);
    return {std::move(v), o.sweeps, o.monotone};
  }
  return {std::move(o.v), o.sweeps, o.monotone};
}

/// d/dtheta v_phi(., theta) from (I - U diag g'(v)) w = U d_theta g.
inline Vec steady_state_derivative(OneParticleModel m, const GridProblem& gp, double theta, const Vec& v) {
  const double Vq = gp.Vq();
  const Vec psi = theta * gp.phi();
  const Vec gd = detail::nonlinearity_derivative(m, Vq, psi, v);
  Vec dg = gp.phi();
  if (m == OneParticleModel::bps) dg = gp.phi().cwiseProduct((1.0 + v.array()).matrix());
  if (gp.potential().is_scalar()) {
    const double u = gp.potential().matrix()(0, 0);
    return (u * dg.array() / (1.0 - u * gd.array())).matrix();
  }
  const long n = static_cast<long>(gp.size());
  const Mat U = gp.potential().matrix();
  const Mat J = Mat::Identity(n, n) - U * gd.asDiagonal();
  return J.partialPivLu().solve(U * dg);
}

/// theta -> <lambda, v_phi(., theta)> with its derivative.
class SteadyStateFamily {
 public:
  SteadyStateFamily(OneParticleModel m, GridProblem gp, SteadyOptions opt = {}) : m_(m), gp_(std::move(gp)), opt_(opt) {}

  OneParticleModel model() const { return m_; }
  const GridProblem& problem() const { return gp_; }
  double upper() const { return theta_max(m_, gp_); }

  double value(double theta) const { return gp_.integrate(steady_state(m_, gp_, theta, opt_).v); }
  double derivative(double theta) const {
    const auto s = steady_state(m_, gp_, theta, opt_);
    return gp_.integrate(steady_state_derivative(m_, gp_, theta, s.v));
  }
  std::pair<double, double> value_and_derivative(double theta) const {
    const auto s = steady_state(m_, gp_, theta, opt_);
    return {gp_.integrate(s.v), gp_.integrate(steady_state_derivative(m_, gp_, theta, s.v))};
  }

 private:
  OneParticleModel m_;
  GridProblem gp_;
  SteadyOptions opt_;
};

// ---------------------------------------------------------------------------
// Threshold location and slope
// ---------------------------------------------------------------------------

/// Bisection on theta between convergence and norm-guard divergence of the raw Picard iteration.
inline double locate_threshold(OneParticleModel m, const GridProblem& gp, double lo, double hi, double tol,
                               const SteadyOptions& opt) {
  auto converges = [&](double th) { return steady_state_iterate(m, gp, th, opt).status == SteadyStatus::converged; };
  if (!converges(lo)) throw DomainError("locate_threshold: lower bracket does not converge");
  if (converges(hi)) throw DomainError("locate_threshold: upper bracket converges");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (converges(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct ThresholdSlope {
  bool divergent = false;
  double exponent = 0.0;  ///< fitted p in V'(theta) ~ (theta_max - theta)^p
  double estimate = std::numeric_limits<double>::infinity();
  double error = std::numeric_limits<double>::infinity();
  std::vector<double> thetas, slopes;
};

/// Finite-difference slopes of <lambda, v_phi(., theta)> on theta_k = theta_max (1 - 2^{-k-1}).
inline ThresholdSlope threshold_slope(const SteadyStateFamily& fam, std::size_t ladder = 10) {
  if (ladder < 3) throw DomainError("threshold_slope: ladder needs >= 3 rungs");
  const double tm = fam.upper();
  ThresholdSlope r;
  std::vector<double> gaps;
  for (std::size_t k = 0; k < ladder; ++k) {
    const double gap = tm * std::ldexp(1.0, -static_cast<int>(k) - 1);
    const double th = tm - gap;
    const double d = 1e-3 * gap;
    r.thetas.push_back(th);
    r.slopes.push_back((fam.value(th + d) - fam.value(th - d)) / (2.0 * d));
    gaps.push_back(gap);
  }
  const std::size_t n = ladder, from = n / 2;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, cnt = 0;
  for (std::size_t i = from; i < n; ++i) {
    const double lx = std::log(gaps[i]), ly = std::log(std::abs(r.slopes[i]));
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly, cnt += 1;
  }
  r.exponent = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  const double rise = r.slopes[n - 1] / r.slopes[n - 2];
  r.divergent = r.exponent < -0.1 || rise > 1.05;
  if (!r.divergent) {
    const double e1 = 2.0 * r.slopes[n - 1] - r.slopes[n - 2];
    const double e0 = 2.0 * r.slopes[n - 2] - r.slopes[n - 3];
    r.estimate = e1;
    r.error = std::abs(e1 - e0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Comparison of the two models
// ---------------------------------------------------------------------------

struct ComparisonReport {
  std::size_t violations = 0;  ///< points with v^S > v^B
  double max_excess = 0.0;     ///< max (v^S - v^B)
  double C = 0.0;              ///< largest C found with v^B_{C Psi} <= v^S_Psi
};

inline ComparisonReport comparison_check(const GridProblem& gp, const StepSource& src, const SolveOptions& opt = {},
                                         int bisection_steps = 40) {
  const auto vs = solve_v(OneParticleModel::super, gp, src, opt).field;
  const auto vb = solve_v(OneParticleModel::bps, gp, src, opt).field;
  ComparisonReport rep;
  for (std::size_t j = 0; j < vs.values.size(); ++j) {
    const Vec d = vs.values[j] - vb.values[j];
    rep.max_excess = std::max(rep.max_excess, d.maxCoeff());
    rep.violations += static_cast<std::size_t>((d.array() > 1e-13).count());
  }
  if (rep.violations > 0) throw std::logic_error("comparison_check: v^S > v^B somewhere; solver inconsistency");
  auto below = [&](double C) {
    const auto vc = solve_v(OneParticleModel::bps, gp, src.scaled(C), opt).field;
    for (std::size_t j = 0; j < vc.values.size(); ++j)
      if ((vc.values[j] - vs.values[j]).maxCoeff() > 1e-14) return false;
    return true;
  };
  if (src.sup_abs() == 0.0) {
    rep.C = 1.0;
    return rep;
  }
  double lo = 0.0, hi = 1.0;
  if (below(1.0)) {
    rep.C = 1.0;
    return rep;
  }
  for (int k = 0; k < bisection_steps; ++k) {
    const double mid = 0.5 * (lo + hi);
    (below(mid) ? lo : hi) = mid;
  }
  rep.C = lo;
  return rep;
}

// ---------------------------------------------------------------------------
// Predicted log-Laplace functionals
// ---------------------------------------------------------------------------

enum class LaplaceTarget { Y, X };

/// H int_0^T <lambda, v_T(., T - s, s)> ds (target Y) or with u_T in place of v_T (target X),
/// for Psi_T(x, s) = phi(x) chi_nu(s/T) / F_T.
inline double predicted_log_laplace(OneParticleModel m, const GridProblem& gp, const MeasureOnUnit& nu, double T,
                                    double F_T, LaplaceTarget target, const SolveOptions& opt = {}) {
  if (nu.empty()) return 0.0;
  if (!(F_T > 0.0)) throw DomainError("predicted_log_laplace: F_T must be > 0");
  const auto src = StepSource::from_measure(nu, T, 1.0 / F_T);
  const auto sol = solve_v(m, gp, src, opt);
  const double H = gp.params().H;
  if (target == LaplaceTarget::Y) return H * sol.field.space_time_integral(gp);
  const auto tv = tilde_v(gp, sol.field.time);
  return H * sol.field.minus(tv).space_time_integral(gp);
}

/// log E exp(theta int_0^T <N_s, phi> ds).
inline double predicted_log_laplace_occupation(OneParticleModel m, const GridProblem& gp, double theta, double T,
                                               const SolveOptions& opt = {}) {
  return predicted_log_laplace(m, gp, MeasureOnUnit::dirac(1.0, theta), T, 1.0, LaplaceTarget::Y, opt);
}

}  // namespace subcrit
