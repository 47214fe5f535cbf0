#pragma once
//!\file
//!\brief Simulator for the branching particle system with immigration and its level-n approximations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "subcrit/core_model.hpp"
#include "subcrit/motion.hpp"
#include "subcrit/rng.hpp"

namespace subcrit {

enum class NormKind { T, sqrtT, moderate };

/// F_T = T, T^{1/2} or T^{(1+alpha)/2}.
struct Normalization {
  NormKind kind = NormKind::T;
  double alpha = 0.5;

  static Normalization lln() { return {NormKind::T, 1.0}; }
  static Normalization clt() { return {NormKind::sqrtT, 0.0}; }
  static Normalization mdp(double a) { return {NormKind::moderate, a}; }

  void validate() const {
    if (kind == NormKind::moderate && !(alpha > 0.0 && alpha < 1.0))
      throw DomainError("Normalization: alpha must lie in (0, 1)");
  }
  double F(double T) const {
    switch (kind) {
      case NormKind::T: return T;
      case NormKind::sqrtT: return std::sqrt(T);
      case NormKind::moderate: return std::pow(T, 0.5 * (1.0 + alpha));
    }
    return T;
  }
  std::string name() const {
    switch (kind) {
      case NormKind::T: return "T";
      case NormKind::sqrtT: return "sqrtT";
      case NormKind::moderate: return "moderate";
    }
    return "?";
  }
};

enum class SimModel { bps, super_approx };

struct SimConfig {
  double T = 1.0;
  double dt = 0.1;
  double R = 6.0;  ///< immigration box [c - R, c + R]^d around the center of phi
  SimModel model = SimModel::bps;
  int level = 1;
  Normalization norm;
  std::uint64_t seed = 1;
  std::uint64_t replicate = 0;
  std::size_t particle_cap = 10'000'000;

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }

  void validate() const {
    if (!(T > 0.0)) throw DomainError("SimConfig: T must be > 0");
    if (!(dt > 0.0) || dt > T / 10.0 * (1.0 + 1e-12)) throw DomainError("SimConfig: need 0 < dt <= T/10");
    if (std::abs(static_cast<double>(steps()) * dt - T) > 1e-9 * T) throw DomainError("SimConfig: T/dt must be an integer");
    if (!(R > 0.0)) throw DomainError("SimConfig: R must be > 0");
    if (model == SimModel::super_approx && level < 1) throw DomainError("SimConfig: level must be >= 1");
    if (particle_cap == 0) throw DomainError("SimConfig: particle cap must be > 0");
    norm.validate();
  }
};

/// Rates actually driving the simulation: (V, q) per particle, immigration, and particle mass.
struct EffectiveRates {
  double V, q, immigration, mass;
};

inline EffectiveRates effective_rates(const SimConfig& cfg, const BranchingParams& p) {
  if (cfg.model == SimModel::bps) return {p.V, p.q, p.H, 1.0};
  const auto a = approx_level_params(p, cfg.level);
  return {a.V_n, a.q_n, a.immigration, a.mass};
}

struct OccupationPath {
  double T = 0.0;
  double dt = 0.0;
  std::vector<double> a;  ///< <N_{s_j}, phi>, mass weighted
  std::vector<double> I;  ///< int_0^{s_j} <N_s, phi> ds
  std::uint64_t seed = 0;
  std::uint64_t replicate = 0;
  std::size_t immigrants = 0;
  std::size_t particles = 0;

  std::size_t steps() const { return I.size() - 1; }
  double time(std::size_t j) const { return dt * static_cast<double>(j); }
};

namespace detail {

/// Per-replicate accumulators on the time grid.
struct Accumulator {
  std::size_t m;
  double dt;
  std::vector<double> ramp_c, ramp_ct;  ///< static particles: I_j = t_j sum c - sum c tau over ramps started before t_j
  std::vector<double> alive;            ///< difference array for a_j (static particles)
  std::vector<double> cell;             ///< moving particles: occupation inside cell j
  std::vector<double> knot;             ///< moving particles: a_j

  Accumulator(std::size_t m_, double dt_)
      : m(m_), dt(dt_), ramp_c(m_ + 2, 0.0), ramp_ct(m_ + 2, 0.0), alive(m_ + 2, 0.0), cell(m_ + 1, 0.0), knot(m_ + 1, 0.0) {}

  std::size_t first_knot_after(double tau) const {
    return std::min(m + 1, static_cast<std::size_t>(std::floor(tau / dt)) + 1);
  }
  std::size_t first_knot_at_or_after(double tau) const {
    return std::min(m + 1, static_cast<std::size_t>(std::ceil(tau / dt)));
  }

  /// Constant contribution c on [b, e).
  void add_static(double c, double b, double e) {
    std::size_t k = first_knot_after(b);
    ramp_c[k] += c;
    ramp_ct[k] += c * b;
    alive[first_knot_at_or_after(b)] += c;
    if (e < static_cast<double>(m) * dt) {
      k = first_knot_after(e);
      ramp_c[k] -= c;
      ramp_ct[k] -= c * e;
      alive[first_knot_at_or_after(e)] -= c;
    }
  }

  void finish(OccupationPath& out) const {
    out.I.assign(m + 1, 0.0);
    out.a.assign(m + 1, 0.0);
    double C = 0.0, CT = 0.0, A = 0.0, cum = 0.0;
    for (std::size_t j = 0; j <= m; ++j) {
      C += ramp_c[j];
      CT += ramp_ct[j];
      A += alive[j];
      const double tj = dt * static_cast<double>(j);
      if (j > 0) cum += cell[j - 1];
      out.I[j] = std::max(0.0, tj * C - CT) + cum;
      out.a[j] = std::max(0.0, A) + knot[j];
    }
    // cancellation in t C - CT can break monotonicity at round-off level
    for (std::size_t j = 1; j <= m; ++j) out.I[j] = std::max(out.I[j], out.I[j - 1]);
  }
};

}  // namespace detail

/// Runs one replicate; immigrants' families are processed depth-first, which has the same law
/// as a global event queue because families evolve independently.
inline OccupationPath simulate(const SimConfig& cfg, const BranchingParams& p, const MotionModel& motion,
                               const TestFunction& phi, Rng& rng) {
  cfg.validate();
  if (phi.dim() != motion.dim()) throw DomainError("simulate: phi and motion dimensions differ");
  const double support = phi.support_radius(1e-12);
  if (cfg.R < support)
    throw DomainError("simulate: box half-width " + detail::fmt_g(cfg.R) + " does not cover the support radius " +
                      detail::fmt_g(support) + " of phi");
  const auto er = effective_rates(cfg, p);
  const std::size_t m = cfg.steps();
  const std::size_t d = motion.dim();
  const double T = cfg.T, dt = cfg.dt;
  detail::Accumulator acc(m, dt);

  const double volume = std::pow(2.0 * cfg.R, static_cast<double>(d));
  std::poisson_distribution<long> n_imm(er.immigration * volume * T);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> life(er.V);

  OccupationPath out;
  out.T = T;
  out.dt = dt;
  out.seed = cfg.seed;
  out.replicate = cfg.replicate;
  const long N = n_imm(rng);
  out.immigrants = static_cast<std::size_t>(N);

  const std::size_t stride = d + 1;
  std::vector<double> stack;
  std::vector<double> x(d), x0(d);
  const bool is_static = motion.is_static();

  for (long i = 0; i < N; ++i) {
    const double tau = T * unif(rng);
    for (std::size_t k = 0; k < d; ++k) x0[k] = phi.center()[k] + cfg.R * (2.0 * unif(rng) - 1.0);
    std::size_t family = 0;
    if (is_static) {
      const double c = er.mass * phi(x0);
      std::vector<double>& times = stack;
      times.clear();
      times.push_back(tau);
      while (!times.empty()) {
        const double b = times.back();
        times.pop_back();
        const double e = b + life(rng);
        if (++family > cfg.particle_cap)
          throw DomainError("simulate: family exceeded the particle cap " + std::to_string(cfg.particle_cap));
        if (c > 0.0) acc.add_static(c, b, std::min(e, T));
        if (e < T && unif(rng) < er.q) {
          times.push_back(e);
          times.push_back(e);
        }
      }
      out.particles += family;
      continue;
    }
    stack.clear();
    stack.push_back(tau);
    stack.insert(stack.end(), x0.begin(), x0.end());
    while (!stack.empty()) {
      const double b = stack[stack.size() - stride];
      std::copy(stack.end() - static_cast<long>(d), stack.end(), x.begin());
      stack.resize(stack.size() - stride);
      if (++family > cfg.particle_cap)
        throw DomainError("simulate: family exceeded the particle cap " + std::to_string(cfg.particle_cap));
      const double death = b + life(rng);
      const double e = std::min(death, T);
      double u = b;
      double fu = phi(x);
      std::size_t k = acc.first_knot_after(b);
      while (k <= m && dt * static_cast<double>(k) < e) {
        const double tk = dt * static_cast<double>(k);
        motion.step_unchecked(x, tk - u, rng);
        const double fk = phi(x);
        acc.cell[k - 1] += er.mass * 0.5 * (tk - u) * (fu + fk);
        acc.knot[k] += er.mass * fk;
        u = tk;
        fu = fk;
        ++k;
      }
      if (e > u) {
        motion.step_unchecked(x, e - u, rng);
        const double fe = phi(x);
        acc.cell[std::min(k, m) - 1] += er.mass * 0.5 * (e - u) * (fu + fe);
      }
      if (death < T && unif(rng) < er.q) {
        for (int c = 0; c < 2; ++c) {
          stack.push_back(death);
          stack.insert(stack.end(), x.begin(), x.end());
        }
      }
    }
    out.particles += family;
  }
  acc.finish(out);
  return out;
}

inline OccupationPath simulate(const SimConfig& cfg, const BranchingParams& p, const MotionModel& motion,
                               const TestFunction& phi) {
  auto rng = make_rng(cfg.seed, cfg.replicate);
  return simulate(cfg, p, motion, phi, rng);
}

/// Alive count of one family started by a single particle at time 0, sampled at t_j = j dt.
struct FamilyRun {
  std::vector<double> alive;
  double extinction_time = 0.0;  ///< +inf if alive at the horizon
  std::size_t particles = 0;
};

inline FamilyRun simulate_family(double V, double q, double horizon, double dt, Rng& rng,
                                 std::size_t cap = 10'000'000) {
  if (!(V > 0.0) || !(q >= 0.0 && q < 1.0)) throw DomainError("simulate_family: bad rates");
  const auto m = static_cast<std::size_t>(std::llround(horizon / dt));
  detail::Accumulator acc(m, dt);
  std::exponential_distribution<double> life(V);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> stack{0.0};
  FamilyRun r;
  double last = 0.0;
  while (!stack.empty()) {
    const double b = stack.back();
    stack.pop_back();
    const double e = b + life(rng);
    if (++r.particles > cap) throw DomainError("simulate_family: particle cap exceeded");
    acc.add_static(1.0, b, std::min(e, horizon));
    last = std::max(last, e);
    if (e < horizon && unif(rng) < q) {
      stack.push_back(e);
      stack.push_back(e);
    }
  }
  OccupationPath tmp;
  acc.finish(tmp);
  r.alive = std::move(tmp.a);
  r.extinction_time = last >= horizon ? std::numeric_limits<double>::infinity() : last;
  return r;
}

// ---------------------------------------------------------------------------
// Mean curve and rescaling
// ---------------------------------------------------------------------------

/// m(t) = E <N_t, phi> and its integral M(t), at the given times.
struct MeanCurve {
  std::vector<double> m;
  std::vector<double> M;
};

inline MeanCurve mean_curve(const BranchingParams& p, const MotionModel& motion, const TestFunction& phi,
                            const std::vector<double>& times) {
  const double r = lebesgue_decay_rate(motion, p.Q());
  if (!(r > 0.0))
    throw DomainError("mean_curve: d * theta_ou >= Q, the Lebesgue pairing diverges");
  const double c = p.H * phi.integral();
  MeanCurve out;
  for (double t : times) {
    const double e = -std::expm1(-r * t);
    out.m.push_back(c * e / r);
    out.M.push_back(c * (t - e / r) / r);
  }
  return out;
}

struct RescaledPaths {
  PathSample Y;
  PathSample X;
};

/// Y(t) = I(Tt)/F_T and X(t) = (I(Tt) - M(Tt))/F_T on the unit grid, optionally subsampled.
inline RescaledPaths rescale(const OccupationPath& occ, const SimConfig& cfg, const BranchingParams& p,
                             const MotionModel& motion, const TestFunction& phi, std::size_t stride = 1) {
  if (occ.I.empty() || std::abs(occ.dt - cfg.dt) > 1e-12 * cfg.dt || occ.steps() != cfg.steps())
    throw DomainError("rescale: occupation grid does not match the configuration");
  if (stride == 0 || occ.steps() % stride != 0) throw DomainError("rescale: stride must divide the step count");
  std::vector<double> times;
  for (std::size_t j = 0; j <= occ.steps(); j += stride) times.push_back(occ.time(j));
  const auto mc = mean_curve(p, motion, phi, times);
  const double F = cfg.norm.F(cfg.T);
  std::vector<double> y, x;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double I = occ.I[k * stride];
    y.push_back(I / F);
    x.push_back((I - mc.M[k]) / F);
  }
  return {PathSample(std::move(y)), PathSample(std::move(x))};
}

/// Heuristic relative bias of E I(T) from truncating immigration to the box: 2d exp(-kappa margin),
/// with kappa the exponential decay rate of U^Q phi away from the support of phi.
inline double truncation_bound(const BranchingParams& p, const MotionModel& motion, const TestFunction& phi, double R) {
  const double margin = R - phi.support_radius(1e-12);
  if (margin < 0.0) return std::numeric_limits<double>::infinity();
  const double Q = p.Q(), d = static_cast<double>(motion.dim());
  switch (motion.kind()) {
    case MotionKind::degenerate: return 0.0;
    case MotionKind::brownian: return 2.0 * d * std::exp(-std::sqrt(2.0 * Q) / motion.sigma() * margin);
    case MotionKind::compound_poisson:
      return 2.0 * d * std::exp(-std::sqrt(2.0 * Q) / (motion.jump_std() * std::sqrt(motion.rate())) * margin);
    case MotionKind::ornstein_uhlenbeck: return 2.0 * d * std::exp(-margin * margin * motion.theta() / (motion.sigma() * motion.sigma() + 1e-300));
  }
  return 0.0;
}

struct LevelRow {
  int level;
  double mean_Y1, var_Y1, se_mean;
};

/// Ensemble mean and variance of Y(1) for each approximation level.
inline std::vector<LevelRow> superprocess_sequence(const BranchingParams& p, const MotionModel& motion,
                                                   const TestFunction& phi, SimConfig base,
                                                   const std::vector<int>& levels, std::size_t replicates) {
  if (replicates < 2) throw DomainError("superprocess_sequence: need >= 2 replicates");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (levels[i] <= levels[i - 1]) throw DomainError("superprocess_sequence: levels must increase");
  std::vector<LevelRow> rows;
  base.model = SimModel::super_approx;
  const double F = base.norm.F(base.T);
  for (int n : levels) {
    base.level = n;
    double s = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < replicates; ++r) {
      base.replicate = r;
      const double y = simulate(base, p, motion, phi).I.back() / F;
      s += y;
      s2 += y * y;
    }
    const double nr = static_cast<double>(replicates);
    const double mean = s / nr, var = (s2 - nr * mean * mean) / (nr - 1.0);
    rows.push_back({n, mean, var, std::sqrt(var / nr)});
  }
  return rows;
}

}  // namespace subcrit
