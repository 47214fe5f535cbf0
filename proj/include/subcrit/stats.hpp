#pragma once
//!\file
//!\brief Ensembles and the empirical side of the limit theorems.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "subcrit/bps.hpp"
#include "subcrit/core_model.hpp"
#include "subcrit/limits.hpp"
#include "subcrit/motion.hpp"
#include "subcrit/rng.hpp"

namespace subcrit {

// ---------------------------------------------------------------------------
// Basic estimators
// ---------------------------------------------------------------------------

inline double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance_of(std::span<const double> x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// log((1/n) sum exp(x_i)) with a max shift.
inline double log_mean_exp(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s / static_cast<double>(x.size()));
}

/// (sum w)^2 / sum w^2 for w_i = exp(x_i).
inline double effective_sample_size(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0, s2 = 0.0;
  for (double v : x) {
    const double w = std::exp(v - mx);
    s += w;
    s2 += w * w;
  }
  return s * s / s2;
}

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Jackknife over replicates for a statistic f of per-replicate rows (leave-one-out from power sums).
/// rows[i] holds the k row values; f receives the k-vector of means of arbitrary products given by `terms`.
class MomentJackknife {
 public:
  /// Each term is a list of column indices whose product is averaged.
  MomentJackknife(const std::vector<std::vector<double>>& rows, std::vector<std::vector<std::size_t>> terms)
      : terms_(std::move(terms)), n_(rows.size()) {
    if (n_ < 3) throw DomainError("jackknife: need at least 3 replicates");
    contrib_.assign(n_, std::vector<double>(terms_.size()));
    total_.assign(terms_.size(), 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < terms_.size(); ++k) {
        double p = 1.0;
        for (auto c : terms_[k]) p *= rows[i][c];
        contrib_[i][k] = p;
        total_[k] += p;
      }
  }

  template <class F>
  Estimate run(F&& f) const {
    std::vector<double> m(total_.size());
    const double n = static_cast<double>(n_);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = total_[k] / n;
    const double full = f(m, n);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = (total_[k] - contrib_[i][k]) / (n - 1.0);
      const double v = f(m, n - 1.0);
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    const double var = std::max(0.0, (n - 1.0) / n * (s2 - n * mean * mean));
    return {full, std::sqrt(var)};
  }

 private:
  std::vector<std::vector<std::size_t>> terms_;
  std::size_t n_;
  std::vector<std::vector<double>> contrib_;
  std::vector<double> total_;
};

/// Sample covariance with jackknife standard error.
inline Estimate covariance_jackknife(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  std::vector<std::vector<double>> rows(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rows[i] = {x[i] - mx, y[i] - my};
  MomentJackknife jk(rows, {{0}, {1}, {0, 1}});
  return jk.run([](const std::vector<double>& m, double n) { return n / (n - 1.0) * (m[2] - m[0] * m[1]); });
}

inline Estimate correlation_jackknife(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  std::vector<std::vector<double>> rows(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rows[i] = {x[i] - mx, y[i] - my};
  MomentJackknife jk(rows, {{0}, {1}, {0, 1}, {0, 0}, {1, 1}});
  return jk.run([](const std::vector<double>& m, double) {
    const double c = m[2] - m[0] * m[1];
    const double vx = m[3] - m[0] * m[0], vy = m[4] - m[1] * m[1];
    return c / std::sqrt(vx * vy);
  });
}

/// Excess kurtosis m4/m2^2 - 3.
inline Estimate excess_kurtosis_jackknife(std::span<const double> x) {
  const double mx = mean_of(x);
  std::vector<std::vector<double>> rows(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rows[i] = {x[i] - mx};
  MomentJackknife jk(rows, {{0}, {0, 0}, {0, 0, 0}, {0, 0, 0, 0}});
  return jk.run([](const std::vector<double>& m, double) {
    const double a = m[0];
    const double c2 = m[1] - a * a;
    const double c4 = m[3] - 4.0 * a * m[2] + 6.0 * a * a * m[1] - 3.0 * a * a * a * a;
    return c4 / (c2 * c2) - 3.0;
  });
}

inline Estimate skewness_jackknife(std::span<const double> x) {
  const double mx = mean_of(x);
  std::vector<std::vector<double>> rows(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rows[i] = {x[i] - mx};
  MomentJackknife jk(rows, {{0}, {0, 0}, {0, 0, 0}});
  return jk.run([](const std::vector<double>& m, double) {
    const double a = m[0];
    const double c2 = m[1] - a * a;
    const double c3 = m[2] - 3.0 * a * m[1] + 2.0 * a * a * a;
    return c3 / std::pow(c2, 1.5);
  });
}

struct BootstrapResult {
  double estimate;
  double std_error;
  double ci_lo, ci_hi;  ///< 95% percentile interval
};

/// Seeded nonparametric bootstrap of log-mean-exp.
inline BootstrapResult bootstrap_log_mean_exp(std::span<const double> x, std::size_t resamples, std::uint64_t seed) {
  Rng rng(splitmix64(seed));
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  std::vector<double> boot(resamples), tmp(x.size());
  for (auto& b : boot) {
    for (auto& t : tmp) t = x[pick(rng)];
    b = log_mean_exp(tmp);
  }
  std::sort(boot.begin(), boot.end());
  const double est = log_mean_exp(x);
  const double sd = std::sqrt(variance_of(boot));
  const auto at = [&](double p) { return boot[std::min(boot.size() - 1, static_cast<std::size_t>(p * static_cast<double>(boot.size())))]; };
  return {est, sd, std::min(at(0.025), est), std::max(at(0.975), est)};
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct Replicate {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  PathSample Y;
  PathSample X;
};

struct ReplicateSet {
  std::vector<Replicate> reps;
  std::uint64_t fingerprint = 0;
  double T = 0.0;
  double F_T = 1.0;
  Normalization norm;

  std::size_t size() const { return reps.size(); }
  std::vector<double> x_at(std::size_t j) const {
    std::vector<double> v;
    v.reserve(reps.size());
    for (const auto& r : reps) v.push_back(r.X[j]);
    return v;
  }
  std::vector<double> y_at(std::size_t j) const {
    std::vector<double> v;
    v.reserve(reps.size());
    for (const auto& r : reps) v.push_back(r.Y[j]);
    return v;
  }
  std::size_t intervals() const { return reps.front().X.intervals(); }
  /// Grid index of unit time t (must be a grid point).
  std::size_t index_of(double t) const {
    const double u = t * static_cast<double>(intervals());
    const auto j = static_cast<std::size_t>(std::llround(u));
    if (std::abs(u - static_cast<double>(j)) > 1e-9) throw DomainError("ReplicateSet: time not on the grid");
    return j;
  }
};

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_description(const SimConfig& cfg, const BranchingParams& p, const MotionModel& m,
                                      const TestFunction& phi, std::size_t replicates, std::size_t stride) {
  std::ostringstream os;
  os.precision(17);
  os << "T=" << cfg.T << ";dt=" << cfg.dt << ";R=" << cfg.R << ";model=" << (cfg.model == SimModel::bps ? "bps" : "super")
     << ";level=" << cfg.level << ";norm=" << cfg.norm.name() << ";alpha=" << cfg.norm.alpha << ";seed=" << cfg.seed
     << ";cap=" << cfg.particle_cap << ";V=" << p.V << ";q=" << p.q << ";H=" << p.H << ";motion=" << m.describe()
     << ";phi=" << static_cast<int>(phi.kind()) << ";pref=" << phi.prefactor() << ";reps=" << replicates
     << ";stride=" << stride;
  for (double c : phi.center()) os << ";c=" << c;
  for (double w : phi.gaussian_widths()) os << ";w=" << w;
  return os.str();
}

/// Runs replicates 0..n-1 on `workers` threads; output is independent of the worker count.
inline ReplicateSet run_ensemble(const SimConfig& cfg, const BranchingParams& p, const MotionModel& m,
                                 const TestFunction& phi, std::size_t replicates, std::size_t workers,
                                 std::size_t stride = 1) {
  if (replicates < 1) throw DomainError("run_ensemble: replicates must be >= 1");
  cfg.validate();
  if (stride == 0 || cfg.steps() % stride != 0) throw DomainError("run_ensemble: stride must divide T/dt");
  ReplicateSet set;
  set.reps.resize(replicates);
  set.T = cfg.T;
  set.F_T = cfg.norm.F(cfg.T);
  set.norm = cfg.norm;
  set.fingerprint = fnv1a(config_description(cfg, p, m, phi, replicates, stride));
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::size_t failed_index = 0;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= replicates) return;
      {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (first_error) return;
      }
      try {
        SimConfig c = cfg;
        c.replicate = i;
        const auto occ = simulate(c, p, m, phi);
        auto paths = rescale(occ, c, p, m, phi, stride);
        set.reps[i] = Replicate{i, replicate_seed(cfg.seed, i), std::move(paths.Y), std::move(paths.X)};
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (!first_error || i < failed_index) {
          first_error = std::current_exception();
          failed_index = i;
        }
      }
    }
  };
  const std::size_t nw = std::max<std::size_t>(1, std::min(workers, replicates));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < nw; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const std::exception& e) {
      throw DomainError("replicate " + std::to_string(failed_index) + ": " + e.what());
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// CLT
// ---------------------------------------------------------------------------

struct CovarianceCheck {
  double s, t;
  Estimate empirical;
  double predicted;
};

struct CltReport {
  std::vector<CovarianceCheck> covariances;
  Estimate increment_correlation;  ///< Corr(X(1) - X(1/2), X(1/2))
  Estimate skewness;
  Estimate excess_kurtosis;
};

inline CltReport clt_verify(const ReplicateSet& set, LimitModel model, const BranchingParams& p, const QuadraticForms& forms,
                            const std::vector<std::pair<double, double>>& pairs) {
  if (set.norm.kind != NormKind::sqrtT) throw DomainError("clt_verify: paths must use F_T = T^{1/2}");
  if (set.size() < 3) throw DomainError("clt_verify: need at least 3 replicates");
  CltReport r;
  for (auto [s, t] : pairs) {
    const auto xs = set.x_at(set.index_of(s)), xt = set.x_at(set.index_of(t));
    r.covariances.push_back({s, t, covariance_jackknife(xs, xt), clt_covariance(model, s, t, p, forms)});
  }
  const auto x1 = set.x_at(set.index_of(1.0)), xh = set.x_at(set.index_of(0.5));
  std::vector<double> inc(x1.size());
  for (std::size_t i = 0; i < inc.size(); ++i) inc[i] = x1[i] - xh[i];
  r.increment_correlation = correlation_jackknife(inc, xh);
  r.skewness = skewness_jackknife(x1);
  r.excess_kurtosis = excess_kurtosis_jackknife(x1);
  return r;
}

// ---------------------------------------------------------------------------
// Cumulant generating functions
// ---------------------------------------------------------------------------

struct CgfEstimate {
  double theta = 0.0;
  double alpha = 0.0;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double std_error = std::numeric_limits<double>::quiet_NaN();
  double ess = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  bool reliable = false;
};

/// T^{-alpha} log mean exp(theta T^alpha X(1)).
inline CgfEstimate empirical_cgf(const ReplicateSet& set, double theta, double alpha, double ess_floor = 30.0,
                                 std::size_t resamples = 400, std::uint64_t seed = 12345) {
  if (alpha != 1.0 && !(set.norm.kind == NormKind::moderate && std::abs(set.norm.alpha - alpha) < 1e-12))
    throw DomainError("empirical_cgf: paths must use F_T = T^{(1+alpha)/2} with the same alpha");
  if (alpha == 1.0 && set.norm.kind != NormKind::T) throw DomainError("empirical_cgf: alpha = 1 needs F_T = T");
  CgfEstimate c;
  c.theta = theta;
  c.alpha = alpha;
  const double Ta = std::pow(set.T, alpha);
  const auto x1 = alpha == 1.0 ? set.y_at(set.intervals()) : set.x_at(set.intervals());
  std::vector<double> z(x1.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = theta * Ta * x1[i];
  c.ess = theta == 0.0 ? static_cast<double>(z.size()) : effective_sample_size(z);
  c.reliable = c.ess >= ess_floor;
  if (theta == 0.0) {
    c.estimate = 0.0;
    c.std_error = 0.0;
    c.reliable = true;
    return c;
  }
  if (!c.reliable) return c;
  const auto b = bootstrap_log_mean_exp(z, resamples, seed);
  c.estimate = b.estimate / Ta;
  c.std_error = b.std_error / Ta;
  c.ci_lo = b.ci_lo / Ta;
  c.ci_hi = b.ci_hi / Ta;
  return c;
}

// ---------------------------------------------------------------------------
// Pathwise diagnostics
// ---------------------------------------------------------------------------

/// L_k(x) = max over consecutive dyadic triples r < s < t of |x(s) - x(r)| ^ |x(t) - x(s)|.
inline std::vector<double> dyadic_L(const PathSample& x) {
  const std::size_t m = x.intervals();
  if ((m & (m - 1)) != 0) throw DomainError("dyadic_L: grid size must be a power of 2");
  std::vector<double> L;
  for (std::size_t level = 1; (std::size_t{1} << level) <= m; ++level) {
    const std::size_t stride = m >> level;
    double best = 0.0;
    for (std::size_t r = 0; r + 2 * stride <= m; r += stride) {
      const double a = std::abs(x[r + stride] - x[r]), b = std::abs(x[r + 2 * stride] - x[r + stride]);
      best = std::max(best, std::min(a, b));
    }
    L.push_back(best);
  }
  return L;
}

struct SupremaCheck {
  double sup_abs;
  double bound;  ///< 2 sum_k L_k + |x(1)|
  bool holds;
};

inline SupremaCheck suprema_check(const PathSample& x) {
  const auto L = dyadic_L(x);
  double sup = 0.0;
  for (double v : x.values()) sup = std::max(sup, std::abs(v));
  const double bound = 2.0 * std::accumulate(L.begin(), L.end(), 0.0) + std::abs(x.back());
  return {sup, bound, sup <= bound * (1.0 + 1e-12) + 1e-300};
}

struct GaussianBoundPoint {
  double theta;
  double lag;       ///< t - s in original time units
  double estimate;  ///< log mean exp(theta (x(t) - x(s))) / (lag theta^2)
};

struct PathBoundReport {
  std::size_t paths = 0;
  std::size_t suprema_violations = 0;
  double suprema_fraction = 0.0;
  double fitted_c = 0.0;
  std::vector<GaussianBoundPoint> design;
};

struct BoundDesign {
  std::vector<double> lag_fractions{0.25, 0.5, 1.0};  ///< lags as fractions of T
  std::vector<double> theta_scales{0.5, 1.0};          ///< theta' = scale sqrt(cap / lag)
  double cumulant_cap = 0.1;                           ///< theta'^2 lag <= cap
  double epsilon = 0.25;                               ///< theta' <= T^{-epsilon}
};

/// Suprema inequality on every path, and the smallest c with E exp(theta'(x(t)-x(s))) <= exp(c (t-s) theta'^2)
/// over the design; x = F_T X is the unnormalised fluctuation, windows of a lag are pooled over disjoint starts.
inline PathBoundReport path_bound_checks(const ReplicateSet& set, const BoundDesign& design = {}) {
  PathBoundReport rep;
  rep.paths = set.size();
  const std::size_t m = set.intervals();
  if ((m & (m - 1)) != 0) throw DomainError("path_bound_checks: grid size must be a power of 2");
  for (const auto& r : set.reps)
    if (!suprema_check(r.X).holds) ++rep.suprema_violations;
  rep.suprema_fraction = 1.0 - static_cast<double>(rep.suprema_violations) / static_cast<double>(rep.paths);
  const double theta_cap = std::pow(set.T, -design.epsilon);
  rep.fitted_c = 0.0;
  for (double frac : design.lag_fractions) {
    const auto k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(m)));
    if (k == 0 || k > m) continue;
    const double lag = set.T * static_cast<double>(k) / static_cast<double>(m);
    std::vector<double> inc;
    for (const auto& r : set.reps)
      for (std::size_t s = 0; s + k <= m; s += k) inc.push_back(set.F_T * (r.X[s + k] - r.X[s]));
    for (double sc : design.theta_scales) {
      const double th = std::min(theta_cap, sc * std::sqrt(design.cumulant_cap / lag));
      std::vector<double> z(inc.size());
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = th * inc[i];
      const double est = log_mean_exp(z) / (lag * th * th);
      rep.design.push_back({th, lag, est});
      rep.fitted_c = std::max(rep.fitted_c, est);
    }
  }
  return rep;
}

}  // namespace subcrit
