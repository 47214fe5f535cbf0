#pragma once
// Verification suites run by subcrit-lab. Each suite appends rows to the summary table.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "experiment_config.hpp"
#include "subcrit/bps.hpp"
#include "subcrit/limits.hpp"
#include "subcrit/pde.hpp"
#include "subcrit/stats.hpp"

namespace subcrit::lab {

enum class Verdict { pass, fail, info };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::info: return "info";
  }
  return "?";
}

struct SummaryRow {
  std::string suite;
  std::string quantity;
  double estimate = 0.0;
  double stderr_ = std::numeric_limits<double>::quiet_NaN();
  double predicted = std::numeric_limits<double>::quiet_NaN();
  Verdict verdict = Verdict::info;
};

inline std::string fmt17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class SuiteRunner {
 public:
  SuiteRunner(const ExperimentConfig& cfg, std::size_t workers) : cfg_(cfg), workers_(workers) {}

  std::vector<SummaryRow> rows;

  void run(const std::string& suite) {
    static const std::map<std::string, void (SuiteRunner::*)()> table{
        {"simulate", &SuiteRunner::simulate},
        {"solve", &SuiteRunner::solve},
        {"rates", &SuiteRunner::rates},
        {"verify-lln", &SuiteRunner::verify_lln},
        {"verify-clt", &SuiteRunner::verify_clt},
        {"verify-mdp", &SuiteRunner::verify_mdp},
        {"verify-laplace", &SuiteRunner::verify_laplace},
        {"verify-comparison", &SuiteRunner::verify_comparison},
        {"assumptions", &SuiteRunner::assumptions},
        {"superproc-converge", &SuiteRunner::superproc_converge}};
    current_ = suite;
    (this->*table.at(suite))();
  }

  bool all_pass() const {
    for (const auto& r : rows)
      if (r.verdict == Verdict::fail) return false;
    return true;
  }

  const ReplicateSet* ensemble() const { return set_ ? &*set_ : nullptr; }

  void write_summary(const std::string& path) const {
    std::ofstream os(path);
    os << "suite,quantity,estimate,stderr,predicted,verdict\n";
    for (const auto& r : rows)
      os << r.suite << ',' << r.quantity << ',' << fmt17(r.estimate) << ',' << fmt17(r.stderr_) << ','
         << fmt17(r.predicted) << ',' << to_string(r.verdict) << '\n';
  }

  void write_replicates(const std::string& path) const {
    std::ofstream os(path);
    if (!set_) return;
    const std::size_t m = set_->intervals();
    std::string grid;
    for (std::size_t j = 0; j <= m; ++j) grid += (j ? "," : "") + fmt17(cfg_.T * static_cast<double>(j) / static_cast<double>(m));
    for (const auto& r : set_->reps) {
      os << "{\"replicate\":" << r.index << ",\"seed\":" << r.seed << ",\"t_grid\":[" << grid << "],\"y\":[";
      for (std::size_t j = 0; j <= m; ++j) os << (j ? "," : "") << fmt17(r.Y[j]);
      os << "],\"x\":[";
      for (std::size_t j = 0; j <= m; ++j) os << (j ? "," : "") << fmt17(r.X[j]);
      os << "]}\n";
    }
  }

 private:
  const ExperimentConfig& cfg_;
  std::size_t workers_;
  std::string current_;
  std::optional<ReplicateSet> set_;
  std::optional<GridProblem> gp_;

  void add(std::string quantity, double est, double se, double pred, Verdict v) {
    rows.push_back({current_, std::move(quantity), est, se, pred, v});
  }
  static Verdict check(bool ok) { return ok ? Verdict::pass : Verdict::fail; }

  const ReplicateSet& ensemble_set() {
    if (!set_) set_ = run_ensemble(cfg_.sim(), cfg_.params(), cfg_.motion(), cfg_.phi(), cfg_.replicates, workers_, cfg_.stride);
    return *set_;
  }

  const GridProblem& grid() {
    if (!gp_) gp_ = GridProblem::build(cfg_.params(), cfg_.motion(), cfg_.phi());
    return *gp_;
  }

  OneParticleModel one_particle() const {
    return cfg_.model == SimModel::bps ? OneParticleModel::bps : OneParticleModel::super;
  }
  LimitModel limit_model() const { return cfg_.model == SimModel::bps ? LimitModel::bps : LimitModel::super; }

  double mean_at_T() const {
    const auto mc = mean_curve(cfg_.params(), cfg_.motion(), cfg_.phi(), {cfg_.T});
    return mc.M[0];
  }

  // ---------------------------------------------------------------------

  void simulate() {
    const auto& s = ensemble_set();
    const auto y1 = s.y_at(s.intervals()), x1 = s.x_at(s.intervals());
    const double n = static_cast<double>(s.size());
    add("mean_Y1", mean_of(y1), s.size() > 1 ? std::sqrt(variance_of(y1) / n) : NAN, mean_at_T() / s.F_T, Verdict::info);
    if (s.size() > 1) add("var_X1", variance_of(x1), NAN, NAN, Verdict::info);
  }

  void solve() {
    const auto& gp = grid();
    const double th = cfg_.options.theta.value_or(0.5 * theta_max(OneParticleModel::bps, gp));
    for (auto m : {OneParticleModel::bps, OneParticleModel::super}) {
      const std::string name = to_string(m);
      const auto ss = steady_state(m, gp, th);
      add("steady_lambda_v_" + name, gp.integrate(ss.v), NAN, NAN, Verdict::info);
      add("steady_sweeps_" + name, static_cast<double>(ss.sweeps), NAN, NAN, Verdict::info);
      add("theta_max_" + name, theta_max(m, gp), NAN, NAN, Verdict::info);
    }
    const auto vs = steady_state(OneParticleModel::super, gp, th).v;
    const auto vb = steady_state(OneParticleModel::bps, gp, th).v;
    add("steady_super_le_bps", (vs - vb).maxCoeff(), NAN, 0.0, check((vs - vb).maxCoeff() <= 1e-12));
  }

  void rates() {
    const auto& gp = grid();
    const SteadyStateFamily fam(one_particle(), gp);
    const SteadyCumulant L{&fam};
    const double xbar = L.derivative(0.0);
    add("lln_value", xbar, NAN, cfg_.params().H * cfg_.phi().integral() / lebesgue_decay_rate(cfg_.motion(), cfg_.params().Q()),
        check(std::abs(xbar - lln_slope(cfg_.params(), cfg_.motion(), cfg_.phi())) <= 1e-3 * xbar));
    const auto at_mean = ldp_rate_scalar(L, xbar);
    add("ldp_rate_at_lln", at_mean.value, NAN, 0.0, check(std::abs(at_mean.value) < 1e-8));
    std::vector<double> xs, vals;
    for (double f : {0.25, 0.5, 0.75, 1.25, 1.5, 2.0}) {
      xs.push_back(f * xbar);
      const auto r = ldp_rate_scalar(L, f * xbar);
      vals.push_back(r.value);
      add("ldp_rate_x=" + fmt17(f * xbar), r.value, NAN, NAN, Verdict::info);
    }
    xs.insert(xs.begin() + 3, xbar);
    vals.insert(vals.begin() + 3, at_mean.value);
    bool convex = true;
    for (std::size_t i = 1; i + 1 < xs.size(); ++i) {
      const double lhs = vals[i] * (xs[i + 1] - xs[i - 1]);
      const double rhs = vals[i - 1] * (xs[i + 1] - xs[i]) + vals[i + 1] * (xs[i] - xs[i - 1]);
      convex = convex && lhs <= rhs + 1e-9 * std::max(1.0, std::abs(rhs));
    }
    add("ldp_rate_convex", convex ? 1.0 : 0.0, NAN, 1.0, check(convex));
    const auto forms = quadratic_forms(cfg_.motion(), cfg_.params().Q(), cfg_.phi());
    if (forms.finite) {
      std::vector<double> line(65);
      for (std::size_t j = 0; j < line.size(); ++j) line[j] = static_cast<double>(j) / 64.0;
      const auto mdp = mdp_rate_path(limit_model(), PathSample(line), cfg_.params(), forms);
      add("mdp_rate_linear_path", mdp.value, NAN, 1.0 / mdp_denominator(limit_model(), cfg_.params(), forms),
          check(std::abs(mdp.value * mdp_denominator(limit_model(), cfg_.params(), forms) - 1.0) < 1e-9));
    }
  }

  void verify_lln() {
    const auto& s = ensemble_set();
    const auto y1 = s.y_at(s.intervals());
    const double n = static_cast<double>(s.size());
    const double mean = mean_of(y1), se = s.size() > 1 ? std::sqrt(variance_of(y1) / n) : 0.0;
    const double slope = lln_slope(cfg_.params(), cfg_.motion(), cfg_.phi());
    const double finite_T = mean_at_T() / s.F_T;
    add("Y1_vs_finite_T_mean", mean, se, finite_T, check(std::abs(mean - finite_T) <= 3.0 * se));
    add("Y1_vs_lln_slope", mean, se, slope, check(std::abs(mean / slope - 1.0) <= 0.02));
    add("truncation_bound", truncation_bound(cfg_.params(), cfg_.motion(), cfg_.phi(), cfg_.R), NAN, NAN, Verdict::info);
  }

  void verify_clt() {
    const auto& s = ensemble_set();
    const auto forms = quadratic_forms(cfg_.motion(), cfg_.params().Q(), cfg_.phi());
    if (!forms.finite) throw DomainError("verify-clt: quadratic forms diverge for this motion");
    const auto rep = clt_verify(s, limit_model(), cfg_.params(), forms, {{0.5, 0.5}, {0.5, 1.0}, {1.0, 1.0}});
    for (const auto& c : rep.covariances)
      add("cov_X(" + fmt17(c.s) + ")_X(" + fmt17(c.t) + ")", c.empirical.value, c.empirical.std_error, c.predicted,
          check(std::abs(c.empirical.value / c.predicted - 1.0) <= 0.10));
    const auto& rho = rep.increment_correlation;
    add("increment_correlation", rho.value, rho.std_error, 0.0, check(std::abs(rho.value) <= 3.0 * rho.std_error));
    const auto& k = rep.excess_kurtosis;
    add("excess_kurtosis_X1", k.value, k.std_error, 0.0, check(std::abs(k.value) <= 3.0 * k.std_error));
    add("skewness_X1", rep.skewness.value, rep.skewness.std_error, 0.0, Verdict::info);
  }

  void verify_mdp() {
    const auto& s = ensemble_set();
    const auto forms = quadratic_forms(cfg_.motion(), cfg_.params().Q(), cfg_.phi());
    if (!forms.finite) throw DomainError("verify-mdp: quadratic forms diverge for this motion");
    const double th = cfg_.options.cgf_theta;
    const auto c = empirical_cgf(s, th, cfg_.norm.alpha, 30.0, cfg_.options.bootstrap, cfg_.seed);
    const double pred = th * th * clt_covariance(limit_model(), 1.0, 1.0, cfg_.params(), forms);
    add("ess", c.ess, NAN, 30.0, check(c.reliable));
    if (c.reliable) add("cgf_theta=" + fmt17(th), c.estimate, c.std_error, pred, check(std::abs(c.estimate / pred - 1.0) <= 0.15));
  }

  void verify_laplace() {
    const auto& s = ensemble_set();
    // the approximating process at level n is a BPS with modified rates and particle mass
    BranchingParams p = cfg_.params();
    double mass = 1.0;
    if (cfg_.model == SimModel::super_approx) {
      const auto a = approx_level_params(p, cfg_.level);
      p = a.as_branching();
      mass = a.mass;
    }
    const auto gp = GridProblem::build(p, cfg_.motion(), cfg_.phi());
    const double th = cfg_.options.theta.value_or(cfg_.options.laplace_fraction * theta_max(OneParticleModel::bps, gp));
    std::vector<double> z;
    for (const auto& r : s.reps) z.push_back(th * s.F_T * r.Y.back());
    const auto b = bootstrap_log_mean_exp(z, cfg_.options.bootstrap, cfg_.seed);
    const double pred = predicted_log_laplace_occupation(OneParticleModel::bps, gp, th * mass, cfg_.T);
    add("ess", effective_sample_size(z), NAN, 30.0, check(effective_sample_size(z) >= 30.0));
    add("log_laplace_theta=" + fmt17(th), b.estimate, b.std_error, pred, check(std::abs(b.estimate - pred) <= 3.0 * b.std_error));
  }

  void verify_comparison() {
    const auto& gp = grid();
    const double th = cfg_.options.theta.value_or(0.5 * theta_max(OneParticleModel::super, gp));
    const double horizon = std::min(cfg_.T, 10.0);
    const auto src = StepSource::constant(th, horizon);
    const auto rep = comparison_check(gp, src);
    add("violations", static_cast<double>(rep.violations), NAN, 0.0, check(rep.violations == 0));
    add("max_excess_super_minus_bps", rep.max_excess, NAN, 0.0, Verdict::info);
    add("C", rep.C, NAN, NAN, check(rep.C > 0.0 && rep.C <= 1.0));
  }

  void assumptions() {
    std::vector<double> t;
    for (int k = -2; k <= 8; ++k) t.push_back(std::ldexp(1.0, k));
    auto rep = check_assumptions(cfg_.motion(), cfg_.params(), cfg_.phi(), t);
    complete_a4(rep, quadratic_forms(cfg_.motion(), cfg_.params().Q(), cfg_.phi()));
    for (const auto& e : rep.entries) {
      const Verdict v = e.status == CheckStatus::fail ? Verdict::fail
                        : e.status == CheckStatus::pass ? Verdict::pass
                                                        : Verdict::info;
      add(e.name, e.witness, NAN, NAN, v);
    }
    if (rep.has_ou_verdict) add("ou_d_theta_lt_Q", cfg_.motion().theta() * static_cast<double>(cfg_.dim), NAN, cfg_.params().Q(),
                                check(rep.ou_verdict == CheckStatus::pass));
  }

  void superproc_converge() {
    SimConfig base = cfg_.sim();
    const auto table = superprocess_sequence(cfg_.params(), cfg_.motion(), cfg_.phi(), base, cfg_.options.levels, cfg_.replicates);
    const double pred = mean_at_T() / cfg_.norm.F(cfg_.T);
    for (const auto& r : table) {
      const std::string lv = "level=" + std::to_string(r.level);
      add("mean_Y1_" + lv, r.mean_Y1, r.se_mean, pred, check(std::abs(r.mean_Y1 - pred) <= 3.0 * r.se_mean));
      add("var_Y1_" + lv, r.var_Y1, NAN, NAN, Verdict::info);
    }
  }
};

}  // namespace subcrit::lab
