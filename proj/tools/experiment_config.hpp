#pragma once
// Experiment configuration for subcrit-lab: YAML parsing and validation.

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "subcrit/bps.hpp"
#include "subcrit/core_model.hpp"
#include "subcrit/motion.hpp"

namespace subcrit::lab {

inline const std::vector<std::string>& known_suites() {
  static const std::vector<std::string> s{"simulate",       "solve",          "rates",
                                          "verify-lln",     "verify-clt",     "verify-mdp",
                                          "verify-laplace", "verify-comparison", "assumptions",
                                          "superproc-converge"};
  return s;
}

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::vector<std::string>& problems)
      : std::runtime_error(join(problems)), problems_(problems) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& x : p) s += "\n  - " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

struct SuiteOptions {
  std::optional<double> theta;        ///< solve / laplace tilt; default a fraction of the threshold
  double laplace_fraction = 0.2;      ///< laplace tilt as a fraction of Q0^B / ||phi||_inf
  double cgf_theta = 0.05;            ///< verify-mdp tilt
  std::vector<int> levels{1, 2, 4, 8, 16};
  std::size_t bootstrap = 400;
};

struct ExperimentConfig {
  SimModel model = SimModel::bps;
  int level = 1;
  double V = 0, q = 0, H = 0;
  std::string motion_kind;
  double sigma = 1.0, theta_ou = 0.0, rate = 0.0, jump_std = 0.0;
  std::size_t dim = 1;
  std::string phi_kind = "gaussian";
  std::vector<double> phi_center{0.0};
  double phi_width = 1.0, phi_amplitude = 1.0;
  double T = 0, dt = 0, R = 0;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  std::size_t particle_cap = 10'000'000;
  std::size_t stride = 1;
  Normalization norm;
  std::vector<std::string> suites;
  std::string output = "out";
  SuiteOptions options;

  BranchingParams params() const { return {V, q, H}; }
  MotionModel motion() const {
    if (motion_kind == "degenerate") return MotionModel::degenerate(dim);
    if (motion_kind == "brownian") return MotionModel::brownian(sigma, dim);
    if (motion_kind == "ornstein-uhlenbeck") return MotionModel::ornstein_uhlenbeck(theta_ou, sigma, dim);
    return MotionModel::compound_poisson(rate, jump_std, dim);
  }
  TestFunction phi() const { return TestFunction::gaussian_bump(phi_center, phi_width, phi_amplitude); }
  SimConfig sim() const {
    SimConfig c;
    c.T = T;
    c.dt = dt;
    c.R = R;
    c.model = model;
    c.level = level;
    c.norm = norm;
    c.seed = seed;
    c.particle_cap = particle_cap;
    return c;
  }
  bool wants(const std::string& suite) const {
    for (const auto& s : suites)
      if (s == suite) return true;
    return false;
  }
};

namespace detail {

class Reader {
 public:
  std::vector<std::string> problems;

  void check_keys(const YAML::Node& n, const std::string& where, const std::set<std::string>& allowed) {
    if (!n.IsMap()) {
      problems.push_back(where + ": expected a mapping");
      return;
    }
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) problems.push_back("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }

  template <class T>
  bool get(const YAML::Node& n, const std::string& key, const std::string& path, T& out, bool required) {
    if (!n.IsMap() || !n[key]) {
      if (required) problems.push_back("missing required key '" + path + "'");
      return false;
    }
    try {
      out = n[key].as<T>();
      return true;
    } catch (const YAML::Exception&) {
      problems.push_back("key '" + path + "' has the wrong type");
      return false;
    }
  }
};

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root) {
  detail::Reader rd;
  ExperimentConfig c;
  if (!root.IsMap()) throw ConfigError({"top level must be a mapping"});
  rd.check_keys(root, "", {"model", "params", "motion", "phi", "sim", "norm", "suites", "output", "options"});

  const auto model = root["model"];
  std::string kind;
  if (!model) rd.problems.push_back("missing required key 'model.kind'");
  else {
    rd.check_keys(model, "model", {"kind", "level"});
    if (rd.get(model, "kind", "model.kind", kind, true)) {
      if (kind == "bps") c.model = SimModel::bps;
      else if (kind == "super-approx") {
        c.model = SimModel::super_approx;
        rd.get(model, "level", "model.level", c.level, true);
      } else rd.problems.push_back("model.kind must be bps or super-approx, got '" + kind + "'");
    }
  }

  const auto params = root["params"];
  if (!params) rd.problems.push_back("missing required section 'params'");
  else {
    rd.check_keys(params, "params", {"V", "q", "H"});
    rd.get(params, "V", "params.V", c.V, true);
    rd.get(params, "q", "params.q", c.q, true);
    rd.get(params, "H", "params.H", c.H, true);
  }

  const auto motion = root["motion"];
  if (!motion) rd.problems.push_back("missing required key 'motion.kind'");
  else {
    rd.check_keys(motion, "motion", {"kind", "sigma", "theta", "rate", "jump_std", "dim"});
    rd.get(motion, "dim", "motion.dim", c.dim, false);
    if (rd.get(motion, "kind", "motion.kind", c.motion_kind, true)) {
      const auto& k = c.motion_kind;
      if (k == "brownian") rd.get(motion, "sigma", "motion.sigma", c.sigma, true);
      else if (k == "ornstein-uhlenbeck") {
        rd.get(motion, "theta", "motion.theta", c.theta_ou, true);
        rd.get(motion, "sigma", "motion.sigma", c.sigma, true);
      } else if (k == "compound-poisson") {
        rd.get(motion, "rate", "motion.rate", c.rate, true);
        rd.get(motion, "jump_std", "motion.jump_std", c.jump_std, true);
      } else if (k != "degenerate")
        rd.problems.push_back("motion.kind must be degenerate, brownian, ornstein-uhlenbeck or compound-poisson");
    }
  }

  const auto phi = root["phi"];
  if (!phi) rd.problems.push_back("missing required key 'phi.kind'");
  else {
    rd.check_keys(phi, "phi", {"kind", "center", "width", "amplitude"});
    if (rd.get(phi, "kind", "phi.kind", c.phi_kind, true) && c.phi_kind != "gaussian")
      rd.problems.push_back("phi.kind must be gaussian");
    rd.get(phi, "center", "phi.center", c.phi_center, false);
    rd.get(phi, "width", "phi.width", c.phi_width, false);
    rd.get(phi, "amplitude", "phi.amplitude", c.phi_amplitude, false);
  }

  const auto sim = root["sim"];
  if (!sim) rd.problems.push_back("missing required section 'sim'");
  else {
    rd.check_keys(sim, "sim", {"T", "dt", "R", "replicates", "seed", "particle_cap", "stride"});
    rd.get(sim, "T", "sim.T", c.T, true);
    rd.get(sim, "dt", "sim.dt", c.dt, true);
    rd.get(sim, "R", "sim.R", c.R, true);
    rd.get(sim, "replicates", "sim.replicates", c.replicates, true);
    rd.get(sim, "seed", "sim.seed", c.seed, true);
    rd.get(sim, "particle_cap", "sim.particle_cap", c.particle_cap, false);
    rd.get(sim, "stride", "sim.stride", c.stride, false);
  }

  const auto norm = root["norm"];
  if (!norm) rd.problems.push_back("missing required key 'norm.kind'");
  else {
    rd.check_keys(norm, "norm", {"kind", "alpha"});
    std::string nk;
    if (rd.get(norm, "kind", "norm.kind", nk, true)) {
      if (nk == "T") c.norm = Normalization::lln();
      else if (nk == "sqrtT") c.norm = Normalization::clt();
      else if (nk == "moderate") {
        double a = 0.5;
        rd.get(norm, "alpha", "norm.alpha", a, true);
        c.norm = Normalization::mdp(a);
      } else rd.problems.push_back("norm.kind must be T, sqrtT or moderate");
    }
  }

  if (root["suites"]) {
    if (rd.get(root, "suites", "suites", c.suites, false))
      for (const auto& s : c.suites)
        if (std::find(known_suites().begin(), known_suites().end(), s) == known_suites().end())
          rd.problems.push_back("unknown suite '" + s + "'");
  }
  rd.get(root, "output", "output", c.output, false);

  if (const auto opt = root["options"]) {
    rd.check_keys(opt, "options", {"theta", "laplace_fraction", "cgf_theta", "levels", "bootstrap"});
    double th;
    if (rd.get(opt, "theta", "options.theta", th, false)) c.options.theta = th;
    rd.get(opt, "laplace_fraction", "options.laplace_fraction", c.options.laplace_fraction, false);
    rd.get(opt, "cgf_theta", "options.cgf_theta", c.options.cgf_theta, false);
    rd.get(opt, "levels", "options.levels", c.options.levels, false);
    rd.get(opt, "bootstrap", "options.bootstrap", c.options.bootstrap, false);
  }

  // module-level validation, collected rather than thrown one by one
  auto guard = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      rd.problems.emplace_back(e.what());
    }
  };
  if (rd.problems.empty()) {
    guard([&] { c.params().validate(); });
    guard([&] { (void)c.motion(); });
    guard([&] { (void)c.phi(); });
    guard([&] { c.sim().validate(); });
    if (c.model == SimModel::super_approx) guard([&] { (void)approx_level_params(c.params(), c.level); });
    if (c.replicates < 1) rd.problems.push_back("sim.replicates must be >= 1");
    if (c.stride == 0 || (c.dt > 0 && c.sim().steps() % c.stride != 0)) rd.problems.push_back("sim.stride must divide T/dt");
    if (c.dim != 1 && (c.wants("solve") || c.wants("verify-laplace") || c.wants("verify-comparison") || c.wants("rates")))
      rd.problems.push_back("field solver suites support motion.dim = 1 only");
    if (c.wants("verify-lln") && c.norm.kind != NormKind::T) rd.problems.push_back("verify-lln needs norm.kind = T");
    if (c.wants("verify-clt") && c.norm.kind != NormKind::sqrtT) rd.problems.push_back("verify-clt needs norm.kind = sqrtT");
    if (c.wants("verify-mdp") && c.norm.kind != NormKind::moderate)
      rd.problems.push_back("verify-mdp needs norm.kind = moderate");
    if (c.wants("superproc-converge") && c.q <= 0.0) rd.problems.push_back("superproc-converge needs q > 0");
    for (std::size_t i = 1; i < c.options.levels.size(); ++i)
      if (c.options.levels[i] <= c.options.levels[i - 1]) rd.problems.push_back("options.levels must increase");
    if (c.phi_center.size() != c.dim) rd.problems.push_back("phi.center must have motion.dim entries");
  }
  if (!rd.problems.empty()) throw ConfigError(rd.problems);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw ConfigError({"cannot read " + path + ": " + e.what()});
  }
  return parse_config(root);
}

}  // namespace subcrit::lab
