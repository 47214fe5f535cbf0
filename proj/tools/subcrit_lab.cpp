// subcrit-lab: runs verification suites from an experiment config file.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "experiment_config.hpp"
#include "suites.hpp"

namespace fs = std::filesystem;
using namespace subcrit;
using namespace subcrit::lab;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fingerprint(const ExperimentConfig& c) {
  std::string desc = config_description(c.sim(), c.params(), c.motion(), c.phi(), c.replicates, c.stride);
  for (const auto& s : c.suites) desc += ";suite=" + s;
  std::ostringstream os;
  os.precision(17);
  os << ";theta=" << (c.options.theta ? *c.options.theta : -1.0) << ";lf=" << c.options.laplace_fraction
     << ";cgf=" << c.options.cgf_theta << ";boot=" << c.options.bootstrap;
  for (int l : c.options.levels) os << ";lv=" << l;
  desc += os.str();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(desc)));
  return buf;
}

int run(const std::string& config_path, std::size_t workers, const std::optional<std::uint64_t>& seed_flag,
        const std::optional<std::string>& out_flag) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  std::string seed_source = "file";
  if (seed_flag) {
    cfg.seed = *seed_flag;
    seed_source = "flag";
  } else if (const char* env = std::getenv("SUBCRIT_SEED")) {
    try {
      std::size_t pos = 0;
      cfg.seed = std::stoull(env, &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      std::cerr << "invalid configuration:\n  - SUBCRIT_SEED must be an unsigned integer, got '" << env << "'\n";
      return 2;
    }
    seed_source = "env";
  }
  if (out_flag) cfg.output = *out_flag;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());

  std::error_code ec;
  fs::create_directories(cfg.output, ec);
  if (ec) {
    std::cerr << "cannot create output directory " << cfg.output << ": " << ec.message() << '\n';
    return 2;
  }

  SuiteRunner runner(cfg, workers);
  int status = 0;
  std::string failed_suite, error;
  for (const auto& s : cfg.suites) {
    try {
      runner.run(s);
    } catch (const std::exception& e) {
      failed_suite = s;
      error = "suite " + s + ": " + e.what();
      std::cerr << error << '\n';
      status = 3;
      break;
    }
  }
  if (!cfg.suites.empty()) {
    runner.write_summary((fs::path(cfg.output) / "summary.csv").string());
    if (runner.ensemble()) runner.write_replicates((fs::path(cfg.output) / "replicates.jsonl").string());
  }
  if (status == 0 && !runner.all_pass()) status = 1;

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::ordered_json m;
  m["tool"] = "subcrit-lab";
  m["version"] = kVersion;
  m["config"] = fs::absolute(config_path).string();
  m["fingerprint"] = fingerprint(cfg);
  m["seed"] = cfg.seed;
  m["seed_source"] = seed_source;
  m["workers"] = workers;
  m["suites"] = cfg.suites;
  m["wall_clock_seconds"] = wall;
  m["exit_status"] = status;
  if (!error.empty()) m["error"] = error;
  std::ofstream(fs::path(cfg.output) / "manifest.json") << m.dump(2) << '\n';

  for (const auto& r : runner.rows)
    if (r.verdict != Verdict::info)
      std::cout << r.suite << ' ' << r.quantity << ' ' << fmt17(r.estimate) << " (predicted " << fmt17(r.predicted) << ") "
                << to_string(r.verdict) << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subcrit-lab: occupation-time limit experiments for subcritical branching systems"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run the suites listed in a config file");
  std::string config;
  std::size_t workers = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  run_cmd->add_option("config", config, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--workers", workers, "Cap on worker threads (default: hardware concurrency)");
  run_cmd->add_option("--seed-override", seed, "Master seed; overrides SUBCRIT_SEED and sim.seed");
  run_cmd->add_option("--out", out, "Output directory; overrides the config");

  auto* list_cmd = app.add_subcommand("suites", "List available suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  if (*list_cmd) {
    for (const auto& s : known_suites()) std::cout << s << '\n';
    return 0;
  }
  return run(config, workers, seed, out);
}
