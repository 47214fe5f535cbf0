#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "experiment_config.hpp"

using namespace subcrit;
using namespace subcrit::lab;
namespace fs = std::filesystem;

namespace {

const std::string kValid = R"(
model: {kind: bps}
params: {V: 1.0, q: 0.25, H: 1.0}
motion: {kind: brownian, sigma: 1.0}
phi: {kind: gaussian, center: [0.0], width: 1.0}
sim: {T: 20, dt: 0.5, R: 24, replicates: 4, seed: 3}
norm: {kind: T}
suites: [simulate]
)";

std::vector<std::string> problems_of(const std::string& yaml) {
  try {
    parse_config(YAML::Load(yaml));
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& p, const std::string& needle) {
  for (const auto& s : p)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct Run {
  int status;
  std::string out;
};

Run run_lab(const std::string& args, const std::string& env = "") {
  const std::string cmd = (env.empty() ? "" : env + " ") + SUBCRIT_LAB_PATH + " " + args + " 2>&1";
  Run r{0, {}};
  FILE* f = popen(cmd.c_str(), "r");
  char buf[512];
  while (fgets(buf, sizeof buf, f)) r.out += buf;
  const int raw = pclose(f);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("subcrit_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const auto p = dir / "cfg.yaml";
  std::ofstream(p) << body;
  return p;
}

std::string first_seed(const fs::path& dir) {
  const auto text = slurp(dir / "replicates.jsonl");
  const auto a = text.find("\"seed\":") + 7;
  return text.substr(a, text.find(',', a) - a);
}

}  // namespace

TEST(Config, ParsesValid) {
  const auto c = parse_config(YAML::Load(kValid));
  EXPECT_EQ(c.model, SimModel::bps);
  EXPECT_EQ(c.motion().kind(), MotionKind::brownian);
  EXPECT_DOUBLE_EQ(c.params().Q(), 0.5);
  EXPECT_EQ(c.sim().steps(), 40u);
  EXPECT_EQ(c.replicates, 4u);
  EXPECT_EQ(c.norm.kind, NormKind::T);
  EXPECT_TRUE(c.wants("simulate"));
  EXPECT_FALSE(c.wants("solve"));
}

TEST(Config, MisspelledKeyIsNamed) {
  auto bad = kValid;
  bad.replace(bad.find("H: 1.0"), 6, "H: 1.0, imigration: 2.0");
  const auto p = problems_of(bad);
  ASSERT_FALSE(p.empty());
  EXPECT_TRUE(mentions(p, "imigration"));
}

TEST(Config, ListsEveryViolation) {
  const auto p = problems_of(R"(
model: {kind: bps, colour: red}
params: {V: 1.0, q: 0.25}
motion: {kind: levy}
phi: {kind: gaussian}
sim: {T: 20, dt: 0.5, R: 24, replicates: 4, seed: 3}
norm: {kind: T}
)");
  EXPECT_TRUE(mentions(p, "model.colour"));
  EXPECT_TRUE(mentions(p, "params.H"));
  EXPECT_TRUE(mentions(p, "motion.kind"));
  EXPECT_GE(p.size(), 3u);
}

TEST(Config, ModuleValidationCollected) {
  auto bad = kValid;
  bad.replace(bad.find("q: 0.25"), 7, "q: 0.75");
  bad.replace(bad.find("dt: 0.5"), 7, "dt: 0.3");
  const auto p = problems_of(bad);
  EXPECT_TRUE(mentions(p, "q"));
  EXPECT_TRUE(mentions(p, "T/dt"));
}

TEST(Config, SuiteNormalizationMismatch) {
  auto bad = kValid;
  bad.replace(bad.find("[simulate]"), 10, "[verify-clt, bogus]");
  const auto p = problems_of(bad);
  EXPECT_TRUE(mentions(p, "bogus"));
  bad.replace(bad.find(", bogus"), 7, "");
  EXPECT_TRUE(mentions(problems_of(bad), "sqrtT"));
}

TEST(Cli, SuitesListing) {
  const auto r = run_lab("suites");
  EXPECT_EQ(r.status, 0);
  for (const auto& s : known_suites()) EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST(Cli, EmptySuitesWritesManifestOnly) {
  const auto dir = scratch("empty");
  const auto r = run_lab("run " + std::string(SUBCRIT_CFG_DIR) + "/empty.yaml --out " + dir.string());
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "summary.csv"));
  EXPECT_FALSE(fs::exists(dir / "replicates.jsonl"));
  const auto m = slurp(dir / "manifest.json");
  EXPECT_NE(m.find("fingerprint"), std::string::npos);
  EXPECT_NE(m.find("wall_clock_seconds"), std::string::npos);
}

TEST(Cli, ConfigErrorExitStatus) {
  const auto dir = scratch("bad");
  auto bad = kValid;
  bad.replace(bad.find("H: 1.0"), 6, "H: 1.0, imigration: 2.0");
  const auto r = run_lab("run " + write_config(dir, bad).string() + " --out " + dir.string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("imigration"), std::string::npos);
}

TEST(Cli, RerunIsByteIdentical) {
  const auto dir = scratch("rerun");
  const auto cfg = write_config(dir, kValid);
  const auto a = dir / "a", b = dir / "b";
  ASSERT_EQ(run_lab("run " + cfg.string() + " --out " + a.string()).status, 0);
  ASSERT_EQ(run_lab("run " + cfg.string() + " --workers 3 --out " + b.string()).status, 0);
  for (const auto* f : {"replicates.jsonl", "summary.csv"}) {
    const auto x = slurp(a / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(b / f)) << f;
  }
}

TEST(Cli, SeedPrecedence) {
  const auto dir = scratch("seed");
  const auto cfg = write_config(dir, kValid).string();
  ASSERT_EQ(run_lab("run " + cfg + " --out " + (dir / "file").string()).status, 0);
  ASSERT_EQ(run_lab("run " + cfg + " --out " + (dir / "env").string(), "SUBCRIT_SEED=99").status, 0);
  ASSERT_EQ(run_lab("run " + cfg + " --seed-override 99 --out " + (dir / "flag99").string()).status, 0);
  ASSERT_EQ(run_lab("run " + cfg + " --seed-override 5 --out " + (dir / "flag").string(), "SUBCRIT_SEED=99").status, 0);
  ASSERT_EQ(run_lab("run " + cfg + " --seed-override 5 --out " + (dir / "flag5").string()).status, 0);
  EXPECT_EQ(first_seed(dir / "file"), std::to_string(replicate_seed(3, 0)));
  EXPECT_EQ(first_seed(dir / "env"), std::to_string(replicate_seed(99, 0)));
  EXPECT_EQ(slurp(dir / "env" / "replicates.jsonl"), slurp(dir / "flag99" / "replicates.jsonl"));
  EXPECT_EQ(slurp(dir / "flag" / "replicates.jsonl"), slurp(dir / "flag5" / "replicates.jsonl"));
  EXPECT_NE(slurp(dir / "flag" / "manifest.json").find("\"seed_source\": \"flag\""), std::string::npos);
}

TEST(Cli, ReplicateRecordShape) {
  const auto dir = scratch("shape");
  ASSERT_EQ(run_lab("run " + write_config(dir, kValid).string() + " --out " + dir.string()).status, 0);
  std::ifstream is(dir / "replicates.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    for (const auto* key : {"\"replicate\":", "\"seed\":", "\"t_grid\":[0,", "\"y\":[", "\"x\":["})
      EXPECT_NE(line.find(key), std::string::npos) << key;
    ++n;
  }
  EXPECT_EQ(n, 4u);
  const auto csv = slurp(dir / "summary.csv");
  EXPECT_EQ(csv.rfind("suite,quantity,estimate,stderr,predicted,verdict\n", 0), 0u);
}

TEST(Cli, FailingVerdictSetsExitStatus) {
  const auto dir = scratch("fail");
  auto cfg = kValid;
  cfg.replace(cfg.find("[simulate]"), 10, "[verify-lln]");
  cfg.replace(cfg.find("T: 20"), 5, "T: 2");
  cfg.replace(cfg.find("dt: 0.5"), 7, "dt: 0.1");
  // at T = 2 the occupation mean is far below the T -> infinity slope
  const auto r = run_lab("run " + write_config(dir, cfg).string() + " --out " + dir.string());
  EXPECT_EQ(r.status, 1) << r.out;
  EXPECT_NE(slurp(dir / "summary.csv").find(",fail\n"), std::string::npos);
}

TEST(Cli, VerifyLlnOnPreset) {
  const auto dir = scratch("lln");
  const auto r = run_lab("run " + std::string(SUBCRIT_CFG_DIR) + "/quick_lln.yaml --out " + dir.string());
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(slurp(dir / "summary.csv").find(",fail"), std::string::npos);
}
