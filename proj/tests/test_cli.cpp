#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured; stderr is discarded.
Run cli(const std::string& args) {
  const std::string cmd = std::string(QKDSIM_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string scenario(const std::string& name) { return std::string(QKDSIM_SCENARIO_DIR) + "/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("qkdsim_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& body) {
    const auto p = dir_ / name;
    std::ofstream(p) << body;
    return p.string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ValidateExitCodes) {
  EXPECT_EQ(cli("validate --config " + scenario("terrestrial.json")).code, 0);
  const auto bad = write("bad.json", R"({"arm_b": {"loss_db": -1}, "protocol": {"coincidence_window": 0}})");
  EXPECT_EQ(cli("validate --config " + bad).code, 2);
  EXPECT_EQ(cli("validate --config " + (dir_ / "missing.json").string()).code, 2);
  EXPECT_EQ(cli("validate").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(CliTest, AnalyzeFieldTrialStats) {
  const auto r = cli("analyze --stats " + scenario("field_trial_stats.json"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["skr_bps"].get<double>() / 71.8, 1.0, 0.05);
  const auto asym = nlohmann::json::parse(
      cli("analyze --mode same_basis_asymptotic --stats " + scenario("field_trial_stats.json")).out);
  EXPECT_NEAR(asym["skr_bps"].get<double>(), 90.7, 0.5);
}

TEST_F(CliTest, ModelSweepOverMu) {
  const auto out = (dir_ / "mu.csv").string();
  ASSERT_EQ(cli("model --config " + scenario("terrestrial.json") + " --sweep mu --loss-db 43.5 --out " + out).code, 0);
  std::istringstream is(slurp(out));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, line.find(',')), "mu");
  double best = 0.0;
  int rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string mu, skr;
    std::getline(ls, mu, ',');
    std::getline(ls, skr, ',');
    best = std::max(best, std::stod(skr));
    ++rows;
  }
  EXPECT_EQ(rows, 81);
  EXPECT_GE(best, 300.0);
}

TEST_F(CliTest, OptimizeUnreachableLossIsNoKey) {
  EXPECT_EQ(cli("optimize --config " + scenario("terrestrial.json") + " --loss-db 200").code, 3);
  const auto r = cli("optimize --config " + scenario("terrestrial.json") + " --loss-db 44");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.substr(0, r.out.find(',')), "loss_db_total");
}

TEST_F(CliTest, SimulateAndKeygenAreReproducible) {
  const auto cfg = write("sim.json", R"({"scenario": "dual", "preset": "micius_dual",
    "arm_a": {"loss_db": 10}, "arm_b": {"loss_db": 10}, "source": {"mu": 0.05},
    "clocks": {"offset_s": 1e-4, "drift": 0}, "simulate": {"duration_s": 0.2}, "seeds": {"simulation": 3}})");
  std::string reports[2];
  for (int k = 0; k < 2; ++k) {
    const auto out = dir_ / ("run" + std::to_string(k));
    ASSERT_EQ(cli("simulate --config " + cfg + " --out-dir " + out.string()).code, 0);
    ASSERT_TRUE(fs::exists(out / "alice.qtag"));
    ASSERT_TRUE(fs::exists(out / "truth.json"));
    const auto report = out / "report.json";
    ASSERT_EQ(cli("keygen --config " + cfg + " --a " + (out / "alice.qtag").string() + " --b " +
                  (out / "bob.qtag").string() + " --out " + report.string())
                  .code,
              0);
    reports[k] = slurp(report);
  }
  EXPECT_EQ(reports[0], reports[1]);
  EXPECT_EQ(slurp(dir_ / "run0" / "bob.qtag"), slurp(dir_ / "run1" / "bob.qtag"));
  const auto j = nlohmann::json::parse(reports[0]);
  EXPECT_GT(j["final_length"].get<double>(), 0.0);
  EXPECT_NEAR(j["clock"]["offset_ps"].get<double>(), 1e8, 1000.0);
}

TEST_F(CliTest, SyncOfUncorrelatedFilesFails) {
  std::ostringstream a, b;
  a << "time_ps,channel\n";
  b << "time_ps,channel\n";
  std::mt19937_64 rng(5);
  std::vector<std::uint64_t> ta, tb;
  for (int i = 0; i < 20000; ++i) {
    ta.push_back(rng() % 200'000'000'000ULL);
    tb.push_back(rng() % 200'000'000'000ULL);
  }
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  for (auto t : ta) a << t << ",0\n";
  for (auto t : tb) b << t << ",1\n";
  const auto pa = write("a.csv", a.str()), pb = write("b.csv", b.str());
  EXPECT_EQ(cli("sync --a " + pa + " --b " + pb).code, 4);
  const auto corrupt = write("c.qtag", "QTAG garbage");
  EXPECT_EQ(cli("sync --a " + corrupt + " --b " + pb).code, 2);
}

TEST_F(CliTest, HelpListsFlags) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases{
      {"analyze", {"--stats", "--mode", "--epsilon", "--ec-efficiency", "--out"}},
      {"model", {"--config", "--sweep", "--grid", "--loss-db", "--mu", "--out"}},
      {"optimize", {"--config", "--loss-db", "--loss-grid", "--out-csv", "--out-json"}},
      {"simulate", {"--config", "--duration", "--seed", "--format", "--out-dir"}},
      {"sync", {"--a", "--b", "--config", "--no-drift", "--out-clock", "--out-pairs", "--out-hist"}},
      {"keygen", {"--a", "--b", "--qber-mode", "--sample-fraction", "--pa-seed", "--key-out"}},
      {"pass", {"--config", "--profile", "--noise", "--bin-width", "--policy", "--mu", "--out-csv"}},
      {"validate", {"--config"}},
  };
  for (const auto& [cmd, flags] : cases) {
    const auto r = cli(cmd + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
  }
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(CliTest, PassTemplateTotals) {
  const auto json_out = (dir_ / "pass.json").string();
  const auto r = cli("pass --config " + scenario("pass_triangular.json") + " --out-json " + json_out);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "t_s,loss_db,mu_used,skr_bps");
  const auto j = nlohmann::json::parse(slurp(json_out));
  EXPECT_EQ(j["bins"], 300);
  EXPECT_GT(j["total_bits"].get<double>(), 0.0);
  EXPECT_NEAR(j["mean_skr_bps"].get<double>() * 300.0, j["total_bits"].get<double>(), 1e-6);
}
