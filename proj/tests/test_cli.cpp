#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "snowball_ns/trace.hpp"

#ifndef SNOWBALL_NS_CLI
#error "SNOWBALL_NS_CLI must name the command-line binary"
#endif

using namespace snowball_ns;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(SNOWBALL_NS_CLI) + " " + args;
  cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("snowball_ns_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::vector<SnowballReport> reports_in(const fs::path& dir) {
  std::ifstream is(dir / "reports.jsonl");
  return read_reports(is);
}

const std::string kRosen = "--problem rosenbrock --dim 4 --k0 20 --k-inc 20 --steps 10 --seed 5";

}  // namespace

TEST(Cli, ConstantProblemIsExact) {
  const fs::path out = scratch("constant");
  ASSERT_EQ(run_cli("run --problem constant --dim 2 --const-logl 0 --iters 3 --out " + out.string()), 0);
  const auto reps = reports_in(out);
  ASSERT_EQ(reps.size(), 3u);
  for (const auto& r : reps) EXPECT_NEAR(r.log_z, 0.0, 1e-9);
  EXPECT_TRUE(fs::exists(out / "checkpoint.snsckpt"));
  EXPECT_TRUE(fs::exists(out / "posterior.csv"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_FALSE(fs::exists(out / ".lock"));
}

TEST(Cli, SameSeedSameBytes) {
  const fs::path a = scratch("det_a");
  const fs::path b = scratch("det_b");
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 3 --out " + a.string()), 0);
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 3 --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "reports.jsonl"), slurp(b / "reports.jsonl"));
  EXPECT_EQ(slurp(a / "posterior.csv"), slurp(b / "posterior.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.snsckpt"), slurp(b / "checkpoint.snsckpt"));
}

TEST(Cli, ResumeIsByteIdentical) {
  const fs::path full = scratch("full");
  const fs::path part = scratch("part");
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 6 --out " + full.string()), 0);
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 3 --out " + part.string()), 0);
  ASSERT_EQ(run_cli("resume --iters 3 --out " + part.string()), 0);
  EXPECT_EQ(slurp(full / "reports.jsonl"), slurp(part / "reports.jsonl"));
  EXPECT_EQ(slurp(full / "posterior.csv"), slurp(part / "posterior.csv"));
  EXPECT_EQ(reports_in(part).size(), 6u);
}

TEST(Cli, ResumeRefusesConflictingSettings) {
  const fs::path out = scratch("conflict");
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 2 --out " + out.string()), 0);
  const std::string before = slurp(out / "reports.jsonl");
  const fs::path log = fs::temp_directory_path() / "snowball_ns_cli_conflict.log";
  EXPECT_EQ(run_cli("resume --iters 1 --k-inc 30 --out " + out.string(), log), 1);
  EXPECT_NE(slurp(log).find("k-inc"), std::string::npos) << slurp(log);
  EXPECT_EQ(slurp(out / "reports.jsonl"), before);
}

TEST(Cli, BadArgumentsExitWithOne) {
  const fs::path out = scratch("bad");
  EXPECT_EQ(run_cli("run --problem himmelblau --dim 2 --out " + out.string()), 1);
  EXPECT_EQ(run_cli("run --problem rosenbrock --dim 2 --k0 1 --out " + out.string()), 1);
  EXPECT_EQ(run_cli("run --problem rosenbrock --dim 1 --out " + out.string()), 1);
  EXPECT_EQ(run_cli("resume --out " + scratch("nothing").string()), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
}

TEST(Cli, LockedDirectoryIsRefused) {
  const fs::path out = scratch("locked");
  fs::create_directories(out);
  std::ofstream(out / ".lock") << "1\n";
  EXPECT_EQ(run_cli("run " + kRosen + " --iters 1 --out " + out.string()), 1);
  EXPECT_FALSE(fs::exists(out / "reports.jsonl"));
}

TEST(Cli, TraceOfARun) {
  const fs::path out = scratch("trace");
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 4 --out " + out.string()), 0);
  const fs::path csv = out / "trace.csv";
  ASSERT_EQ(run_cli("trace --in " + out.string() + " --output " + csv.string()), 0);
  const std::string s = slurp(csv);
  EXPECT_EQ(s.rfind("outer_iteration,log_z,log_z_err\n", 0), 0u);
  EXPECT_NE(s.find("# b = "), std::string::npos);
  ASSERT_EQ(run_cli("trace --format table --in " + (out / "reports.jsonl").string() + " --steps 10 --output " +
                    (out / "trace.txt").string()),
            0);
  EXPECT_EQ(slurp(out / "trace.txt").rfind("# outer_iteration log_z log_z_err\n", 0), 0u);
}

TEST(Cli, TraceEdgeCases) {
  const fs::path dir = scratch("trace_edges");
  fs::create_directories(dir);
  std::ofstream(dir / "empty.jsonl").close();
  EXPECT_EQ(run_cli("trace --steps 20 --in " + (dir / "empty.jsonl").string()), 1);

  {
    std::ofstream os(dir / "broken.jsonl");
    os << "{\"outer_iteration\":1,\"k\":20,\"log_z\":-3,\"log_z_err\":0.1,\"ess\":5,\"n_dead\":10,"
          "\"n_like_evals_cumulative\":100,\"n_lrps_calls_new\":10,\"n_memo_hits\":0,\"wall_seconds\":0}\n"
       << "not json\n";
  }
  const fs::path log = dir / "broken.log";
  EXPECT_EQ(run_cli("trace --steps 20 --in " + (dir / "broken.jsonl").string(), log), 1);
  EXPECT_NE(slurp(log).find("line 2"), std::string::npos) << slurp(log);

  const fs::path one = scratch("trace_one");
  ASSERT_EQ(run_cli("run " + kRosen + " --iters 1 --out " + one.string()), 0);
  const fs::path one_log = dir / "one.log";
  EXPECT_EQ(run_cli("trace --in " + one.string(), one_log), 0);
  EXPECT_NE(slurp(one_log).find("1,"), std::string::npos);
}
