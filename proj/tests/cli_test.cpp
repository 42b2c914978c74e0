#include "neurotraj/io.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using neurotraj::io::json;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(NEUROTRAJ_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("neurotraj_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, MissingRequiredFlagIsUsageError) {
  const auto r = run("eval --model x");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--report"), std::string::npos);
  EXPECT_NE(r.output.find("Usage"), std::string::npos);
}

TEST_F(Cli, UnknownFlagIsUsageErrorWithSubcommandHelp) {
  const auto r = run("plot --frobnicate 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--kind"), std::string::npos);
}

TEST_F(Cli, BadLatencyListIsUsageError) {
  EXPECT_EQ(run("sweep-latency --model oracle --latencies 0,abc --out " + p("s.csv")).code, 2);
}

TEST_F(Cli, DomainErrorsExitOne) {
  ASSERT_EQ(run("--seed 1 gen --count 3 --out " + p("d")).code, 0);
  {
    // Corrupt one map file: checksum verification must reject the dataset.
    std::string bytes = neurotraj::io::read_file(p("d/ep000001.c0.map"));
    bytes[bytes.size() - 1] ^= 1;
    neurotraj::io::write_file_atomic(p("d/ep000001.c0.map"), bytes);
  }
  const auto r = run("relabel --data " + p("d") + " --out " + p("r"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("checksum"), std::string::npos);
  EXPECT_FALSE(fs::exists(p("r/manifest.json")));
  EXPECT_EQ(run("simulate --model oracle --scenario suite:nowhere --trace " + p("t.csv")).code, 1);
}

TEST_F(Cli, EvalWritesReportAndManifest) {
  ASSERT_EQ(run("--seed 4 gen --count 10 --out " + p("d")).code, 0);
  ASSERT_EQ(run("--seed 2 train --data " + p("d") + " --out " + p("m.bin") + " --epochs 1").code, 0);
  const auto r = run("eval --model " + p("m.bin") + " --data " + p("d") + " --report " + p("r.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto report = neurotraj::io::read_file(p("r.csv"));
  EXPECT_EQ(report.rfind("episode,E_ad,E_fd,E_x,E_y,E_v,n_samples\n", 0), 0u);
  EXPECT_NE(report.find("\nALL,"), std::string::npos);
  const auto m = json::parse(neurotraj::io::read_file(p("r.csv.manifest.json")));
  EXPECT_EQ(m.at("command"), "eval");
  EXPECT_EQ(m.at("outputs").at(0).at("sha256"), neurotraj::io::sha256_file(p("r.csv")));
  std::vector<std::string> inputs;
  for (const auto& i : m.at("inputs")) inputs.push_back(i.at("path"));
  EXPECT_NE(std::find(inputs.begin(), inputs.end(), p("m.bin")), inputs.end());
  EXPECT_NE(std::find(inputs.begin(), inputs.end(), p("d") + "/manifest.json"), inputs.end());
}

TEST_F(Cli, ConfigFileIsApplied) {
  neurotraj::io::write_file_atomic(p("c.json"), R"({"train": {"max_epochs": 2, "batch_size": 4}})");
  ASSERT_EQ(run("--seed 4 gen --count 10 --out " + p("d")).code, 0);
  ASSERT_EQ(run("--config " + p("c.json") + " train --data " + p("d") + " --out " + p("m.bin")).code, 0);
  const auto log = neurotraj::io::read_file(p("m.bin.log.csv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  neurotraj::io::write_file_atomic(p("bad.json"), R"({"train": {"batch_size": "many"}})");
  EXPECT_EQ(run("--config " + p("bad.json") + " train --data " + p("d") + " --out " + p("m2.bin")).code, 1);
}

TEST_F(Cli, SimulateAndPlot) {
  const auto r = run("--seed 3 simulate --model oracle --scenario suite:stop_2 --latency-ms 200 --trace " + p("t.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto outcome = json::parse(neurotraj::io::read_file(p("t.csv.outcome.json")));
  EXPECT_EQ(outcome.at("outcome"), "success");
  EXPECT_EQ(outcome.at("latency"), 0.2);
  ASSERT_EQ(run("sweep-latency --model oracle --scenarios suite:straight_0 --latencies 0,300 --seeds 2 --out " +
                p("s.csv"))
                .code,
            0);
  EXPECT_EQ(neurotraj::io::read_file(p("s.csv")),
            "latency_ms,success_rate,successes,runs\n0,1.000000,2,2\n300,1.000000,2,2\n");
  ASSERT_EQ(run("plot --input " + p("s.csv") + " --kind latency-curve --out " + p("s.svg")).code, 0);
  EXPECT_NE(neurotraj::io::read_file(p("s.svg")).find("<svg"), std::string::npos);
  neurotraj::io::write_file_atomic(p("bad.csv"), "latency_ms,success_rate\n0\n");
  const auto bad = run("plot --input " + p("bad.csv") + " --kind latency-curve --out " + p("b.svg"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("line 2"), std::string::npos);
  EXPECT_FALSE(fs::exists(p("b.svg")));
}
