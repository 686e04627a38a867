#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mobillm/cli.hpp"
#include "mobillm/error.hpp"
#include "mobillm/side_network.hpp"
#include "test_util.hpp"

using namespace mobillm;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

class HelpGolden : public ::testing::TestWithParam<std::string> {};

TEST_P(HelpGolden, MatchesCheckedInText) {
  const std::string name = GetParam();
  std::vector<std::string> args;
  if (name != "main") args.push_back(name);
  args.push_back("--help");
  const auto r = run(args);
  EXPECT_EQ(r.code, kExitOk);
  const auto golden = slurp(std::string(MOBILLM_TEST_DATA) + "/help_" + name + ".txt");
  ASSERT_FALSE(golden.empty());
  EXPECT_EQ(r.out, golden);
}

INSTANTIATE_TEST_SUITE_P(Cli, HelpGolden,
                         ::testing::Values("main", "device", "server", "local", "gradcheck", "estimate",
                                           "quantbench"));

TEST(Cli, EveryFlagHasADefault) {
  EXPECT_TRUE(options_without_defaults().empty());
}

TEST(Cli, NoSubcommandIsUsageError) {
  const auto r = run({});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = run({"estimate", "--bogus"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("Usage: mobillm estimate"), std::string::npos);
}

TEST(Cli, BadValuesAreConfigErrors) {
  EXPECT_EQ(run({"estimate", "--scheme", "int3"}).code, kExitConfig);
  EXPECT_EQ(run({"estimate", "--preset", "nope"}).code, kExitConfig);
  EXPECT_EQ(run({"local", "--queue", "0", "--iterations", "1"}).code, kExitConfig);
  EXPECT_EQ(run({"local", "--cuts", "3,2", "--iterations", "1"}).code, kExitConfig);
}

TEST(Cli, EstimatePrintsCostReport) {
  const auto r = run({"estimate", "--preset", "opt350m", "--scheme", "nf4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("payload_bytes_per_iter").get<double>(), 50332294.0);
  EXPECT_EQ(j.at("optimizer_bytes").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(j.at("total_bytes").get<double>(),
                   j.at("weights_bytes").get<double>() + j.at("activation_bytes").get<double>() +
                       j.at("optimizer_bytes").get<double>());
}

TEST(Cli, EstimateTimeNeedsPositiveRate) {
  const auto r = run({"estimate", "--preset", "opt350m", "--rate-bps", "1e7", "--t-fwd", "1"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_GT(nlohmann::json::parse(r.out).at("est_iter_time_s").get<double>(), 1.0);
}

TEST(Cli, GradcheckPassesAndReportsMaximum) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("max rel err"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--seeds", "1", "--tol", "1e-30"}).code, kExitRuntime);
}

TEST(Cli, QuantbenchOneLinePerScheme) {
  const auto r = run({"quantbench", "--n", "512", "--batch", "2", "--seq", "4", "--hidden", "8"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream lines(r.out);
  std::vector<std::string> schemes;
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_GE(j.at("rmse").get<double>(), 0.0);
    schemes.push_back(j.at("scheme").get<std::string>());
  }
  EXPECT_EQ(schemes, (std::vector<std::string>{"fp16", "fp8", "fp4", "nf4"}));
}

TEST(Cli, LocalRunWritesMetricsAndSummary) {
  test::TempDir dir("cli");
  const auto r = run({"local", "--seq", "7", "--batch", "4", "--iterations", "5", "--hidden", "16",
                      "--layers", "2", "--heads", "2", "--ffn", "32", "--cuts", "uniform:2",
                      "--bottleneck", "4", "--metrics", dir.file("m.jsonl"), "--ckpt", dir.file("c.bin")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_EQ(summary.at("iterations").get<int>(), 5);
  EXPECT_TRUE(summary.contains("train_acc"));
  std::ifstream m(dir.file("m.jsonl"));
  int rows = 0;
  for (std::string line; std::getline(m, line);) ++rows;
  EXPECT_EQ(rows, 5);
  EXPECT_NO_THROW(load_checkpoint(dir.file("c.bin")));
}

TEST(Cli, ConfigFilePrecedence) {
  test::TempDir dir("cfg");
  {
    std::ofstream out(dir.file("run.conf"));
    out << "# estimate defaults\npreset = opt350m\nscheme=fp16\n\n";
  }
  const auto from_file = run({"estimate", "--config", dir.file("run.conf")});
  ASSERT_EQ(from_file.code, kExitOk) << from_file.err;
  EXPECT_EQ(nlohmann::json::parse(from_file.out).at("payload_bytes_per_iter").get<double>(), 201327238.0);
  const auto overridden = run({"estimate", "--config", dir.file("run.conf"), "--scheme", "nf4"});
  ASSERT_EQ(overridden.code, kExitOk) << overridden.err;
  EXPECT_EQ(nlohmann::json::parse(overridden.out).at("payload_bytes_per_iter").get<double>(), 50332294.0);
  const auto flag_first = run({"estimate", "--scheme", "nf4", "--config", dir.file("run.conf")});
  EXPECT_EQ(nlohmann::json::parse(flag_first.out).at("payload_bytes_per_iter").get<double>(), 50332294.0);
  {
    std::ofstream out(dir.file("bad.conf"));
    out << "no_such_flag=1\n";
  }
  EXPECT_EQ(run({"estimate", "--config", dir.file("bad.conf")}).code, kExitConfig);
  EXPECT_EQ(run({"estimate", "--config", dir.file("missing.conf")}).code, kExitConfig);
}

TEST(Cli, ParseCuts) {
  EXPECT_EQ(parse_cuts("uniform:2", 4), (std::vector<std::uint32_t>{2, 4}));
  EXPECT_EQ(parse_cuts("1,3,4", 4), (std::vector<std::uint32_t>{1, 3, 4}));
  EXPECT_THROW(parse_cuts("uniform:5", 4), ConfigError);
  EXPECT_THROW(parse_cuts("1,x", 4), ConfigError);
  // Lists parse verbatim; the backbone config rejects bad groupings.
  for (const char* bad : {"1,3", "2,2,4"}) {
    EXPECT_EQ(run({"local", "--cuts", bad, "--iterations", "1", "--seq", "5", "--layers", "4"}).code,
              kExitConfig) << bad;
  }
}

TEST(Cli, ServerWithoutPeerTimesOutAsRuntimeError) {
  const auto r = run({"server", "--listen", "127.0.0.1:0", "--timeout-ms", "200"});
  EXPECT_EQ(r.code, kExitRuntime);
}
