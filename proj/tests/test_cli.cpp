#include <gtest/gtest.h>

#include <json.hpp>

#include "cli_run.hpp"
#include "recount.hpp"

using namespace xvqa::testing;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("xvqa_clitest_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(CliHelp, MatchesGoldenFiles) {
  const std::pair<const char*, const char*> cases[] = {
      {"--help", "help.txt"},
      {"generate --help", "help_generate.txt"},
      {"ingest --help", "help_ingest.txt"},
      {"serve --help", "help_serve.txt"},
      {"simulate --help", "help_simulate.txt"},
      {"analyze --help", "help_analyze.txt"},
      {"demo --help", "help_demo.txt"},
  };
  for (const auto& [args, file] : cases) {
    const auto r = run_cli(args);
    EXPECT_EQ(r.exit_code, 0) << args;
    EXPECT_EQ(r.out, slurp(fs::path(XVQA_GOLDEN_DIR) / file)) << args;
  }
}

TEST(CliErrors, ExitCodesAndMessages) {
  auto r = run_cli("");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(r.err.rfind("error: usage_error:", 0), 0u) << r.err;
  EXPECT_EQ(run_cli("generate").exit_code, 2);
  EXPECT_EQ(run_cli("simulate --group ZZ -o /tmp/none").exit_code, 1);

  const auto empty = fresh_dir("empty");
  r = run_cli("analyze '" + empty.string() + "'");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.err.rfind("error: io_error: no logs found", 0), 0u) << r.err;

  std::ofstream(empty / "bad.json") << "{\"scenes\": [}";
  r = run_cli("ingest '" + (empty / "bad.json").string() + "'");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("parse_error"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

TEST(CliPipeline, GenerateSimulateAnalyze) {
  const auto dir = fresh_dir("pipeline");
  const auto data = dir / "data.json", logs = dir / "logs", csv = dir / "out.csv";
  auto r = run_cli("generate --scenes 20 --seed 3 -o '" + data.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  r = run_cli("ingest --filter '" + data.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;

  r = run_cli("simulate --dataset '" + data.string() + "' --group NE --group SP --policy prior --policy explanation" +
              " --subjects 3 --trials 12 --seed 5 -o '" + logs.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  int files = 0;
  for (const auto& e : fs::directory_iterator(logs)) files += e.path().extension() == ".jsonl";
  EXPECT_EQ(files, 6);

  r = run_cli("analyze --json --csv '" + csv.string() + "' '" + logs.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto report = nlohmann::json::parse(r.out);
  EXPECT_EQ(report["sessions"], 6);
  EXPECT_EQ(compare_report(report, recount_directory(logs)), "");
  const auto rows = slurp(csv);
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), report["trials"].get<int>() + 1);

  r = run_cli("analyze '" + logs.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("prediction accuracy"), std::string::npos);

  r = run_cli("demo --group SE");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto demo = nlohmann::json::parse(r.out);
  EXPECT_EQ(demo["group"], "SE");
  EXPECT_TRUE(demo.contains("bundle"));
}
