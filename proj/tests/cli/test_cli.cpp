#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "cli_harness.hpp"
#include "test_util.hpp"

using namespace rgeom;
using testing::run_cli;

namespace {

const std::string kCli = RGEOM_CLI_PATH;

}  // namespace

TEST_CASE("every command is byte-reproducible") {
  testutil::TempDir dir("cli_det");
  std::ostringstream log;
  const int failures = testing::cli_determinism(kCli, dir.path(), log);
  INFO(log.str());
  CHECK(failures == 0);
}

TEST_CASE("exit codes distinguish usage, data and numerical failures") {
  testutil::TempDir dir("cli_exit");
  const auto d = dir.path().string();
  CHECK(run_cli(kCli, {}, dir / "none") == 1);
  CHECK(run_cli(kCli, {"analyze"}, dir / "missing_flag") == 1);
  CHECK(run_cli(kCli, {"analyze", "--in", d, "--k-range", "x"}, dir / "bad_range") == 1);
  CHECK(run_cli(kCli, {"train-op", "--in", d, "--arch", "fno", "--out", d + "/m.bin"}, dir / "bad_arch") == 1);
  CHECK(run_cli(kCli, {"analyze", "--in", d + "/absent"}, dir / "absent") == 2);
  CHECK(run_cli(kCli, {"eval-op", "--model", d + "/absent.bin", "--in", d}, dir / "absent_model") == 2);

  REQUIRE(run_cli(kCli, {"synth", "--spec", R"({"kind":"endpoint_linear","ambient_dim":8,"n_samples":200})", "--out",
                         d + "/e", "--seed", "1"}, dir / "synth") == 0);
  CHECK(run_cli(kCli, {"train-op", "--in", d + "/e", "--arch", "mlp", "--lr", "1e30", "--epochs", "2", "--out",
                       d + "/m.bin"}, dir / "diverge") == 3);
  // No answer metadata on synthetic sets: nothing to probe.
  CHECK(run_cli(kCli, {"train-probe", "--in", d + "/e", "--out", d + "/p.bin"}, dir / "probe") == 2);

  std::ofstream(d + "/broken.bin") << "RGOPER01 truncated";
  CHECK(run_cli(kCli, {"eval-op", "--model", d + "/broken.bin", "--in", d + "/e"}, dir / "broken") == 2);
  std::ofstream(d + "/not_report.json") << R"({"kind": "something_else"})";
  CHECK(run_cli(kCli, {"report", "--in", d + "/not_report.json"}, dir / "bad_report") == 2);
}

TEST_CASE("reports go to stdout when --out is omitted") {
  testutil::TempDir dir("cli_stdout");
  const auto d = dir.path().string();
  REQUIRE(run_cli(kCli, {"synth", "--spec", R"({"kind":"phase_liquid","ambient_dim":8,"n_samples":60})", "--out",
                         d + "/s", "--seed", "1"}, dir / "synth") == 0);
  REQUIRE(run_cli(kCli, {"analyze", "--in", d + "/s", "--format", "csv"}, dir / "analyze") == 0);
  const auto text = testing::slurp(dir / "analyze.out");
  CHECK(text.rfind("metric,value,null_reason\r\n", 0) == 0);
  CHECK(testing::slurp(dir / "analyze.err").empty());
}
