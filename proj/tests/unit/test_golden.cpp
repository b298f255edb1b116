#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json_skeleton.hpp"
#include "rgeom/study.hpp"
#include "rgeom/synthgen.hpp"

using namespace rgeom;

// Report layouts are pinned by key-skeleton files in tests/golden. Set
// RGEOM_UPDATE_GOLDEN=1 to rewrite them after an intentional format change.

namespace {

TrajectorySet golden_set(SynthKind kind, std::uint64_t seed) {
  SynthSpec spec;
  spec.kind = kind;
  spec.ambient_dim = 32;
  spec.n_samples = 120;
  spec.seed = seed;
  return TrajectorySet::from_records(synthetic_condition(spec), realize(spec));
}

void check_against_golden(const nlohmann::json& report, const std::string& name) {
  const std::string path = std::string(RGEOM_GOLDEN_DIR) + "/" + name;
  const auto skeleton = testing::json_skeleton(report);
  if (const char* update = std::getenv("RGEOM_UPDATE_GOLDEN"); update && std::string(update) == "1") {
    std::ofstream(path) << skeleton.dump(2) << "\n";
  }
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
  std::stringstream text;
  text << in.rdbuf();
  const auto golden = nlohmann::json::parse(text.str());
  for (const auto& [key, value] : golden.items()) {
    INFO("path " << key);
    REQUIRE(skeleton.contains(key));
    CHECK(skeleton[key] == value);
  }
  for (const auto& [key, value] : skeleton.items()) {
    INFO("path " << key);
    CHECK(golden.contains(key));
  }
}

}  // namespace

TEST_CASE("geometry summary layout matches the golden skeleton") {
  AnalysisParams params;
  params.seed = 5;
  const auto summary = analyze_condition(golden_set(SynthKind::PhaseLattice, 3), params);
  check_against_golden(nlohmann::json::parse(render_report(summary, ReportFormat::Json)),
                       "geometry_summary.skeleton.json");
}

TEST_CASE("comparison report layout matches the golden skeleton") {
  AnalysisParams params;
  params.seed = 5;
  const auto report = compare_conditions(golden_set(SynthKind::PhaseCrystalline, 3),
                                         golden_set(SynthKind::PhaseLiquid, 4), params, 500, 9);
  check_against_golden(nlohmann::json::parse(render_report(report, ReportFormat::Json)),
                       "comparison_report.skeleton.json");
}

TEST_CASE("csv report header is stable") {
  AnalysisParams params;
  params.seed = 5;
  const auto a = golden_set(SynthKind::PhaseCrystalline, 3);
  const auto summary_csv = render_report(analyze_condition(a, params), ReportFormat::Csv);
  CHECK(summary_csv.rfind("metric,value,null_reason\r\n", 0) == 0);
  const auto cmp_csv =
      render_report(compare_conditions(a, golden_set(SynthKind::PhaseLiquid, 4), params, 200, 9), ReportFormat::Csv);
  CHECK(cmp_csv.rfind("metric,a,b,delta,delta_percent,ci_low,ci_high,invariant\r\n", 0) == 0);
}
