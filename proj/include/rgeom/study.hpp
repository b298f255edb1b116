#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgeom/geometry.hpp"
#include "rgeom/traj_store.hpp"
#include "rgeom/types.hpp"

namespace rgeom {

// ---- phases -----------------------------------------------------------------

enum class Phase { Crystalline, Liquid, Lattice };

std::string to_string(Phase phase);
Phase phase_from_string(const std::string& name);

struct PhaseThresholds {
  double silhouette = 0.35;  // s*: Lattice at or above
  double alignment = 0.90;   // a*: Crystalline needs alignment at or above
  double gl_ratio = 1.5;     // g*: Crystalline needs G/L at or below

  bool operator==(const PhaseThresholds&) const = default;
};

struct PhaseLabel {
  Phase phase = Phase::Liquid;
  double alignment_mean = 0.0;
  double silhouette = 0.0;
  double gl_ratio = 0.0;
  PhaseThresholds thresholds;

  bool operator==(const PhaseLabel&) const = default;
};

/// Lattice if silhouette >= s*; else Crystalline if alignment >= a* and
/// gl_ratio <= g*; else Liquid. Inputs must be finite.
PhaseLabel classify_phase(double alignment_mean, double silhouette, double gl_ratio,
                          const PhaseThresholds& thresholds = {});

// ---- condition analysis -----------------------------------------------------

/// Which states feed a set-level statistic.
enum class PointSource { StartStates, PooledStates };

struct AnalysisParams {
  std::size_t mle_k = 10;
  std::size_t mle_subsample = 2000;
  std::size_t pca_dims = 50;
  std::vector<std::size_t> k_range = default_k_range();
  std::uint64_t seed = 0;
  double variance_threshold = kVarianceThreshold;
  PointSource d95_source = PointSource::StartStates;
  PointSource mle_source = PointSource::StartStates;
  PhaseThresholds thresholds;
  KMeansOptions kmeans;

  bool operator==(const AnalysisParams&) const = default;
};

struct ClusterSummary {
  std::size_t best_k = 0;
  double silhouette = 0.0;
  std::map<std::size_t, double> scores_by_k;

  bool operator==(const ClusterSummary&) const = default;
};

/// The per-condition fingerprint. Every metric is nullable; a null metric
/// carries its reason in `null_reasons`.
struct GeometrySummary {
  Condition condition;
  std::size_t n_trajectories = 0;
  std::size_t n_valid = 0;  // at least two states

  std::optional<std::size_t> d95_global;
  std::optional<double> d95_local_median;
  std::size_t n_local = 0;
  std::optional<double> gl_ratio;
  std::optional<double> d_mle_median;
  std::optional<double> alignment_mean;
  std::optional<double> alignment_sd;
  std::optional<double> coherence_mean;
  std::size_t coherence_n_used = 0;
  std::optional<ClusterSummary> cluster;
  std::optional<double> compactness;
  std::optional<PhaseLabel> phase;

  // Per-sample scores kept for bootstrap comparison.
  std::vector<double> alignment_scores;
  std::vector<double> coherence_scores;

  std::map<std::string, std::string> null_reasons;
  std::vector<Diagnostic> diagnostics;
  AnalysisParams params;

  std::optional<double> silhouette() const;
  bool operator==(const GeometrySummary&) const = default;
};

/// Runs every geometry operation with the recorded parameters. A metric
/// whose preconditions fail is reported null with a reason; the summary is
/// always produced.
GeometrySummary analyze_condition(const TrajectorySet& set, const AnalysisParams& params = {});

// ---- comparison -------------------------------------------------------------

inline constexpr std::size_t kDefaultBootstrapReplicates = 10000;
inline constexpr double kInvariancePercent = 5.0;

struct BootstrapCI {
  double low = 0.0;
  double high = 0.0;

  bool operator==(const BootstrapCI&) const = default;
};

/// Percentile bootstrap of mean(b) - mean(a), resampling each population
/// independently; returns the 2.5% and 97.5% quantiles (linear
/// interpolation between order statistics).
BootstrapCI bootstrap_mean_delta(std::span<const double> a, std::span<const double> b, std::size_t replicates,
                                 std::uint64_t seed);

struct MetricDelta {
  std::string metric;
  std::optional<double> a;
  std::optional<double> b;
  std::optional<double> delta;          // b - a
  std::optional<double> delta_percent;  // 100 (b - a) / a
  std::optional<BootstrapCI> ci;
  std::optional<bool> invariant;  // d95 metrics: |delta_percent| <= 5

  bool operator==(const MetricDelta&) const = default;
};

struct ComparisonReport {
  Condition condition_a;
  Condition condition_b;
  std::size_t bootstrap_replicates = kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
  double ci_level = 0.95;
  std::vector<MetricDelta> metrics;
  // Phase-diagram coordinates (alignment, silhouette) and labels per side.
  std::optional<PhaseLabel> phase_a;
  std::optional<PhaseLabel> phase_b;
  std::optional<double> alignment_a, silhouette_a, alignment_b, silhouette_b;
  AnalysisParams params;

  const MetricDelta& metric(const std::string& name) const;
  bool operator==(const ComparisonReport&) const = default;
};

/// Deltas (B minus A) from two finished analyses.
ComparisonReport compare_summaries(const GeometrySummary& a, const GeometrySummary& b,
                                   std::size_t replicates = kDefaultBootstrapReplicates, std::uint64_t seed = 0);

/// Analyses both sets (concurrently) with `params`, then compares.
ComparisonReport compare_conditions(const TrajectorySet& a, const TrajectorySet& b, const AnalysisParams& params = {},
                                    std::size_t replicates = kDefaultBootstrapReplicates, std::uint64_t seed = 0);

// ---- reports ----------------------------------------------------------------

enum class ReportFormat { Json, Csv };
ReportFormat report_format_from_string(const std::string& name);

void to_json(nlohmann::json& j, const PhaseThresholds& t);
void from_json(const nlohmann::json& j, PhaseThresholds& t);
void to_json(nlohmann::json& j, const PhaseLabel& p);
void from_json(const nlohmann::json& j, PhaseLabel& p);
void to_json(nlohmann::json& j, const AnalysisParams& p);
void from_json(const nlohmann::json& j, AnalysisParams& p);
void to_json(nlohmann::json& j, const GeometrySummary& s);
void from_json(const nlohmann::json& j, GeometrySummary& s);
void to_json(nlohmann::json& j, const ComparisonReport& r);
void from_json(const nlohmann::json& j, ComparisonReport& r);

/// JSON (sorted keys, two-space indent, trailing newline) or RFC-4180 CSV
/// (CRLF line ends, header row). Summaries give one row per metric;
/// comparisons one row per metric delta.
std::string render_report(const GeometrySummary& summary, ReportFormat format);
std::string render_report(const ComparisonReport& report, ReportFormat format);
/// Dispatches on the "kind" field of a parsed report.
std::string render_report(const nlohmann::json& report, ReportFormat format);

void emit_report(const GeometrySummary& summary, ReportFormat format, const std::filesystem::path& path);
void emit_report(const ComparisonReport& report, ReportFormat format, const std::filesystem::path& path);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& value);

}  // namespace rgeom
