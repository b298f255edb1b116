#include "rgeom/study.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "rgeom/error.hpp"
#include "rgeom/rng.hpp"

namespace rgeom {

namespace {

constexpr int kReportVersion = 1;

const char* source_name(PointSource s) { return s == PointSource::StartStates ? "start_states" : "pooled_states"; }

PointSource source_from(const std::string& name) {
  if (name == "start_states") return PointSource::StartStates;
  if (name == "pooled_states") return PointSource::PooledStates;
  throw FormatError("unknown point source '" + name + "'");
}

/// Rows of every selected trajectory stacked, with "id#t" labels.
MatrixF pooled_states(const TrajectorySet& set, std::span<const Index> indices, std::vector<std::string>& ids) {
  std::size_t rows = 0;
  for (const auto i : indices) rows += set.meta(i).n_states();
  MatrixF out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(set.hidden_dim()));
  Eigen::Index r = 0;
  for (const auto i : indices) {
    const MatrixF t = set.trajectory(i);
    out.middleRows(r, t.rows()) = t;
    for (Eigen::Index k = 0; k < t.rows(); ++k) ids.push_back(set.meta(i).id + "#" + std::to_string(k));
    r += t.rows();
  }
  return out;
}

MatrixF source_points(const TrajectorySet& set, std::span<const Index> indices, PointSource source,
                      std::vector<std::string>& ids) {
  if (source == PointSource::PooledStates) return pooled_states(set, indices, ids);
  for (const auto i : indices) ids.push_back(set.meta(i).id);
  return start_states(set, indices);
}

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
nlohmann::json nullable(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> read_nullable(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

std::string csv_value(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

}  // namespace

// ---- phases -----------------------------------------------------------------

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::Crystalline:
      return "Crystalline";
    case Phase::Liquid:
      return "Liquid";
    case Phase::Lattice:
      return "Lattice";
  }
  return "Liquid";
}

Phase phase_from_string(const std::string& name) {
  for (Phase p : {Phase::Crystalline, Phase::Liquid, Phase::Lattice})
    if (to_string(p) == name) return p;
  throw FormatError("unknown phase '" + name + "'");
}

PhaseLabel classify_phase(double alignment_mean, double silhouette, double gl_ratio,
                          const PhaseThresholds& thresholds) {
  if (!std::isfinite(alignment_mean) || !std::isfinite(silhouette) || !std::isfinite(gl_ratio)) {
    throw UsageError("classify_phase: inputs must be finite");
  }
  PhaseLabel label{Phase::Liquid, alignment_mean, silhouette, gl_ratio, thresholds};
  if (silhouette >= thresholds.silhouette) {
    label.phase = Phase::Lattice;
  } else if (alignment_mean >= thresholds.alignment && gl_ratio <= thresholds.gl_ratio) {
    label.phase = Phase::Crystalline;
  }
  return label;
}

// ---- analysis ---------------------------------------------------------------

std::optional<double> GeometrySummary::silhouette() const {
  if (!cluster) return std::nullopt;
  return cluster->silhouette;
}

GeometrySummary analyze_condition(const TrajectorySet& set, const AnalysisParams& params) {
  GeometrySummary s;
  s.condition = set.condition();
  s.params = params;
  s.n_trajectories = set.size();

  const IndexList valid = filter_valid(set, 2);
  s.n_valid = valid.size();
  {
    std::size_t next = 0;
    for (Index i = 0; i < set.size(); ++i) {
      if (next < valid.size() && valid[next] == i) {
        ++next;
      } else {
        s.diagnostics.push_back({set.meta(i).id, "empty generation (fewer than two states)"});
      }
    }
  }
  auto null_because = [&](const std::string& metric, const std::string& reason) { s.null_reasons[metric] = reason; };

  // Global d95 and compactness.
  if (valid.size() < 2) {
    null_because("d95_global", "fewer than two valid trajectories");
  } else {
    try {
      std::vector<std::string> ids;
      s.d95_global = d95(source_points(set, valid, params.d95_source, ids), params.variance_threshold);
    } catch (const Error& e) {
      null_because("d95_global", e.what());
    }
  }
  if (s.d95_global) {
    s.compactness = compactness(static_cast<double>(*s.d95_global));
  } else {
    null_because("compactness", "d95_global unavailable");
  }

  // Local d95 and the G/L ratio.
  for (const auto i : valid) s.n_local += set.meta(i).n_states() >= kLocalPcaMinStates;
  if (s.n_local == 0) {
    null_because("d95_local_median", "no trajectory has at least " + std::to_string(kLocalPcaMinStates) + " states");
  } else {
    try {
      s.d95_local_median = local_d95_median(set, valid, params.variance_threshold);
    } catch (const Error& e) {
      null_because("d95_local_median", e.what());
    }
  }
  if (!s.d95_global || !s.d95_local_median) {
    null_because("gl_ratio", "needs both global and local d95");
  } else if (!(*s.d95_local_median > 0.0)) {
    null_because("gl_ratio", "local d95 median is zero");
  } else {
    s.gl_ratio = gl_ratio(static_cast<double>(*s.d95_global), *s.d95_local_median);
  }

  // Intrinsic dimension.
  try {
    std::vector<std::string> ids;
    const MatrixF pts = source_points(set, valid, params.mle_source, ids);
    MleOptions opts;
    opts.k = params.mle_k;
    opts.subsample = params.mle_subsample;
    opts.seed = params.seed;
    s.d_mle_median = mle_intrinsic_dimension(pts, opts, ids).median;
  } catch (const DataQualityError& e) {
    std::string reason = e.what();
    if (!e.offending().empty()) {
      reason += " [";
      for (std::size_t k = 0; k < e.offending().size(); ++k) reason += (k ? ", " : "") + e.offending()[k];
      reason += "]";
    }
    null_because("d_mle_median", reason);
  } catch (const Error& e) {
    null_because("d_mle_median", e.what());
  }

  // Alignment, after dropping zero-norm displacements.
  {
    IndexList kept;
    std::vector<std::string> ids;
    if (!valid.empty()) {
      const MatrixF disp = displacements(set, valid);
      for (std::size_t r = 0; r < valid.size(); ++r) {
        if (disp.row(static_cast<Eigen::Index>(r)).cast<double>().squaredNorm() > 0.0) {
          kept.push_back(r);
          ids.push_back(set.meta(valid[r]).id);
        } else {
          s.diagnostics.push_back({set.meta(valid[r]).id, "zero-norm displacement"});
        }
      }
      MatrixF used(static_cast<Eigen::Index>(kept.size()), disp.cols());
      for (std::size_t r = 0; r < kept.size(); ++r) used.row(static_cast<Eigen::Index>(r)) = disp.row(static_cast<Eigen::Index>(kept[r]));
      try {
        const auto a = alignment(used, ids);
        s.alignment_mean = a.mean;
        s.alignment_sd = a.sd;
        s.alignment_scores = a.scores;
      } catch (const Error& e) {
        null_because("alignment_mean", e.what());
        null_because("alignment_sd", e.what());
      }
    } else {
      null_because("alignment_mean", "no valid trajectories");
      null_because("alignment_sd", "no valid trajectories");
    }
  }

  // Coherence.
  {
    const auto c = condition_coherence(set, valid);
    for (const auto& d : c.excluded) s.diagnostics.push_back(d);
    s.coherence_n_used = c.n_used;
    if (c.n_used == 0) {
      null_because("coherence_mean",
                   "no usable trajectory with at least " + std::to_string(kCoherenceMinStates) + " states");
    } else {
      s.coherence_mean = c.condition_mean;
      s.coherence_scores = c.per_trajectory;
    }
  }

  // Clustering of start states.
  {
    const std::size_t kmax = params.k_range.empty() ? 0 : *std::max_element(params.k_range.begin(), params.k_range.end());
    if (params.k_range.empty()) {
      null_because("silhouette", "empty k range");
    } else if (valid.size() <= kmax) {
      null_because("silhouette", "need more than " + std::to_string(kmax) + " valid trajectories, have " +
                                     std::to_string(valid.size()));
    } else {
      try {
        const auto c = best_silhouette(start_states(set, valid), params.k_range, params.pca_dims, params.seed, params.kmeans);
        s.cluster = ClusterSummary{c.best_k, c.silhouette, c.scores_by_k};
      } catch (const Error& e) {
        null_because("silhouette", e.what());
      }
    }
  }

  if (s.alignment_mean && s.cluster && s.gl_ratio) {
    s.phase = classify_phase(*s.alignment_mean, s.cluster->silhouette, *s.gl_ratio, params.thresholds);
  } else {
    null_because("phase", "needs alignment_mean, silhouette and gl_ratio");
  }
  return s;
}

// ---- comparison -------------------------------------------------------------

BootstrapCI bootstrap_mean_delta(std::span<const double> a, std::span<const double> b, std::size_t replicates,
                                 std::uint64_t seed) {
  if (a.empty() || b.empty()) throw UsageError("bootstrap: both populations must be nonempty");
  if (replicates < 2) throw UsageError("bootstrap: need at least 2 replicates");
  Rng ra(derive_seed(seed, 0xa));
  Rng rb(derive_seed(seed, 0xb));
  std::vector<double> deltas(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sa += a[ra.below(a.size())];
    for (std::size_t i = 0; i < b.size(); ++i) sb += b[rb.below(b.size())];
    deltas[r] = sb / static_cast<double>(b.size()) - sa / static_cast<double>(a.size());
  }
  std::sort(deltas.begin(), deltas.end());
  return {quantile_sorted(deltas, 0.025), quantile_sorted(deltas, 0.975)};
}

const MetricDelta& ComparisonReport::metric(const std::string& name) const {
  for (const auto& m : metrics)
    if (m.metric == name) return m;
  throw UsageError("comparison has no metric " + name);
}

ComparisonReport compare_summaries(const GeometrySummary& a, const GeometrySummary& b, std::size_t replicates,
                                   std::uint64_t seed) {
  ComparisonReport r;
  r.condition_a = a.condition;
  r.condition_b = b.condition;
  r.bootstrap_replicates = replicates;
  r.seed = seed;
  r.params = a.params;

  auto as_double = [](const std::optional<std::size_t>& v) {
    return v ? std::optional<double>(static_cast<double>(*v)) : std::nullopt;
  };
  auto add = [&](const std::string& name, std::optional<double> va, std::optional<double> vb, bool d95_metric,
                 std::span<const double> sa = {}, std::span<const double> sb = {}, std::uint64_t stream = 0) {
    MetricDelta m;
    m.metric = name;
    m.a = va;
    m.b = vb;
    if (va && vb) {
      m.delta = *vb - *va;
      if (*va != 0.0) m.delta_percent = 100.0 * (*vb - *va) / *va;
      if (d95_metric && m.delta_percent) m.invariant = std::abs(*m.delta_percent) <= kInvariancePercent;
      if (!sa.empty() && !sb.empty()) m.ci = bootstrap_mean_delta(sa, sb, replicates, derive_seed(seed, stream));
    }
    r.metrics.push_back(std::move(m));
  };
  add("d95_global", as_double(a.d95_global), as_double(b.d95_global), true);
  add("d95_local_median", a.d95_local_median, b.d95_local_median, true);
  add("gl_ratio", a.gl_ratio, b.gl_ratio, false);
  add("d_mle_median", a.d_mle_median, b.d_mle_median, false);
  add("alignment_mean", a.alignment_mean, b.alignment_mean, false, a.alignment_scores, b.alignment_scores, 1);
  add("alignment_sd", a.alignment_sd, b.alignment_sd, false);
  add("coherence_mean", a.coherence_mean, b.coherence_mean, false, a.coherence_scores, b.coherence_scores, 2);
  add("silhouette", a.silhouette(), b.silhouette(), false);
  add("compactness", a.compactness, b.compactness, false);

  r.phase_a = a.phase;
  r.phase_b = b.phase;
  r.alignment_a = a.alignment_mean;
  r.alignment_b = b.alignment_mean;
  r.silhouette_a = a.silhouette();
  r.silhouette_b = b.silhouette();
  return r;
}

ComparisonReport compare_conditions(const TrajectorySet& a, const TrajectorySet& b, const AnalysisParams& params,
                                    std::size_t replicates, std::uint64_t seed) {
  auto fa = std::async(std::launch::async, [&] { return analyze_condition(a, params); });
  GeometrySummary sb = analyze_condition(b, params);
  GeometrySummary sa = fa.get();
  return compare_summaries(sa, sb, replicates, seed);
}

// ---- serialisation ----------------------------------------------------------

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "json") return ReportFormat::Json;
  if (name == "csv") return ReportFormat::Csv;
  throw UsageError("unknown report format '" + name + "' (expected json or csv)");
}

void to_json(nlohmann::json& j, const PhaseThresholds& t) {
  j = nlohmann::json{{"silhouette", t.silhouette}, {"alignment", t.alignment}, {"gl_ratio", t.gl_ratio}};
}

void from_json(const nlohmann::json& j, PhaseThresholds& t) {
  j.at("silhouette").get_to(t.silhouette);
  j.at("alignment").get_to(t.alignment);
  j.at("gl_ratio").get_to(t.gl_ratio);
}

void to_json(nlohmann::json& j, const PhaseLabel& p) {
  j = nlohmann::json{{"phase", to_string(p.phase)},
                     {"alignment_mean", p.alignment_mean},
                     {"silhouette", p.silhouette},
                     {"gl_ratio", p.gl_ratio},
                     {"thresholds", p.thresholds}};
}

void from_json(const nlohmann::json& j, PhaseLabel& p) {
  p.phase = phase_from_string(j.at("phase").get<std::string>());
  j.at("alignment_mean").get_to(p.alignment_mean);
  j.at("silhouette").get_to(p.silhouette);
  j.at("gl_ratio").get_to(p.gl_ratio);
  j.at("thresholds").get_to(p.thresholds);
}

void to_json(nlohmann::json& j, const AnalysisParams& p) {
  j = nlohmann::json{{"mle_k", p.mle_k},
                     {"mle_subsample", p.mle_subsample},
                     {"pca_dims", p.pca_dims},
                     {"k_range", p.k_range},
                     {"seed", p.seed},
                     {"variance_threshold", p.variance_threshold},
                     {"d95_source", source_name(p.d95_source)},
                     {"mle_source", source_name(p.mle_source)},
                     {"thresholds", p.thresholds},
                     {"kmeans",
                      {{"restarts", p.kmeans.restarts},
                       {"max_iterations", p.kmeans.max_iterations},
                       {"tolerance", p.kmeans.tolerance}}}};
}

void from_json(const nlohmann::json& j, AnalysisParams& p) {
  j.at("mle_k").get_to(p.mle_k);
  j.at("mle_subsample").get_to(p.mle_subsample);
  j.at("pca_dims").get_to(p.pca_dims);
  j.at("k_range").get_to(p.k_range);
  j.at("seed").get_to(p.seed);
  j.at("variance_threshold").get_to(p.variance_threshold);
  p.d95_source = source_from(j.at("d95_source").get<std::string>());
  p.mle_source = source_from(j.at("mle_source").get<std::string>());
  j.at("thresholds").get_to(p.thresholds);
  const auto& k = j.at("kmeans");
  k.at("restarts").get_to(p.kmeans.restarts);
  k.at("max_iterations").get_to(p.kmeans.max_iterations);
  k.at("tolerance").get_to(p.kmeans.tolerance);
}

void to_json(nlohmann::json& j, const GeometrySummary& s) {
  nlohmann::json by_k = nlohmann::json::object();
  if (s.cluster)
    for (const auto& [k, v] : s.cluster->scores_by_k) by_k[std::to_string(k)] = v;
  nlohmann::json diags = nlohmann::json::array();
  for (const auto& d : s.diagnostics) diags.push_back({{"sample_id", d.sample_id}, {"reason", d.reason}});

  j = nlohmann::json::object();
  j["kind"] = "geometry_summary";
  j["format_version"] = kReportVersion;
  j["condition"] = s.condition;
  j["n_trajectories"] = s.n_trajectories;
  j["n_valid"] = s.n_valid;
  j["metrics"] = {{"d95_global", nullable(s.d95_global)},
                  {"d95_local_median", nullable(s.d95_local_median)},
                  {"n_local", s.n_local},
                  {"gl_ratio", nullable(s.gl_ratio)},
                  {"d_mle_median", nullable(s.d_mle_median)},
                  {"alignment_mean", nullable(s.alignment_mean)},
                  {"alignment_sd", nullable(s.alignment_sd)},
                  {"coherence_mean", nullable(s.coherence_mean)},
                  {"coherence_n_used", s.coherence_n_used},
                  {"silhouette", nullable(s.silhouette())},
                  {"best_k", s.cluster ? nlohmann::json(s.cluster->best_k) : nlohmann::json(nullptr)},
                  {"silhouette_by_k", std::move(by_k)},
                  {"compactness", nullable(s.compactness)}};
  j["phase"] = nullable(s.phase);
  j["phase_coordinates"] = {{"alignment", nullable(s.alignment_mean)}, {"silhouette", nullable(s.silhouette())}};
  j["null_reasons"] = s.null_reasons;
  j["diagnostics"] = std::move(diags);
  j["per_sample"] = {{"alignment", s.alignment_scores}, {"coherence", s.coherence_scores}};
  j["params"] = s.params;
}

void from_json(const nlohmann::json& j, GeometrySummary& s) {
  try {
    if (j.at("kind").get<std::string>() != "geometry_summary") throw FormatError("not a geometry summary");
    s = GeometrySummary{};
    j.at("condition").get_to(s.condition);
    j.at("n_trajectories").get_to(s.n_trajectories);
    j.at("n_valid").get_to(s.n_valid);
    const auto& m = j.at("metrics");
    s.d95_global = read_nullable<std::size_t>(m, "d95_global");
    s.d95_local_median = read_nullable<double>(m, "d95_local_median");
    m.at("n_local").get_to(s.n_local);
    s.gl_ratio = read_nullable<double>(m, "gl_ratio");
    s.d_mle_median = read_nullable<double>(m, "d_mle_median");
    s.alignment_mean = read_nullable<double>(m, "alignment_mean");
    s.alignment_sd = read_nullable<double>(m, "alignment_sd");
    s.coherence_mean = read_nullable<double>(m, "coherence_mean");
    m.at("coherence_n_used").get_to(s.coherence_n_used);
    if (const auto sil = read_nullable<double>(m, "silhouette")) {
      ClusterSummary c;
      c.silhouette = *sil;
      m.at("best_k").get_to(c.best_k);
      for (const auto& [k, v] : m.at("silhouette_by_k").items()) c.scores_by_k[std::stoul(k)] = v.get<double>();
      s.cluster = c;
    }
    s.compactness = read_nullable<double>(m, "compactness");
    s.phase = read_nullable<PhaseLabel>(j, "phase");
    j.at("null_reasons").get_to(s.null_reasons);
    for (const auto& d : j.at("diagnostics")) s.diagnostics.push_back({d.at("sample_id"), d.at("reason")});
    j.at("per_sample").at("alignment").get_to(s.alignment_scores);
    j.at("per_sample").at("coherence").get_to(s.coherence_scores);
    j.at("params").get_to(s.params);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed geometry summary: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const ComparisonReport& r) {
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& m : r.metrics) {
    metrics.push_back({{"metric", m.metric},
                       {"a", nullable(m.a)},
                       {"b", nullable(m.b)},
                       {"delta", nullable(m.delta)},
                       {"delta_percent", nullable(m.delta_percent)},
                       {"ci", m.ci ? nlohmann::json{{"low", m.ci->low}, {"high", m.ci->high}} : nlohmann::json(nullptr)},
                       {"invariant", nullable(m.invariant)}});
  }
  j = nlohmann::json::object();
  j["kind"] = "comparison_report";
  j["format_version"] = kReportVersion;
  j["condition_a"] = r.condition_a;
  j["condition_b"] = r.condition_b;
  j["delta_direction"] = "b_minus_a";
  j["bootstrap"] = {{"method", "percentile"}, {"replicates", r.bootstrap_replicates}, {"seed", r.seed}, {"ci_level", r.ci_level}};
  j["invariance_percent"] = kInvariancePercent;
  j["metrics"] = std::move(metrics);
  j["phase"] = {{"a", nullable(r.phase_a)}, {"b", nullable(r.phase_b)}};
  j["phase_coordinates"] = {{"a", {{"alignment", nullable(r.alignment_a)}, {"silhouette", nullable(r.silhouette_a)}}},
                            {"b", {{"alignment", nullable(r.alignment_b)}, {"silhouette", nullable(r.silhouette_b)}}}};
  j["params"] = r.params;
}

void from_json(const nlohmann::json& j, ComparisonReport& r) {
  try {
    if (j.at("kind").get<std::string>() != "comparison_report") throw FormatError("not a comparison report");
    r = ComparisonReport{};
    j.at("condition_a").get_to(r.condition_a);
    j.at("condition_b").get_to(r.condition_b);
    const auto& b = j.at("bootstrap");
    b.at("replicates").get_to(r.bootstrap_replicates);
    b.at("seed").get_to(r.seed);
    b.at("ci_level").get_to(r.ci_level);
    for (const auto& m : j.at("metrics")) {
      MetricDelta d;
      m.at("metric").get_to(d.metric);
      d.a = read_nullable<double>(m, "a");
      d.b = read_nullable<double>(m, "b");
      d.delta = read_nullable<double>(m, "delta");
      d.delta_percent = read_nullable<double>(m, "delta_percent");
      if (!m.at("ci").is_null()) d.ci = BootstrapCI{m.at("ci").at("low").get<double>(), m.at("ci").at("high").get<double>()};
      d.invariant = read_nullable<bool>(m, "invariant");
      r.metrics.push_back(std::move(d));
    }
    r.phase_a = read_nullable<PhaseLabel>(j.at("phase"), "a");
    r.phase_b = read_nullable<PhaseLabel>(j.at("phase"), "b");
    const auto& pc = j.at("phase_coordinates");
    r.alignment_a = read_nullable<double>(pc.at("a"), "alignment");
    r.silhouette_a = read_nullable<double>(pc.at("a"), "silhouette");
    r.alignment_b = read_nullable<double>(pc.at("b"), "alignment");
    r.silhouette_b = read_nullable<double>(pc.at("b"), "silhouette");
    j.at("params").get_to(r.params);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed comparison report: ") + e.what());
  }
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (const char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string render_report(const GeometrySummary& s, ReportFormat format) {
  if (format == ReportFormat::Json) return nlohmann::json(s).dump(2) + "\n";
  std::ostringstream out;
  auto row = [&](const std::string& metric, const std::string& value) {
    const auto it = s.null_reasons.find(metric);
    out << csv_field(metric) << ',' << csv_field(value) << ',' << csv_field(it == s.null_reasons.end() ? "" : it->second)
        << "\r\n";
  };
  out << "metric,value,null_reason\r\n";
  row("d95_global", s.d95_global ? std::to_string(*s.d95_global) : "");
  row("d95_local_median", csv_value(s.d95_local_median));
  row("gl_ratio", csv_value(s.gl_ratio));
  row("d_mle_median", csv_value(s.d_mle_median));
  row("alignment_mean", csv_value(s.alignment_mean));
  row("alignment_sd", csv_value(s.alignment_sd));
  row("coherence_mean", csv_value(s.coherence_mean));
  row("silhouette", csv_value(s.silhouette()));
  row("best_k", s.cluster ? std::to_string(s.cluster->best_k) : "");
  row("compactness", csv_value(s.compactness));
  row("phase", s.phase ? to_string(s.phase->phase) : "");
  return out.str();
}

std::string render_report(const ComparisonReport& r, ReportFormat format) {
  if (format == ReportFormat::Json) return nlohmann::json(r).dump(2) + "\n";
  std::ostringstream out;
  out << "metric,a,b,delta,delta_percent,ci_low,ci_high,invariant\r\n";
  for (const auto& m : r.metrics) {
    out << csv_field(m.metric) << ',' << csv_value(m.a) << ',' << csv_value(m.b) << ',' << csv_value(m.delta) << ','
        << csv_value(m.delta_percent) << ',' << (m.ci ? number(m.ci->low) : "") << ','
        << (m.ci ? number(m.ci->high) : "") << ',' << (m.invariant ? (*m.invariant ? "true" : "false") : "") << "\r\n";
  }
  return out.str();
}

std::string render_report(const nlohmann::json& report, ReportFormat format) {
  const std::string kind = report.is_object() && report.contains("kind") && report.at("kind").is_string()
                               ? report.at("kind").get<std::string>()
                               : "";
  if (kind == "geometry_summary") return render_report(report.get<GeometrySummary>(), format);
  if (kind == "comparison_report") return render_report(report.get<ComparisonReport>(), format);
  throw FormatError("unrecognised report kind '" + kind + "'");
}

namespace {
void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
  if (!out) throw UsageError("short write to " + path.string());
}
}  // namespace

void emit_report(const GeometrySummary& summary, ReportFormat format, const std::filesystem::path& path) {
  write_text(path, render_report(summary, format));
}

void emit_report(const ComparisonReport& report, ReportFormat format, const std::filesystem::path& path) {
  write_text(path, render_report(report, format));
}

}  // namespace rgeom
