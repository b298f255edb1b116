// rgeom: command-line front end for trajectory geometry analysis, operator
// training and probe decoding.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "rgeom/error.hpp"
#include "rgeom/nro.hpp"
#include "rgeom/probes.hpp"
#include "rgeom/study.hpp"
#include "rgeom/synthgen.hpp"
#include "rgeom/traj_store.hpp"

namespace {

using namespace rgeom;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
  if (!out) throw UsageError("short write to " + path);
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("invalid JSON in " + what + ": " + e.what());
  }
}

std::vector<std::size_t> parse_k_range(const std::string& text) {
  std::vector<std::size_t> out;
  try {
    if (const auto dots = text.find(".."); dots != std::string::npos) {
      const auto lo = std::stoul(text.substr(0, dots));
      const auto hi = std::stoul(text.substr(dots + 2));
      if (lo > hi) throw UsageError("empty k range " + text);
      for (auto k = lo; k <= hi; ++k) out.push_back(k);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    }
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse k range '" + text + "' (use e.g. 2..8 or 2,3,5)");
  }
  if (out.empty()) throw UsageError("empty k range");
  return out;
}

std::array<double, 3> parse_split(const std::string& text) {
  std::array<double, 3> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  try {
    while (std::getline(ss, item, ',')) {
      if (i == 3) throw UsageError("split needs exactly three fractions");
      out[i++] = std::stod(item);
    }
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse split '" + text + "'");
  }
  if (i != 3) throw UsageError("split needs exactly three fractions");
  return out;
}

PointSource parse_source(const std::string& s) {
  if (s == "start") return PointSource::StartStates;
  if (s == "pooled") return PointSource::PooledStates;
  throw UsageError("point source must be 'start' or 'pooled'");
}

/// Options shared by analyze and compare.
struct AnalysisCli {
  std::size_t k = 10;
  std::size_t subsample = 2000;
  std::size_t pca_dims = 50;
  std::string k_range = "2..8";
  std::uint64_t seed = 0;
  std::string d95_source = "start";
  std::string mle_source = "start";
  PhaseThresholds thresholds;

  void attach(CLI::App* cmd) {
    cmd->add_option("--k", k, "Nearest neighbours for the MLE estimator")->capture_default_str();
    cmd->add_option("--subsample", subsample, "MLE anchor subsample size")->capture_default_str();
    cmd->add_option("--pca-dims", pca_dims, "PCA dimensions before clustering")->capture_default_str();
    cmd->add_option("--k-range", k_range, "Cluster counts, e.g. 2..8 or 2,3,5")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for subsampling and k-means")->capture_default_str();
    cmd->add_option("--d95-source", d95_source, "start | pooled")->capture_default_str();
    cmd->add_option("--mle-source", mle_source, "start | pooled")->capture_default_str();
    cmd->add_option("--silhouette-threshold", thresholds.silhouette, "Lattice threshold")->capture_default_str();
    cmd->add_option("--alignment-threshold", thresholds.alignment, "Crystalline alignment threshold")
        ->capture_default_str();
    cmd->add_option("--gl-threshold", thresholds.gl_ratio, "Crystalline G/L threshold")->capture_default_str();
  }

  AnalysisParams params() const {
    AnalysisParams p;
    p.mle_k = k;
    p.mle_subsample = subsample;
    p.pca_dims = pca_dims;
    p.k_range = parse_k_range(k_range);
    p.seed = seed;
    p.d95_source = parse_source(d95_source);
    p.mle_source = parse_source(mle_source);
    p.thresholds = thresholds;
    return p;
  }
};

EndpointData endpoint_set(const TrajectorySet& set) {
  const auto idx = filter_valid(set, 2);
  if (idx.size() < set.size()) {
    std::cerr << "note: " << set.size() - idx.size() << " sample(s) without generated states skipped\n";
  }
  return endpoint_data(set, idx);
}

void report_exclusions(const AnswerTargets& targets) {
  std::map<std::string, std::vector<std::string>> by_reason;
  for (const auto& d : targets.excluded) by_reason[d.reason].push_back(d.sample_id);
  for (const auto& [reason, ids] : by_reason) {
    std::cerr << "excluded " << ids.size() << " sample(s): " << reason << " (e.g. " << ids.front() << ")\n";
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Reasoning-trajectory geometry toolkit"};
  app.require_subcommand(1);

  // synth
  std::string synth_spec, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic trajectory set");
  synth->add_option("--spec", synth_spec, "SynthSpec as a JSON file or inline JSON object")->required();
  synth->add_option("--out", synth_out, "Output set directory")->required();
  synth->add_option("--seed", synth_seed, "Overrides the seed given in --spec");

  // analyze
  AnalysisCli analyze_opts;
  std::string analyze_in, analyze_out, analyze_format = "json";
  auto* analyze = app.add_subcommand("analyze", "Compute the geometry summary of one condition");
  analyze->add_option("--in", analyze_in, "Trajectory set directory")->required();
  analyze->add_option("--out", analyze_out, "Report path (stdout if omitted)");
  analyze->add_option("--format", analyze_format, "json | csv")->capture_default_str();
  analyze_opts.attach(analyze);

  // compare
  AnalysisCli compare_opts;
  std::string compare_a, compare_b, compare_out, compare_format = "json";
  std::size_t bootstrap = kDefaultBootstrapReplicates;
  auto* compare = app.add_subcommand("compare", "Compare two conditions (B minus A) with bootstrap CIs");
  compare->add_option("--a", compare_a, "Baseline set directory")->required();
  compare->add_option("--b", compare_b, "Comparison set directory")->required();
  compare->add_option("--bootstrap", bootstrap, "Bootstrap replicates")->capture_default_str();
  compare->add_option("--out", compare_out, "Report path (stdout if omitted)");
  compare->add_option("--format", compare_format, "json | csv")->capture_default_str();
  compare_opts.attach(compare);

  // train-op
  std::string train_in, train_arch, train_out, train_split = "0.7,0.15,0.15", train_report;
  TrainConfig train_cfg;
  std::optional<std::uint64_t> train_init_seed;
  OperatorSpec train_spec;
  auto* train_op = app.add_subcommand("train-op", "Train an endpoint operator h0 -> hT");
  train_op->add_option("--in", train_in, "Trajectory set directory")->required();
  train_op->add_option("--arch", train_arch, "linear | mlp | deeponet | turbo | spectral-kan")->required();
  train_op->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  train_op->add_option("--batch", train_cfg.batch_size)->capture_default_str();
  train_op->add_option("--lr", train_cfg.lr)->capture_default_str();
  train_op->add_option("--weight-decay", train_cfg.weight_decay)->capture_default_str();
  train_op->add_option("--split", train_split, "train,val,test fractions")->capture_default_str();
  train_op->add_option("--seed", train_cfg.seed, "Split and shuffle seed")->capture_default_str();
  train_op->add_option("--init-seed", train_init_seed, "Parameter init seed (defaults to --seed)");
  train_op->add_option("--deeponet-width", train_spec.deeponet_width)->capture_default_str();
  train_op->add_option("--deeponet-rank", train_spec.deeponet_rank)->capture_default_str();
  train_op->add_option("--kan-modes", train_spec.kan_modes)->capture_default_str();
  train_op->add_flag("--kan-velocity", train_spec.kan_velocity, "Feed h1 - h0 to the spectral KAN");
  train_op->add_option("--out", train_out, "Model checkpoint path")->required();
  train_op->add_option("--report", train_report, "Also write the training report JSON here");

  // eval-op
  std::string eval_model, eval_in, eval_out;
  auto* eval_op = app.add_subcommand("eval-op", "Evaluate an operator checkpoint on a set");
  eval_op->add_option("--model", eval_model, "Model checkpoint")->required();
  eval_op->add_option("--in", eval_in, "Trajectory set directory")->required();
  eval_op->add_option("--out", eval_out, "Metrics JSON path (stdout if omitted)");

  // train-probe
  std::string probe_in, probe_states = "true", probe_out, probe_report;
  TrainConfig probe_cfg = default_probe_config();
  auto* train_probe_cmd = app.add_subcommand("train-probe", "Train an answer-token probe");
  train_probe_cmd->add_option("--in", probe_in, "Trajectory set directory")->required();
  train_probe_cmd->add_option("--states", probe_states, "true | predicted:<model.bin>")->capture_default_str();
  train_probe_cmd->add_option("--epochs", probe_cfg.epochs)->capture_default_str();
  train_probe_cmd->add_option("--lr", probe_cfg.lr)->capture_default_str();
  train_probe_cmd->add_option("--seed", probe_cfg.seed)->capture_default_str();
  train_probe_cmd->add_option("--out", probe_out, "Probe file path")->required();
  train_probe_cmd->add_option("--report", probe_report, "Also write the probe evaluation JSON here");

  // unembed-decode
  std::string unemb_path, unemb_in, unemb_out;
  auto* unembed = app.add_subcommand("unembed-decode", "Decode terminal states with a frozen unembedding matrix");
  unembed->add_option("--unembedding", unemb_path, "RGUNEMB1 matrix file")->required();
  unembed->add_option("--in", unemb_in, "Trajectory set directory")->required();
  unembed->add_option("--out", unemb_out, "Result JSON path (stdout if omitted)");

  // report
  std::string report_in, report_format = "json", report_out;
  auto* report = app.add_subcommand("report", "Re-render a summary or comparison report");
  report->add_option("--in", report_in, "Report JSON file")->required();
  report->add_option("--format", report_format, "json | csv")->capture_default_str();
  report->add_option("--out", report_out, "Output path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (*synth) {
    const bool inline_json = !synth_spec.empty() && synth_spec.front() == '{';
    auto spec = parse_json(inline_json ? synth_spec : read_text(synth_spec), "--spec").get<SynthSpec>();
    if (synth_seed) spec.seed = *synth_seed;
    synthesize(spec, synth_out);
  } else if (*analyze) {
    const auto format = report_format_from_string(analyze_format);
    const auto params = analyze_opts.params();
    const auto set = TrajectorySet::open(analyze_in);
    write_text(analyze_out, render_report(analyze_condition(set, params), format));
  } else if (*compare) {
    const auto format = report_format_from_string(compare_format);
    const auto params = compare_opts.params();
    const auto a = TrajectorySet::open(compare_a);
    const auto b = TrajectorySet::open(compare_b);
    write_text(compare_out, render_report(compare_conditions(a, b, params, bootstrap, compare_opts.seed), format));
  } else if (*train_op) {
    train_cfg.split = parse_split(train_split);
    train_spec.arch = arch_from_string(train_arch);
    const auto set = TrajectorySet::open(train_in);
    train_spec.hidden_dim = set.hidden_dim();
    const auto result = train(train_spec, endpoint_set(set), train_cfg, train_init_seed);
    std::cerr << "trained " << to_string(train_spec.arch) << " in " << result.report.wall_clock_seconds
              << " s; test mse " << result.report.test.mse << "\n";
    const nlohmann::json report_json = result.report;
    save_operator(train_out, result.model, {{"train_report", report_json}});
    if (!train_report.empty()) write_text(train_report, report_json.dump(2) + "\n");
  } else if (*eval_op) {
    const auto loaded = load_operator(eval_model);
    const auto set = TrajectorySet::open(eval_in);
    const auto metrics = evaluate(loaded.model, endpoint_set(set));
    const nlohmann::json out{{"spec", loaded.model.spec()}, {"metrics", metrics}};
    write_text(eval_out, out.dump(2) + "\n");
  } else if (*train_probe_cmd) {
    const auto set = TrajectorySet::open(probe_in);
    const auto targets = build_answer_targets(set);
    report_exclusions(targets);
    if (targets.targets.empty()) {
      std::vector<std::string> ids;
      for (const auto& d : targets.excluded) ids.push_back(d.sample_id);
      throw DataQualityError("no sample carries a usable answer token", std::move(ids));
    }
    MatrixF states;
    if (probe_states == "true") {
      states = target_states(set, targets);
    } else if (probe_states.rfind("predicted:", 0) == 0) {
      const auto model = load_operator(probe_states.substr(10)).model;
      IndexList idx;
      for (const auto& t : targets.targets) idx.push_back(t.sample);
      const MatrixF h0 = start_states(set, idx);
      const MatrixF h1 = first_step_states(set, idx);
      states = model.forward(h0, &h1);
    } else {
      throw UsageError("--states must be 'true' or 'predicted:<model.bin>'");
    }
    const auto labels = target_labels(targets);
    const auto result = train_probe(states, labels, probe_cfg);
    if (result.model.warning) std::cerr << "warning: " << *result.model.warning << "\n";
    // Only the model's file name is recorded so the output does not depend on
    // where the model happens to live.
    const std::string states_source =
        probe_states == "true" ? probe_states
                               : "predicted:" + std::filesystem::path(probe_states.substr(10)).filename().string();
    const nlohmann::json eval_json{{"states", states_source},
                                   {"n_labelled", labels.size()},
                                   {"n_excluded", targets.excluded.size()},
                                   {"test", result.test}};
    save_probe(probe_out, result.model, eval_json);
    if (!probe_report.empty()) write_text(probe_report, eval_json.dump(2) + "\n");
  } else if (*unembed) {
    const MatrixF u = read_unembedding(unemb_path);
    const auto set = TrajectorySet::open(unemb_in);
    const auto targets = build_answer_targets(set);
    report_exclusions(targets);
    const MatrixF states = target_states(set, targets);
    nlohmann::json decoded = nlohmann::json::array();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < targets.targets.size(); ++i) {
      const auto token = frozen_unembed_decode(u, states.row(static_cast<Eigen::Index>(i)).transpose());
      hits += static_cast<std::int64_t>(token) == targets.targets[i].token;
      decoded.push_back({{"sample_id", set.meta(targets.targets[i].sample).id},
                         {"decoded", token},
                         {"answer_token", targets.targets[i].token}});
    }
    const nlohmann::json out{
        {"n", targets.targets.size()},
        {"accuracy", targets.targets.empty() ? nlohmann::json(nullptr)
                                             : nlohmann::json(static_cast<double>(hits) / targets.targets.size())},
        {"decoded", decoded}};
    write_text(unemb_out, out.dump(2) + "\n");
  } else if (*report) {
    const auto format = report_format_from_string(report_format);
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(read_text(report_in));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("invalid report JSON: " + std::string(e.what()));
    }
    write_text(report_out, render_report(parsed, format));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rgeom::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const rgeom::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const rgeom::DataQualityError& e) {
    std::cerr << "data error: " << e.what();
    const auto& ids = e.offending();
    for (std::size_t i = 0; i < std::min<std::size_t>(ids.size(), 10); ++i) std::cerr << " " << ids[i];
    if (ids.size() > 10) std::cerr << " ... (" << ids.size() << " total)";
    std::cerr << "\n";
    return kExitData;
  } catch (const rgeom::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
