#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rgeom/error.hpp"
#include "rgeom/geometry.hpp"
#include "rgeom/nro.hpp"
#include "rgeom/probes.hpp"
#include "rgeom/study.hpp"
#include "rgeom/synthgen.hpp"
#include "rgeom/traj_store.hpp"

namespace py = pybind11;
using namespace rgeom;

namespace {

// JSON crosses the boundary as text; Python sees plain dicts and lists.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

AnalysisParams analysis_params(const py::object& overrides) {
  nlohmann::json j = AnalysisParams{};
  j.merge_patch(from_py(overrides));
  return j.get<AnalysisParams>();
}

TrainConfig train_config(const py::object& overrides, TrainConfig base = {}) {
  nlohmann::json j = base;
  j.merge_patch(from_py(overrides));
  return j.get<TrainConfig>();
}

}  // namespace

PYBIND11_MODULE(_rgeom, m) {
  m.doc() = "Geometry of reasoning trajectories: metrics, synthetic oracles, endpoint operators and probes.";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DataQualityError>(m, "DataQualityError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  // Malformed dicts surface as ValueError rather than a bare RuntimeError.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const nlohmann::json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  // ---- geometry on raw arrays ----------------------------------------------
  m.def("pca_spectrum", &pca_spectrum, py::arg("points"), "Covariance eigenvalues, descending.");
  m.def("d95", py::overload_cast<const MatrixF&, double>(&d95), py::arg("points"),
        py::arg("threshold") = kVarianceThreshold, "Components needed to reach the variance threshold.");
  m.def("compactness", &compactness, py::arg("d95"));
  m.def("gl_ratio", &gl_ratio, py::arg("d95_global"), py::arg("d95_local_median"));
  m.def(
      "mle_dimension",
      [](const MatrixF& points, std::size_t k, std::size_t subsample, std::uint64_t seed) {
        const auto r = mle_intrinsic_dimension(points, {k, subsample, seed});
        py::dict out;
        out["median"] = r.median;
        out["per_anchor"] = r.per_anchor;
        out["anchors"] = r.anchors;
        return out;
      },
      py::arg("points"), py::arg("k") = 10, py::arg("subsample") = 2000, py::arg("seed") = 0);
  m.def(
      "alignment",
      [](const MatrixF& displacements) {
        const auto r = alignment(displacements);
        py::dict out;
        out["mean"] = r.mean;
        out["sd"] = r.sd;
        out["scores"] = r.scores;
        out["mean_direction"] = r.mean_direction;
        return out;
      },
      py::arg("displacements"));
  m.def("coherence", &coherence, py::arg("trajectory"), "Mean cosine between consecutive steps.");
  m.def(
      "best_silhouette",
      [](const MatrixF& points, std::vector<std::size_t> k_range, std::size_t pca_dims, std::uint64_t seed) {
        const auto r = best_silhouette(points, k_range, pca_dims, seed);
        py::dict out;
        out["best_k"] = r.best_k;
        out["silhouette"] = r.silhouette;
        out["scores_by_k"] = r.scores_by_k;
        out["labels"] = r.labels;
        return out;
      },
      py::arg("points"), py::arg("k_range") = default_k_range(), py::arg("pca_dims") = 50, py::arg("seed") = 0);
  m.def(
      "classify_phase",
      [](double alignment_mean, double silhouette, double gl, const py::object& thresholds) {
        nlohmann::json t = PhaseThresholds{};
        t.merge_patch(from_py(thresholds));
        return to_py(classify_phase(alignment_mean, silhouette, gl, t.get<PhaseThresholds>()));
      },
      py::arg("alignment_mean"), py::arg("silhouette"), py::arg("gl_ratio"), py::arg("thresholds") = py::none());

  // ---- trajectory sets -------------------------------------------------------
  py::class_<TrajectorySet>(m, "TrajectorySet")
      .def_static("open", &TrajectorySet::open, py::arg("path"))
      .def("__len__", &TrajectorySet::size)
      .def_property_readonly("hidden_dim", &TrajectorySet::hidden_dim)
      .def_property_readonly("condition", [](const TrajectorySet& s) { return to_py(s.condition()); })
      .def_property_readonly("ids",
                             [](const TrajectorySet& s) {
                               std::vector<std::string> ids;
                               for (const auto& meta : s.samples()) ids.push_back(meta.id);
                               return ids;
                             })
      .def("meta", [](const TrajectorySet& s, std::size_t i) { return to_py(s.meta(i)); }, py::arg("i"))
      .def("trajectory", &TrajectorySet::trajectory, py::arg("i"), "(T+1) x d float32 states of sample i.");

  m.def(
      "write_set",
      [](const std::filesystem::path& path, const std::vector<MatrixF>& states, const py::object& condition,
         const py::object& meta) {
        const auto metas = from_py(meta);
        std::vector<TrajectoryRecord> recs(states.size());
        for (std::size_t i = 0; i < states.size(); ++i) {
          if (metas.is_array() && i < metas.size()) {
            nlohmann::json j = SampleMeta{};
            j.merge_patch(metas[i]);
            recs[i].meta = j.get<SampleMeta>();
          }
          if (recs[i].meta.id.empty()) recs[i].meta.id = "s" + std::to_string(i);
          recs[i].states = states[i];
        }
        nlohmann::json cond = Condition{};
        cond.merge_patch(from_py(condition));
        write_set(cond.get<Condition>(), recs, path);
      },
      py::arg("path"), py::arg("states"), py::arg("condition") = py::none(), py::arg("meta") = py::none(),
      "Write trajectories ((T+1) x d arrays) as a trajectory set directory.");

  m.def(
      "synthesize",
      [](const py::object& spec, const std::filesystem::path& path) { synthesize(from_py(spec).get<SynthSpec>(), path); },
      py::arg("spec"), py::arg("path"), "Generate a synthetic set from a spec dict (same keys as the CLI --spec).");
  m.def("default_synth_spec", [] { return to_py(SynthSpec{}); });

  // ---- study -----------------------------------------------------------------
  m.def(
      "analyze",
      [](const std::filesystem::path& path, const py::object& params) {
        const auto set = TrajectorySet::open(path);
        return to_py(nlohmann::json::parse(render_report(analyze_condition(set, analysis_params(params)),
                                                         ReportFormat::Json)));
      },
      py::arg("path"), py::arg("params") = py::none(), "Geometry summary of one set, as a dict.");
  m.def(
      "compare",
      [](const std::filesystem::path& a, const std::filesystem::path& b, std::size_t bootstrap, std::uint64_t seed,
         const py::object& params) {
        const auto sa = TrajectorySet::open(a);
        const auto sb = TrajectorySet::open(b);
        const auto r = compare_conditions(sa, sb, analysis_params(params), bootstrap, seed);
        return to_py(nlohmann::json::parse(render_report(r, ReportFormat::Json)));
      },
      py::arg("a"), py::arg("b"), py::arg("bootstrap") = kDefaultBootstrapReplicates, py::arg("seed") = 0,
      py::arg("params") = py::none(), "Comparison report (b minus a), as a dict.");
  m.def(
      "render_report",
      [](const py::object& report, const std::string& format) {
        return render_report(from_py(report), report_format_from_string(format));
      },
      py::arg("report"), py::arg("format") = "json");
  m.def(
      "bootstrap_mean_delta",
      [](const std::vector<double>& a, const std::vector<double>& b, std::size_t replicates, std::uint64_t seed) {
        const auto ci = bootstrap_mean_delta(a, b, replicates, seed);
        return py::make_tuple(ci.low, ci.high);
      },
      py::arg("a"), py::arg("b"), py::arg("replicates") = kDefaultBootstrapReplicates, py::arg("seed") = 0);

  // ---- endpoint operators ----------------------------------------------------
  py::class_<OperatorModel>(m, "Operator")
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_operator(p).model; }, py::arg("path"))
      .def_property_readonly("spec", [](const OperatorModel& o) { return to_py(o.spec()); })
      .def_property_readonly("parameter_count", &OperatorModel::parameter_count)
      .def(
          "forward",
          [](const OperatorModel& o, const MatrixF& h0, std::optional<MatrixF> h1) {
            return o.forward(h0, h1 ? &*h1 : nullptr);
          },
          py::arg("h0"), py::arg("h1") = py::none())
      .def(
          "parameters",
          [](const OperatorModel& o) {
            py::dict out;
            for (const auto& p : o.parameters()) out[py::str(p.name)] = p.value;
            return out;
          },
          "Parameter tensors by name, in file order.")
      .def("save", [](const OperatorModel& o, const std::filesystem::path& p) { save_operator(p, o); },
           py::arg("path"));

  m.def(
      "train_operator",
      [](const py::object& spec, const MatrixF& h0, const MatrixF& h1, const MatrixF& ht, const py::object& config,
         std::optional<std::uint64_t> init_seed) {
        auto s = from_py(spec);
        if (!s.contains("hidden_dim")) s["hidden_dim"] = h0.cols();
        nlohmann::json base = OperatorSpec{};
        base.merge_patch(s);
        auto r = train(base.get<OperatorSpec>(), EndpointData{h0, h1, ht}, train_config(config), init_seed);
        return py::make_tuple(std::move(r.model), to_py(r.report));
      },
      py::arg("spec"), py::arg("h0"), py::arg("h1"), py::arg("ht"), py::arg("config") = py::none(),
      py::arg("init_seed") = py::none(), "Train an operator; returns (Operator, report dict).");
  m.def(
      "evaluate_operator",
      [](const OperatorModel& o, const MatrixF& h0, const MatrixF& h1, const MatrixF& ht) {
        return to_py(evaluate(o, EndpointData{h0, h1, ht}));
      },
      py::arg("model"), py::arg("h0"), py::arg("h1"), py::arg("ht"));
  m.def(
      "endpoint_arrays",
      [](const std::filesystem::path& path) {
        const auto set = TrajectorySet::open(path);
        const auto d = endpoint_data(set, filter_valid(set, 2));
        return py::make_tuple(d.h0, d.h1, d.hT);
      },
      py::arg("path"), "(h0, h1, hT) for every sample with at least one generated state.");
  m.def(
      "grad_check",
      [](const py::object& spec, std::size_t probes, double eps, std::uint64_t seed) {
        nlohmann::json base = OperatorSpec{};
        base.merge_patch(from_py(spec));
        return grad_check(base.get<OperatorSpec>(), probes, eps, seed).max_relative_error;
      },
      py::arg("spec"), py::arg("probes") = 40, py::arg("eps") = 1e-4, py::arg("seed") = 0);

  // ---- probes ----------------------------------------------------------------
  m.def(
      "train_probe",
      [](const MatrixF& states, const std::vector<std::int64_t>& labels, const py::object& config) {
        const auto r = train_probe(states, labels, train_config(config, default_probe_config()));
        py::dict out;
        out["test"] = to_py(r.test);
        out["class_vocab"] = r.model.class_vocab;
        out["weight"] = r.model.weight;
        out["bias"] = r.model.bias;
        out["best_epoch"] = r.model.best_epoch;
        out["warning"] = r.model.warning ? py::cast(*r.model.warning) : py::none();
        return out;
      },
      py::arg("states"), py::arg("labels"), py::arg("config") = py::none(),
      "Linear softmax probe; returns test metrics and weights.");
  m.def(
      "answer_targets",
      [](const TrajectorySet& set) {
        const auto t = build_answer_targets(set);
        py::list excluded;
        for (const auto& d : t.excluded) excluded.append(py::make_tuple(d.sample_id, d.reason));
        return py::make_tuple(target_states(set, t), target_labels(t), excluded);
      },
      py::arg("set"), "(end states, answer tokens, [(id, reason)] for excluded samples).");
  m.def(
      "unembed_decode",
      [](const MatrixF& unembedding, const VectorF& state) { return frozen_unembed_decode(unembedding, state); },
      py::arg("unembedding"), py::arg("state"));
  m.def("read_unembedding", &read_unembedding, py::arg("path"));
  m.def("write_unembedding", &write_unembedding, py::arg("path"), py::arg("unembedding"));
}
