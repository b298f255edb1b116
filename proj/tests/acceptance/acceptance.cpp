// Acceptance run: one PASS/FAIL line per criterion on stdout, details on
// stderr. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cli_harness.hpp"
#include "invariance.hpp"
#include "oracles.hpp"
#include "rgeom/geometry.hpp"
#include "rgeom/nro.hpp"
#include "rgeom/probes.hpp"
#include "rgeom/study.hpp"
#include "rgeom/synthgen.hpp"

using namespace rgeom;

namespace {

/// Collects sub-check outcomes of one criterion.
class Criterion {
 public:
  void check(bool ok, const std::string& what) {
    std::cerr << (ok ? "  ok   " : "  FAIL ") << what << "\n";
    ok_ = ok_ && ok;
    if (!ok) failed_.push_back(what);
  }
  bool ok() const { return ok_; }
  std::string failures() const {
    std::string s;
    for (const auto& f : failed_) s += (s.empty() ? "" : "; ") + f;
    return s;
  }

 private:
  bool ok_ = true;
  std::vector<std::string> failed_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

bool within(double v, double lo, double hi) { return v >= lo && v <= hi; }

// ---------------------------------------------------------------------------

void geometry_oracles(Criterion& c) {
  for (std::size_t r : {1u, 5u, 20u}) {
    const auto cloud = gen_subspace_cloud(64, r, 1000, 0.0, 40 + r);
    const auto got = d95(cloud.points);
    c.check(got == r, "d95 of noiseless " + std::to_string(r) + "-dim cloud = " + std::to_string(got));
  }

  auto mle_case = [&](const std::string& name, const MatrixF& x, double lo, double hi, std::uint64_t seed) {
    const auto res = mle_intrinsic_dimension(x, {10, 2000, seed});
    c.check(within(res.median, lo, hi),
            name + " mle median " + fmt(res.median) + " in [" + fmt(lo) + ", " + fmt(hi) + "]");
    const auto rows = oracle::to_rows(x);
    double worst = 0.0;
    std::vector<double> ref;
    for (std::size_t a = 0; a < res.anchors.size(); ++a) {
      const double expect = oracle::mle_at(rows, res.anchors[a], 10);
      worst = std::max(worst, std::abs(res.per_anchor[a] - expect));
      ref.push_back(expect);
    }
    worst = std::max(worst, std::abs(res.median - oracle::median(ref)));
    c.check(worst <= 1e-6, name + " mle vs all-pairs oracle, max gap " + fmt(worst));
  };
  mle_case("segment", gen_ball_manifold(10, 1, 2000, 0.0, 11), 0.9, 1.1, 1);
  mle_case("2-ball in R^16", gen_ball_manifold(16, 2, 4000, 0.0, 12), 1.8, 2.2, 2);

  const Eigen::RowVectorXf u = Eigen::RowVectorXf::LinSpaced(16, -1.0f, 2.0f);
  MatrixF line(12, 16), zigzag(12, 16);
  for (int t = 0; t < 12; ++t) {
    line.row(t) = static_cast<float>(t) * u;
    zigzag.row(t) = (t % 2 == 0) ? Eigen::RowVectorXf::Zero(16) : u;
  }
  const double c_line = coherence(line), c_zig = coherence(zigzag);
  c.check(std::abs(c_line - 1.0) <= 1e-6, "coherence of a straight line " + fmt(c_line));
  c.check(std::abs(c_zig + 1.0) <= 1e-6, "coherence of perfect alternation " + fmt(c_zig));
  const double c_osc = coherence(gen_oscillator(64, 256, -0.4, 1.0, 13));
  c.check(within(c_osc, -0.45, -0.35), "oscillator(-0.4, T=256) coherence " + fmt(c_osc));

  const auto planted = gen_clustered_starts(32, 5, 20.0, 1000, 21);
  const auto best = best_silhouette(planted.points, default_k_range(), 50, 1);
  c.check(best.best_k == 5 && best.silhouette >= 0.9,
          "planted k=5 at 20 sigma: best_k " + std::to_string(best.best_k) + ", silhouette " + fmt(best.silhouette));
  double sil_gap = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto cs = gen_clustered_starts(8, 3, 3.0, 200 + 100 * seed, seed);
    const MatrixD x = cs.points.cast<double>();
    const auto km = kmeans(x, 2 + seed % 4, seed);
    sil_gap = std::max(sil_gap,
                       std::abs(silhouette_score(x, km.labels) - oracle::silhouette(oracle::to_rows(x), km.labels)));
  }
  c.check(sil_gap <= 1e-6, "silhouette vs O(N^2) reference on N <= 500, max gap " + fmt(sil_gap));

  const auto patches = TrajectorySet::from_records({}, gen_patch_trajectories(128, 20, 5, 8));
  const auto all = all_indices(patches);
  MatrixF pooled(static_cast<Eigen::Index>(patches.total_rows()), 128);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const MatrixF h = patches.trajectory(i);
    pooled.middleRows(row, h.rows()) = h;
    row += h.rows();
  }
  const double ratio = gl_ratio(static_cast<double>(d95(pooled)), local_d95_median(patches, all));
  c.check(std::abs(ratio - 10.0) <= 0.01, "G/L of 20 disjoint 5-dim patches " + fmt(ratio));
}

void anchored_arithmetic(Criterion& c) {
  c.check(std::abs(compactness(274) - 0.502) <= 0.001, "compactness(274) = " + fmt(compactness(274)));
  c.check(std::abs(compactness(501) - 0.089) <= 0.001, "compactness(501) = " + fmt(compactness(501)));
  const struct {
    double a, s, gl;
    Phase expect;
  } triples[] = {{0.94, 0.26, 0.98, Phase::Crystalline},
                 {0.63, 0.42, 1.10, Phase::Lattice},
                 {0.95, 0.05, 9.82, Phase::Liquid}};
  for (const auto& t : triples) {
    const auto got = classify_phase(t.a, t.s, t.gl).phase;
    c.check(got == t.expect, "classify(" + fmt(t.a) + ", " + fmt(t.s) + ", " + fmt(t.gl) + ") = " + to_string(got));
  }
}

void invariance_suite(Criterion& c) {
  double worst = 0.0;
  std::size_t d95_breaks = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = testing::check_invariances(testing::random_population(seed), seed);
    worst = std::max(worst, r.worst());
    d95_breaks += r.d95_exact ? 0 : 1;
  }
  c.check(d95_breaks == 0, "d95 unchanged on all 50 sets (" + std::to_string(d95_breaks) + " changed)");
  c.check(worst <= 1e-4, "max metric change over 50 sets " + fmt(worst));
}

OperatorSpec spec_for(Arch arch, std::size_t d) {
  OperatorSpec s;
  s.arch = arch;
  s.hidden_dim = d;
  return s;
}

EndpointData as_data(const EndpointDataset& ds) { return {ds.h0, ds.h1, ds.hT}; }

void operator_suite(Criterion& c) {
  TrainConfig fast;
  fast.lr = 1e-2;
  {
    const auto ds = gen_endpoint_dataset(SynthKind::EndpointIdentity, 32, 5000, {}, 7);
    const auto r = train(spec_for(Arch::Linear, 32), as_data(ds), fast);
    const double rel = r.report.test.relative_mse.value_or(INFINITY);
    c.check(rel <= 1e-6, "identity -> linear relative test MSE " + fmt(rel));
  }
  {
    const auto ds = gen_endpoint_dataset(SynthKind::EndpointLinear, 32, 5000, {}, 8);
    const auto r = train(spec_for(Arch::Linear, 32), as_data(ds), fast);
    const double rel = r.report.test.relative_mse.value_or(INFINITY);
    c.check(rel <= 1e-4, "noiseless linear (d=32, N=5000) relative test MSE " + fmt(rel));
  }
  TrainConfig medium;
  medium.lr = 3e-3;
  {
    EndpointParams p;
    p.noise_sigma = 0.5;
    const auto ds = gen_endpoint_dataset(SynthKind::EndpointConstant, 16, 10000, p, 9);
    for (Arch a : {Arch::Linear, Arch::Mlp, Arch::DeepONet, Arch::Turbo, Arch::SpectralKan}) {
      const auto r = train(spec_for(a, 16), as_data(ds), medium);
      const double gap = std::abs(r.report.test.mse - r.report.test.mean_mse) / r.report.test.mean_mse;
      c.check(gap <= 0.05, "constant target, " + to_string(a) + " within " + fmt(100 * gap) + "% of mean predictor");
    }
  }
  {
    EndpointParams p;
    p.alpha = 3.0;
    const auto ds = gen_endpoint_dataset(SynthKind::EndpointVelocity, 16, 5000, p, 10);
    double best_blind = INFINITY;
    std::string best_name;
    for (Arch a : {Arch::Linear, Arch::Mlp, Arch::DeepONet, Arch::SpectralKan}) {
      const auto r = train(spec_for(a, 16), as_data(ds), medium);
      if (r.report.test.mse < best_blind) {
        best_blind = r.report.test.mse;
        best_name = to_string(a);
      }
    }
    const double turbo = train(spec_for(Arch::Turbo, 16), as_data(ds), medium).report.test.mse;
    c.check(turbo <= 0.5 * best_blind,
            "velocity (alpha=3): turbo " + fmt(turbo) + " vs best blind " + fmt(best_blind) + " (" + best_name + ")");
  }
  {
    const double lin = grad_check(spec_for(Arch::Linear, 6), 40, 1e-6, 1).max_relative_error;
    c.check(lin <= 1e-6, "grad check linear " + fmt(lin));
    for (Arch a : {Arch::Mlp, Arch::DeepONet, Arch::Turbo, Arch::SpectralKan}) {
      auto s = spec_for(a, 6);
      s.deeponet_width = 32;
      s.deeponet_rank = 8;
      const double e = grad_check(s, 40, 1e-4, 2).max_relative_error;
      c.check(e <= 1e-3, "grad check " + to_string(a) + " " + fmt(e));
    }
  }
}

void probe_suite(Criterion& c) {
  {
    Rng rng(5);
    const std::size_t n = 2000, d = 16;
    MatrixF x(n, d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = static_cast<float>(rng.normal());
    VectorF dir(d);
    for (auto& v : dir) v = static_cast<float>(rng.normal());
    dir.normalize();
    std::vector<std::int64_t> y;
    for (std::size_t i = 0; i < n; ++i) {
      const bool second = rng.below(2) == 1;
      y.push_back(second ? 907 : 31);
      if (second) x.row(static_cast<Eigen::Index>(i)) += 10.0f * dir.transpose();
    }
    const auto r = train_probe(x, y);
    c.check(r.test.accuracy >= 0.99, "separable 2-class accuracy " + fmt(r.test.accuracy));
  }
  {
    Rng rng(7);
    const std::size_t n = 50000, d = 16;
    MatrixF x(n, d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = static_cast<float>(rng.normal());
    std::vector<std::int64_t> y;
    for (std::size_t i = 0; i < n; ++i) y.push_back(100 + static_cast<std::int64_t>(rng.below(5)));
    const auto r = train_probe(x, y);
    c.check(std::abs(r.test.lift) <= 0.03,
            "uninformative 5-class lift " + fmt(r.test.lift) + " (N=" + std::to_string(n) + ")");
  }
}

void bootstrap_coverage(Criterion& c) {
  constexpr int kReps = 200;
  int covered = 0;
  double width = 0.0;
  for (int s = 0; s < kReps; ++s) {
    const auto a = TrajectorySet::from_records(Condition{"cov", "m", "a", {}},
                                               gen_alignment_population(32, 400, 0.6, 1000 + 2 * s));
    const auto b = TrajectorySet::from_records(Condition{"cov", "m", "b", {}},
                                               gen_alignment_population(32, 400, 0.8, 1001 + 2 * s));
    const auto r = compare_conditions(a, b, {}, kDefaultBootstrapReplicates, static_cast<std::uint64_t>(s));
    const auto& ci = *r.metric("alignment_mean").ci;
    covered += (ci.low <= 0.2 && 0.2 <= ci.high) ? 1 : 0;
    width += ci.high - ci.low;
  }
  const double rate = static_cast<double>(covered) / kReps;
  c.check(within(rate, 0.90, 0.99), "coverage of +0.2 over " + std::to_string(kReps) + " seeds " + fmt(rate) +
                                        ", mean width " + fmt(width / kReps));
}

void cli_determinism(Criterion& c) {
  const auto work = std::filesystem::temp_directory_path() / ("rgeom-acceptance-" + std::to_string(::getpid()));
  std::ostringstream log;
  const int failures = testing::cli_determinism(RGEOM_CLI_PATH, work, log);
  std::cerr << log.str();
  c.check(failures == 0, "rerun of every command is byte-identical (" + std::to_string(failures) + " failing)");
  std::error_code ec;
  std::filesystem::remove_all(work, ec);
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<void(Criterion&)>> criteria[] = {
      {"Geometry oracle suite", geometry_oracles},
      {"Anchored arithmetic (compactness, phase triples)", anchored_arithmetic},
      {"Invariance suite (rotation/translation/scale, 50 sets)", invariance_suite},
      {"Operator suite", operator_suite},
      {"Probe suite", probe_suite},
      {"Bootstrap coverage", bootstrap_coverage},
      {"CLI determinism", cli_determinism},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    std::cerr << name << "\n";
    Criterion c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      run(c);
    } catch (const std::exception& e) {
      c.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (c.ok() ? "PASS " : "FAIL ") << name << " [" << fmt(secs) << " s]";
    if (!c.ok()) std::cout << " -- " << c.failures();
    std::cout << std::endl;
    failed += c.ok() ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
