#pragma once

// Geometry metrics of one trajectory population before and after a rigid,
// scaling or offset transform. The transforms act on float state matrices
// directly so the comparison is not blurred by half-precision storage.

#include <cmath>
#include <string>
#include <vector>

#include "rgeom/geometry.hpp"
#include "rgeom/rng.hpp"
#include "rgeom/synthgen.hpp"

namespace rgeom::testing {

using Trajectories = std::vector<MatrixF>;

struct GeometryMetrics {
  std::size_t d95 = 0;
  double d_mle = 0.0;
  double alignment_mean = 0.0;
  double coherence_mean = 0.0;
  double silhouette = 0.0;
};

inline MatrixF starts_of(const Trajectories& trajs) {
  MatrixF out(static_cast<Eigen::Index>(trajs.size()), trajs.front().cols());
  for (std::size_t i = 0; i < trajs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = trajs[i].row(0);
  return out;
}

inline GeometryMetrics geometry_metrics(const Trajectories& trajs) {
  GeometryMetrics m;
  const MatrixF starts = starts_of(trajs);
  m.d95 = d95(starts);
  m.d_mle = mle_intrinsic_dimension(starts, {10, 2000, 7}).median;
  MatrixF disp(starts.rows(), starts.cols());
  double coh = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& h = trajs[i];
    disp.row(static_cast<Eigen::Index>(i)) = h.row(h.rows() - 1) - h.row(0);
    coh += coherence(h);
  }
  m.alignment_mean = alignment(disp).mean;
  m.coherence_mean = coh / static_cast<double>(trajs.size());
  m.silhouette = best_silhouette(starts, default_k_range(), 50, 11).silhouette;
  return m;
}

/// Random population drawn from one of the phase generators.
inline Trajectories random_population(std::uint64_t seed) {
  static const SynthKind kinds[] = {SynthKind::PhaseCrystalline, SynthKind::PhaseLattice, SynthKind::PhaseLiquid};
  SynthSpec spec;
  spec.kind = kinds[seed % 3];
  spec.ambient_dim = 24;
  spec.n_samples = 150;
  spec.traj_len = 8;
  spec.seed = seed;
  Trajectories out;
  for (auto& r : realize(spec)) out.push_back(std::move(r.states));
  return out;
}

template <class F>
Trajectories map_states(const Trajectories& trajs, F&& f) {
  Trajectories out;
  out.reserve(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) out.push_back(f(i, trajs[i].template cast<double>().eval()).template cast<float>());
  return out;
}

struct InvarianceOutcome {
  double rotation = 0.0;      // all five metrics
  double scale = 0.0;         // all five metrics
  double translation = 0.0;   // d95, d_mle, silhouette, alignment, coherence under a common offset
  double per_traj_offset = 0.0;  // alignment and coherence under per-trajectory offsets
  bool d95_exact = true;

  double worst() const { return std::max({rotation, scale, translation, per_traj_offset}); }
};

inline double max_gap(const GeometryMetrics& a, const GeometryMetrics& b) {
  return std::max({std::abs(a.d_mle - b.d_mle), std::abs(a.alignment_mean - b.alignment_mean),
                   std::abs(a.coherence_mean - b.coherence_mean), std::abs(a.silhouette - b.silhouette)});
}

inline InvarianceOutcome check_invariances(const Trajectories& trajs, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1a7, 0));
  const auto d = static_cast<std::size_t>(trajs.front().cols());
  const GeometryMetrics base = geometry_metrics(trajs);
  InvarianceOutcome out;

  const MatrixD q = random_orthonormal_frame(d, d, rng);
  const auto rotated = geometry_metrics(map_states(trajs, [&](std::size_t, const MatrixD& h) { return MatrixD(h * q); }));
  out.rotation = max_gap(base, rotated);
  out.d95_exact = out.d95_exact && rotated.d95 == base.d95;

  const double c = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
  const auto scaled = geometry_metrics(map_states(trajs, [&](std::size_t, const MatrixD& h) { return MatrixD(c * h); }));
  out.scale = max_gap(base, scaled);
  out.d95_exact = out.d95_exact && scaled.d95 == base.d95;

  Eigen::RowVectorXd offset(static_cast<Eigen::Index>(d));
  for (auto& v : offset) v = 2.0 * rng.normal();
  const auto shifted = geometry_metrics(map_states(trajs, [&](std::size_t, const MatrixD& h) {
    MatrixD o = h;
    o.rowwise() += offset;
    return o;
  }));
  out.translation = max_gap(base, shifted);
  out.d95_exact = out.d95_exact && shifted.d95 == base.d95;

  std::vector<Eigen::RowVectorXd> offsets(trajs.size(), Eigen::RowVectorXd(static_cast<Eigen::Index>(d)));
  for (auto& o : offsets)
    for (auto& v : o) v = 2.0 * rng.normal();
  const auto moved = map_states(trajs, [&](std::size_t i, const MatrixD& h) {
    MatrixD o = h;
    o.rowwise() += offsets[i];
    return o;
  });
  MatrixF disp_a(static_cast<Eigen::Index>(trajs.size()), static_cast<Eigen::Index>(d));
  MatrixF disp_b = disp_a;
  double coh_b = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    disp_a.row(r) = trajs[i].row(trajs[i].rows() - 1) - trajs[i].row(0);
    disp_b.row(r) = moved[i].row(moved[i].rows() - 1) - moved[i].row(0);
    coh_b += coherence(moved[i]);
  }
  coh_b /= static_cast<double>(trajs.size());
  out.per_traj_offset = std::max(std::abs(alignment(disp_a).mean - alignment(disp_b).mean),
                                 std::abs(base.coherence_mean - coh_b));
  return out;
}

}  // namespace rgeom::testing
