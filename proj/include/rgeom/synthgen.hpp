#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgeom/rng.hpp"
#include "rgeom/traj_store.hpp"
#include "rgeom/types.hpp"

namespace rgeom {

enum class SynthKind {
  SubspaceCloud,
  BallManifold,
  Oscillator,
  ClusteredStarts,
  EndpointIdentity,
  EndpointConstant,
  EndpointLinear,
  EndpointVelocity,
  PatchTrajectories,
  AlignmentPopulation,
  PhaseCrystalline,
  PhaseLattice,
  PhaseLiquid,
};

std::string to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& name);

/// Generator parameters. Which fields matter depends on `kind`; the rest are
/// ignored. Serialised verbatim into the manifest's condition block.
struct SynthSpec {
  SynthKind kind = SynthKind::SubspaceCloud;
  std::size_t ambient_dim = 64;
  std::size_t intrinsic_dim = 5;
  std::size_t cluster_count = 5;
  double separation = 20.0;
  double target_coherence = -0.4;
  double target_alignment = 0.6;
  std::size_t n_samples = 1000;
  std::size_t traj_len = 16;
  double noise_sigma = 0.0;
  double step_norm = 1.0;
  double alpha = 3.0;
  double velocity_scale = 1.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

/// D x r matrix with orthonormal columns, Haar-distributed (QR of a Gaussian
/// matrix with the R-diagonal sign correction).
MatrixD random_orthonormal_frame(std::size_t ambient_dim, std::size_t r, Rng& rng);

struct SubspaceCloud {
  MatrixF points;
  MatrixD frame;
  std::size_t true_d95 = 0;  // valid at zero noise
};

/// Isotropic r-dimensional Gaussian embedded by a random frame, plus isotropic
/// ambient noise.
SubspaceCloud gen_subspace_cloud(std::size_t ambient_dim, std::size_t r, std::size_t n,
                                 double noise_sigma, std::uint64_t seed);

/// Uniform samples from the unit r-ball (r = 1 is a segment) embedded in R^D.
MatrixF gen_ball_manifold(std::size_t ambient_dim, std::size_t r, std::size_t n, double noise_sigma,
                          std::uint64_t seed);

/// (T+1) x D trajectory whose consecutive unit velocities have cosine exactly
/// `target_coherence`: v_{t+1} = c v_t + sqrt(1 - c^2) w_t with w_t a random
/// unit vector orthogonal to v_t. Steps have norm `step_norm`.
MatrixF gen_oscillator(std::size_t ambient_dim, std::size_t traj_len, double target_coherence,
                       double step_norm, std::uint64_t seed);

struct ClusteredStarts {
  MatrixF points;
  std::vector<int> labels;
  MatrixD centers;
};

/// k equal-size unit-sigma Gaussian clusters whose centres are pairwise at
/// least `separation` apart (separation 0 makes them coincide).
ClusteredStarts gen_clustered_starts(std::size_t ambient_dim, std::size_t k, double separation,
                                     std::size_t n, std::uint64_t seed);

struct EndpointParams {
  double alpha = 3.0;           // velocity kind: hT = h0 + alpha v0 + eps
  double noise_sigma = 0.0;     // eps
  double velocity_scale = 1.0;  // v0 = h1 - h0 ~ N(0, velocity_scale^2 I)
};

/// Triples (h0, h1, hT) with a known optimal predictor.
struct EndpointDataset {
  SynthKind kind = SynthKind::EndpointIdentity;
  MatrixF h0, h1, hT;
  /// Per-element MSE of the best predictor that sees only h0.
  double oracle_mse_h0_only = 0.0;
  /// Per-element MSE of the best predictor that also sees h1.
  double oracle_mse_with_velocity = 0.0;
  std::string description;
};

EndpointDataset gen_endpoint_dataset(SynthKind kind, std::size_t ambient_dim, std::size_t n,
                                     const EndpointParams& params, std::uint64_t seed);

/// Trajectories confined to pairwise-orthogonal `patch_dim`-dimensional
/// patches. Each visits +/- every patch axis (2 * patch_dim states). Half the
/// patches have unit amplitude and half amplitude 0.2, which pins the pooled
/// d95 at (n_patches / 2) * patch_dim and every local d95 at patch_dim.
std::vector<TrajectoryRecord> gen_patch_trajectories(std::size_t ambient_dim, std::size_t n_patches,
                                                     std::size_t patch_dim, std::uint64_t seed);

/// Single-step trajectories whose displacement cosines against the common
/// direction are uniform on [target - 0.15, target + 0.15].
std::vector<TrajectoryRecord> gen_alignment_population(std::size_t ambient_dim, std::size_t n,
                                                       double target_alignment, std::uint64_t seed);

/// Realises any spec as trajectory records (endpoint kinds become T = 2
/// trajectories h0, h1, hT).
std::vector<TrajectoryRecord> realize(const SynthSpec& spec);

/// Condition block for a synthetic set: domain "synthetic", spec in `extra`.
Condition synthetic_condition(const SynthSpec& spec);

/// realize + write_set.
void synthesize(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace rgeom
