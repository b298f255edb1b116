#include "rgeom/synthgen.hpp"

#include <Eigen/QR>

#include <array>
#include <cmath>
#include <utility>

#include "rgeom/error.hpp"

namespace rgeom {

namespace {

constexpr std::array<std::pair<SynthKind, const char*>, 13> kKindNames{{
    {SynthKind::SubspaceCloud, "subspace_cloud"},
    {SynthKind::BallManifold, "ball_manifold"},
    {SynthKind::Oscillator, "oscillator"},
    {SynthKind::ClusteredStarts, "clustered_starts"},
    {SynthKind::EndpointIdentity, "endpoint_identity"},
    {SynthKind::EndpointConstant, "endpoint_constant"},
    {SynthKind::EndpointLinear, "endpoint_linear"},
    {SynthKind::EndpointVelocity, "endpoint_velocity"},
    {SynthKind::PatchTrajectories, "patch_trajectories"},
    {SynthKind::AlignmentPopulation, "alignment_population"},
    {SynthKind::PhaseCrystalline, "phase_crystalline"},
    {SynthKind::PhaseLattice, "phase_lattice"},
    {SynthKind::PhaseLiquid, "phase_liquid"},
}};

// Seed streams; each generator draws from its own.
enum Stream : std::uint64_t {
  kFrame = 1,
  kPoints,
  kNoise,
  kSteps,
  kCenters,
  kMaps,
  kPerSample,
};

MatrixD gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
  MatrixD m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  return m;
}

VectorD unit_vector(std::size_t dim, Rng& rng) {
  VectorD v(static_cast<Eigen::Index>(dim));
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  } while (v.norm() == 0.0);
  return v.normalized();
}

bool is_endpoint(SynthKind k) {
  return k == SynthKind::EndpointIdentity || k == SynthKind::EndpointConstant ||
         k == SynthKind::EndpointLinear || k == SynthKind::EndpointVelocity;
}

TrajectoryRecord record(std::string id, MatrixF states) {
  TrajectoryRecord r;
  r.meta.id = std::move(id);
  r.meta.prompt_len = 1;
  r.states = std::move(states);
  return r;
}

std::string sample_id(std::size_t i) { return "s" + std::to_string(i); }

/// Point clouds become single-step trajectories with h1 = h0.
std::vector<TrajectoryRecord> cloud_records(const MatrixF& points) {
  std::vector<TrajectoryRecord> out;
  out.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    MatrixF s(2, points.cols());
    s.row(0) = points.row(i);
    s.row(1) = points.row(i);
    out.push_back(record(sample_id(static_cast<std::size_t>(i)), std::move(s)));
  }
  return out;
}

/// Random-walk continuation of given start states: h_{t+1} = h_t + drift/T + sigma * g.
std::vector<TrajectoryRecord> walk_records(const MatrixF& starts, std::size_t traj_len, const VectorD& drift,
                                           double step_sigma, std::uint64_t seed) {
  std::vector<TrajectoryRecord> out;
  const auto d = starts.cols();
  for (Eigen::Index i = 0; i < starts.rows(); ++i) {
    Rng rng(derive_seed(seed, kPerSample, static_cast<std::uint64_t>(i)));
    MatrixD h(static_cast<Eigen::Index>(traj_len + 1), d);
    h.row(0) = starts.row(i).cast<double>();
    for (std::size_t t = 1; t <= traj_len; ++t) {
      VectorD step = drift / static_cast<double>(traj_len);
      for (Eigen::Index j = 0; j < d; ++j) step[j] += step_sigma * rng.normal();
      h.row(static_cast<Eigen::Index>(t)) = h.row(static_cast<Eigen::Index>(t - 1)) + step.transpose();
    }
    out.push_back(record(sample_id(static_cast<std::size_t>(i)), h.cast<float>()));
  }
  return out;
}

std::vector<TrajectoryRecord> crystalline_records(const SynthSpec& s) {
  const std::size_t d = s.ambient_dim;
  const std::size_t t_len = std::max<std::size_t>(s.traj_len, 10);
  Rng frame_rng(derive_seed(s.seed, kFrame));
  const MatrixD frame = random_orthonormal_frame(d, 5, frame_rng);
  const VectorD drift_dir = unit_vector(d, frame_rng);
  constexpr double kDrift = 2.0;
  constexpr double kPatch = 1.0;

  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < s.n_samples; ++i) {
    Rng rng(derive_seed(s.seed, kPerSample, i));
    VectorD z(5);
    for (Eigen::Index j = 0; j < 5; ++j) z[j] = rng.normal();
    const VectorD h0 = frame * z;
    const MatrixD patch = random_orthonormal_frame(d, 4, rng);
    MatrixD h(static_cast<Eigen::Index>(t_len + 1), static_cast<Eigen::Index>(d));
    for (std::size_t t = 0; t <= t_len; ++t) {
      VectorD state = h0 + (kDrift * static_cast<double>(t) / static_cast<double>(t_len)) * drift_dir;
      if (t > 0 && t < t_len) {
        const auto axis = static_cast<Eigen::Index>(((t - 1) / 2) % 4);
        const double sign = (t % 2 == 1) ? 1.0 : -1.0;
        state += sign * kPatch * patch.col(axis);
      }
      for (Eigen::Index j = 0; j < state.size(); ++j) state[j] += s.noise_sigma * rng.normal();
      h.row(static_cast<Eigen::Index>(t)) = state.transpose();
    }
    out.push_back(record(sample_id(i), h.cast<float>()));
  }
  return out;
}

}  // namespace

std::string to_string(SynthKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

SynthKind synth_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kKindNames)
    if (name == n) return k;
  throw UsageError("unknown synthetic kind '" + name + "'");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"ambient_dim", s.ambient_dim},
                     {"intrinsic_dim", s.intrinsic_dim},
                     {"cluster_count", s.cluster_count},
                     {"separation", s.separation},
                     {"target_coherence", s.target_coherence},
                     {"target_alignment", s.target_alignment},
                     {"n_samples", s.n_samples},
                     {"traj_len", s.traj_len},
                     {"noise_sigma", s.noise_sigma},
                     {"step_norm", s.step_norm},
                     {"alpha", s.alpha},
                     {"velocity_scale", s.velocity_scale},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  s = SynthSpec{};
  s.kind = synth_kind_from_string(j.at("kind").get<std::string>());
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("ambient_dim", s.ambient_dim);
  read("intrinsic_dim", s.intrinsic_dim);
  read("cluster_count", s.cluster_count);
  read("separation", s.separation);
  read("target_coherence", s.target_coherence);
  read("target_alignment", s.target_alignment);
  read("n_samples", s.n_samples);
  read("traj_len", s.traj_len);
  read("noise_sigma", s.noise_sigma);
  read("step_norm", s.step_norm);
  read("alpha", s.alpha);
  read("velocity_scale", s.velocity_scale);
  read("seed", s.seed);
}

MatrixD random_orthonormal_frame(std::size_t ambient_dim, std::size_t r, Rng& rng) {
  if (r > ambient_dim) throw UsageError("orthonormal frame: r > D");
  const MatrixD g = gaussian(ambient_dim, r, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  const Eigen::MatrixXd rmat = qr.matrixQR();
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    if (rmat(c, c) < 0.0) q.col(c) *= -1.0;
  }
  return q;
}

SubspaceCloud gen_subspace_cloud(std::size_t ambient_dim, std::size_t r, std::size_t n, double noise_sigma,
                                 std::uint64_t seed) {
  if (r < 1 || r > ambient_dim) throw UsageError("subspace cloud: need 1 <= r <= D");
  if (noise_sigma < 0.0) throw UsageError("subspace cloud: negative noise");
  Rng frame_rng(derive_seed(seed, kFrame));
  Rng point_rng(derive_seed(seed, kPoints));
  Rng noise_rng(derive_seed(seed, kNoise));
  SubspaceCloud out;
  out.frame = random_orthonormal_frame(ambient_dim, r, frame_rng);
  MatrixD x = gaussian(n, r, point_rng) * out.frame.transpose();
  if (noise_sigma > 0.0) x += noise_sigma * gaussian(n, ambient_dim, noise_rng);
  out.points = x.cast<float>();
  out.true_d95 = r;
  return out;
}

MatrixF gen_ball_manifold(std::size_t ambient_dim, std::size_t r, std::size_t n, double noise_sigma,
                          std::uint64_t seed) {
  if (r < 1 || r > ambient_dim) throw UsageError("ball manifold: need 1 <= r <= D");
  Rng frame_rng(derive_seed(seed, kFrame));
  Rng point_rng(derive_seed(seed, kPoints));
  Rng noise_rng(derive_seed(seed, kNoise));
  const MatrixD frame = random_orthonormal_frame(ambient_dim, r, frame_rng);
  MatrixD z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const VectorD dir = unit_vector(r, point_rng);
    const double radius = std::pow(point_rng.uniform(), 1.0 / static_cast<double>(r));
    z.row(i) = radius * dir.transpose();
  }
  MatrixD x = z * frame.transpose();
  if (noise_sigma > 0.0) x += noise_sigma * gaussian(n, ambient_dim, noise_rng);
  return x.cast<float>();
}

MatrixF gen_oscillator(std::size_t ambient_dim, std::size_t traj_len, double target_coherence,
                       double step_norm, std::uint64_t seed) {
  if (ambient_dim < 2) throw UsageError("oscillator: need D >= 2 for an orthogonal direction");
  if (traj_len < 4) throw UsageError("oscillator: need T >= 4");
  if (!(target_coherence > -1.0 && target_coherence < 1.0)) {
    throw UsageError("oscillator: target coherence must lie in (-1, 1)");
  }
  Rng rng(derive_seed(seed, kSteps));
  const double c = target_coherence;
  const double s = std::sqrt(1.0 - c * c);
  MatrixD h(static_cast<Eigen::Index>(traj_len + 1), static_cast<Eigen::Index>(ambient_dim));
  VectorD state(static_cast<Eigen::Index>(ambient_dim));
  for (Eigen::Index j = 0; j < state.size(); ++j) state[j] = rng.normal();
  VectorD v = unit_vector(ambient_dim, rng);
  h.row(0) = state.transpose();
  for (std::size_t t = 1; t <= traj_len; ++t) {
    state += step_norm * v;
    h.row(static_cast<Eigen::Index>(t)) = state.transpose();
    VectorD w;
    do {
      w = unit_vector(ambient_dim, rng);
      w -= w.dot(v) * v;
    } while (w.norm() < 1e-8);
    w.normalize();
    v = (c * v + s * w).normalized();
  }
  return h.cast<float>();
}

ClusteredStarts gen_clustered_starts(std::size_t ambient_dim, std::size_t k, double separation, std::size_t n,
                                     std::uint64_t seed) {
  if (k < 2) throw UsageError("clustered starts: need k >= 2");
  if (n < 2 * k) throw UsageError("clustered starts: need N >= 2k");
  if (separation < 0.0) throw UsageError("clustered starts: negative separation");
  Rng center_rng(derive_seed(seed, kCenters));
  Rng point_rng(derive_seed(seed, kPoints));

  ClusteredStarts out;
  out.centers = MatrixD::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(ambient_dim));
  if (separation > 0.0) {
    constexpr std::size_t kMaxAttempts = std::size_t{1} << 20;
    std::size_t accepted = 0;
    std::size_t attempts = 0;
    while (accepted < k) {
      if (++attempts > kMaxAttempts) {
        throw UsageError("clustered starts: could not place centres " + std::to_string(separation) +
                         " apart within 2^20 attempts");
      }
      VectorD c(static_cast<Eigen::Index>(ambient_dim));
      for (Eigen::Index j = 0; j < c.size(); ++j) c[j] = separation * center_rng.normal();
      bool ok = true;
      for (std::size_t a = 0; a < accepted && ok; ++a) {
        ok = (out.centers.row(static_cast<Eigen::Index>(a)).transpose() - c).norm() >= separation;
      }
      if (ok) out.centers.row(static_cast<Eigen::Index>(accepted++)) = c.transpose();
    }
  }

  MatrixD x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(ambient_dim));
  out.labels.resize(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t size = n / k + (c < n % k ? 1 : 0);
    for (std::size_t m = 0; m < size; ++m, ++row) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        x(static_cast<Eigen::Index>(row), j) = out.centers(static_cast<Eigen::Index>(c), j) + point_rng.normal();
      }
      out.labels[row] = static_cast<int>(c);
    }
  }
  out.points = x.cast<float>();
  return out;
}

EndpointDataset gen_endpoint_dataset(SynthKind kind, std::size_t ambient_dim, std::size_t n,
                                     const EndpointParams& params, std::uint64_t seed) {
  if (!is_endpoint(kind)) throw UsageError("endpoint dataset: unknown kind " + to_string(kind));
  if (n < 10) throw UsageError("endpoint dataset: need N >= 10");
  Rng point_rng(derive_seed(seed, kPoints));
  Rng step_rng(derive_seed(seed, kSteps));
  Rng map_rng(derive_seed(seed, kMaps));
  Rng noise_rng(derive_seed(seed, kNoise));

  const MatrixD h0 = gaussian(n, ambient_dim, point_rng);
  const MatrixD v0 = params.velocity_scale * gaussian(n, ambient_dim, step_rng);
  const MatrixD eps = params.noise_sigma * gaussian(n, ambient_dim, noise_rng);
  const double noise_var = params.noise_sigma * params.noise_sigma;

  EndpointDataset out;
  out.kind = kind;
  MatrixD target;
  switch (kind) {
    case SynthKind::EndpointIdentity:
      target = h0 + eps;
      out.description = "hT = h0 + eps";
      out.oracle_mse_h0_only = noise_var;
      out.oracle_mse_with_velocity = noise_var;
      break;
    case SynthKind::EndpointConstant: {
      const MatrixD c = gaussian(1, ambient_dim, map_rng);
      target = c.replicate(static_cast<Eigen::Index>(n), 1) + eps;
      out.description = "hT = c* + eps";
      out.oracle_mse_h0_only = noise_var;
      out.oracle_mse_with_velocity = noise_var;
      break;
    }
    case SynthKind::EndpointLinear: {
      const MatrixD a = gaussian(ambient_dim, ambient_dim, map_rng) / std::sqrt(static_cast<double>(ambient_dim));
      target = h0 * a.transpose() + eps;
      out.description = "hT = A h0 + eps";
      out.oracle_mse_h0_only = noise_var;
      out.oracle_mse_with_velocity = noise_var;
      break;
    }
    default:
      target = h0 + params.alpha * v0 + eps;
      out.description = "hT = h0 + alpha (h1 - h0) + eps";
      out.oracle_mse_h0_only = params.alpha * params.alpha * params.velocity_scale * params.velocity_scale + noise_var;
      out.oracle_mse_with_velocity = noise_var;
      break;
  }
  out.h0 = h0.cast<float>();
  out.h1 = (h0 + v0).cast<float>();
  out.hT = target.cast<float>();
  return out;
}

std::vector<TrajectoryRecord> gen_patch_trajectories(std::size_t ambient_dim, std::size_t n_patches,
                                                     std::size_t patch_dim, std::uint64_t seed) {
  if (n_patches * patch_dim > ambient_dim) throw UsageError("patch trajectories: patches exceed D");
  if (patch_dim < 1) throw UsageError("patch trajectories: patch_dim must be >= 1");
  Rng rng(derive_seed(seed, kFrame));
  const MatrixD frame = random_orthonormal_frame(ambient_dim, n_patches * patch_dim, rng);
  constexpr double kMinorAmplitude = 0.2;
  std::vector<TrajectoryRecord> out;
  for (std::size_t p = 0; p < n_patches; ++p) {
    const double amplitude = p < n_patches / 2 ? 1.0 : kMinorAmplitude;
    MatrixD h(static_cast<Eigen::Index>(2 * patch_dim), static_cast<Eigen::Index>(ambient_dim));
    for (std::size_t a = 0; a < patch_dim; ++a) {
      const auto axis = frame.col(static_cast<Eigen::Index>(p * patch_dim + a));
      h.row(static_cast<Eigen::Index>(2 * a)) = amplitude * axis.transpose();
      h.row(static_cast<Eigen::Index>(2 * a + 1)) = -amplitude * axis.transpose();
    }
    out.push_back(record(sample_id(p), h.cast<float>()));
  }
  return out;
}

std::vector<TrajectoryRecord> gen_alignment_population(std::size_t ambient_dim, std::size_t n,
                                                       double target_alignment, std::uint64_t seed) {
  constexpr double kHalfWidth = 0.15;
  if (ambient_dim < 2) throw UsageError("alignment population: need D >= 2");
  if (target_alignment - kHalfWidth < -1.0 || target_alignment + kHalfWidth > 1.0) {
    throw UsageError("alignment population: target must lie in [-0.85, 0.85]");
  }
  Rng frame_rng(derive_seed(seed, kFrame));
  const VectorD direction = unit_vector(ambient_dim, frame_rng);
  std::vector<TrajectoryRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, kPerSample, i));
    const double a = rng.uniform(target_alignment - kHalfWidth, target_alignment + kHalfWidth);
    VectorD w;
    do {
      w = unit_vector(ambient_dim, rng);
      w -= w.dot(direction) * direction;
    } while (w.norm() < 1e-8);
    w.normalize();
    VectorD h0(static_cast<Eigen::Index>(ambient_dim));
    for (Eigen::Index j = 0; j < h0.size(); ++j) h0[j] = 0.1 * rng.normal();
    MatrixD h(2, static_cast<Eigen::Index>(ambient_dim));
    h.row(0) = h0.transpose();
    h.row(1) = (h0 + a * direction + std::sqrt(1.0 - a * a) * w).transpose();
    out.push_back(record(sample_id(i), h.cast<float>()));
  }
  return out;
}

std::vector<TrajectoryRecord> realize(const SynthSpec& s) {
  switch (s.kind) {
    case SynthKind::SubspaceCloud:
      return cloud_records(gen_subspace_cloud(s.ambient_dim, s.intrinsic_dim, s.n_samples, s.noise_sigma, s.seed).points);
    case SynthKind::BallManifold:
      return cloud_records(gen_ball_manifold(s.ambient_dim, s.intrinsic_dim, s.n_samples, s.noise_sigma, s.seed));
    case SynthKind::Oscillator: {
      std::vector<TrajectoryRecord> out;
      for (std::size_t i = 0; i < s.n_samples; ++i) {
        out.push_back(record(sample_id(i), gen_oscillator(s.ambient_dim, s.traj_len, s.target_coherence,
                                                          s.step_norm, derive_seed(s.seed, kPerSample, i))));
      }
      return out;
    }
    case SynthKind::ClusteredStarts: {
      const auto cs = gen_clustered_starts(s.ambient_dim, s.cluster_count, s.separation, s.n_samples, s.seed);
      auto out = cloud_records(cs.points);
      for (std::size_t i = 0; i < out.size(); ++i) out[i].meta.correct_label = std::to_string(cs.labels[i]);
      return out;
    }
    case SynthKind::EndpointIdentity:
    case SynthKind::EndpointConstant:
    case SynthKind::EndpointLinear:
    case SynthKind::EndpointVelocity: {
      const auto ds = gen_endpoint_dataset(s.kind, s.ambient_dim, s.n_samples,
                                           {s.alpha, s.noise_sigma, s.velocity_scale}, s.seed);
      std::vector<TrajectoryRecord> out;
      for (Eigen::Index i = 0; i < ds.h0.rows(); ++i) {
        MatrixF h(3, ds.h0.cols());
        h.row(0) = ds.h0.row(i);
        h.row(1) = ds.h1.row(i);
        h.row(2) = ds.hT.row(i);
        out.push_back(record(sample_id(static_cast<std::size_t>(i)), std::move(h)));
      }
      return out;
    }
    case SynthKind::PatchTrajectories:
      return gen_patch_trajectories(s.ambient_dim, s.n_samples, s.intrinsic_dim, s.seed);
    case SynthKind::AlignmentPopulation:
      return gen_alignment_population(s.ambient_dim, s.n_samples, s.target_alignment, s.seed);
    case SynthKind::PhaseCrystalline:
      return crystalline_records(s);
    case SynthKind::PhaseLattice: {
      const auto cs = gen_clustered_starts(s.ambient_dim, s.cluster_count, s.separation, s.n_samples, s.seed);
      Rng rng(derive_seed(s.seed, kFrame));
      const VectorD drift = 2.0 * unit_vector(s.ambient_dim, rng);
      return walk_records(cs.points, s.traj_len, drift, 0.1, s.seed);
    }
    case SynthKind::PhaseLiquid: {
      Rng rng(derive_seed(s.seed, kPoints));
      const MatrixF starts = gaussian(s.n_samples, s.ambient_dim, rng).cast<float>();
      return walk_records(starts, s.traj_len, VectorD::Zero(static_cast<Eigen::Index>(s.ambient_dim)), 0.3, s.seed);
    }
  }
  throw UsageError("unhandled synthetic kind");
}

Condition synthetic_condition(const SynthSpec& spec) {
  Condition c;
  c.domain = "synthetic";
  c.model = "synthgen";
  c.scale = to_string(spec.kind);
  c.extra = nlohmann::json{{"synth_spec", spec}};
  return c;
}

void synthesize(const SynthSpec& spec, const std::filesystem::path& dir) {
  const auto records = realize(spec);
  write_set(synthetic_condition(spec), records, dir, spec.ambient_dim);
}

}  // namespace rgeom
