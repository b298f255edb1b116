#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rgeom/traj_store.hpp"
#include "rgeom/types.hpp"

namespace rgeom {

inline constexpr double kVarianceThreshold = 0.95;
inline constexpr std::size_t kLocalPcaMinStates = 10;
inline constexpr std::size_t kCoherenceMinStates = 4;
inline constexpr double kCompactnessScale = 550.0;

// ---- PCA / effective dimension ---------------------------------------------

/// Eigenvalues of the sample covariance of the mean-centred cloud, descending,
/// clamped at zero. Uses the N x N Gram matrix when N < d.
VectorD pca_spectrum(const MatrixF& points);

/// Smallest m whose top-m eigenvalues reach `threshold` of the total; 0 when
/// the total is zero.
std::size_t d95_from_spectrum(const VectorD& spectrum, double threshold = kVarianceThreshold);

/// Number of principal components explaining at least `threshold` of the
/// variance. Requires N >= 2 and finite input.
std::size_t d95(const MatrixF& points, double threshold = kVarianceThreshold);

/// Projection of the centred cloud onto its top `dims` principal axes
/// (N x min(dims, rank-bound)). Column signs are arbitrary.
MatrixD pca_project(const MatrixF& points, std::size_t dims);

/// Median per-trajectory d95 over samples with at least ten states.
double local_d95_median(const TrajectorySet& set, std::span<const Index> indices,
                        double threshold = kVarianceThreshold);

/// d95_global / d95_local_median.
double gl_ratio(double d95_global, double d95_local_median);

/// 1 - d95 / 550.
double compactness(double d95_value);

// ---- intrinsic dimension ------------------------------------------------------

struct MleOptions {
  std::size_t k = 10;
  std::size_t subsample = 2000;  // anchors; capped at N
  std::uint64_t seed = 0;
};

struct MleResult {
  double median = 0.0;
  std::vector<double> per_anchor;
  IndexList anchors;
};

/// Levina-Bickel nearest-neighbour maximum-likelihood dimension at a seeded
/// subsample of anchors, summarised by the median. Throws DataQualityError
/// naming the anchors that have a zero neighbour distance (duplicates).
MleResult mle_intrinsic_dimension(const MatrixF& points, const MleOptions& options = {},
                                  std::span<const std::string> ids = {});

// ---- alignment / coherence ----------------------------------------------------

struct AlignmentStats {
  VectorD mean_direction;
  std::vector<double> scores;
  double mean = 0.0;
  double sd = 0.0;  // population
};

/// Cosine of each displacement against the normalised mean displacement.
AlignmentStats alignment(const MatrixF& displacements, std::span<const std::string> ids = {});

/// Mean cosine between consecutive velocities of one (T+1) x d trajectory.
double coherence(const MatrixF& trajectory);

struct CoherenceResult {
  std::vector<double> per_trajectory;
  IndexList used;  // sample indices behind per_trajectory
  double condition_mean = 0.0;
  std::size_t n_used = 0;
  std::vector<Diagnostic> excluded;
};

/// Coherence over every selected trajectory with >= 4 states; trajectories
/// with a repeated state are excluded with a diagnostic.
CoherenceResult condition_coherence(const TrajectorySet& set, std::span<const Index> indices);

// ---- clustering ---------------------------------------------------------------

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;  // relative inertia change

  bool operator==(const KMeansOptions&) const = default;
};

struct KMeansResult {
  std::vector<int> labels;
  MatrixD centers;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.
KMeansResult kmeans(const MatrixD& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options = {});

/// Mean silhouette with Euclidean distance. Singletons score 0; fewer than
/// two non-empty clusters scores 0.
double silhouette_score(const MatrixD& points, std::span<const int> labels);

struct ClusterResult {
  std::size_t best_k = 0;
  double silhouette = 0.0;
  std::map<std::size_t, double> scores_by_k;
  std::size_t pca_dims = 50;
  std::uint64_t seed = 0;
  std::vector<int> labels;  // assignment at best_k
};

/// PCA-reduce to min(pca_dims, d, N-1), run k-means for every k, keep the
/// maximum silhouette.
ClusterResult best_silhouette(const MatrixF& start_states, std::span<const std::size_t> k_range,
                              std::size_t pca_dims = 50, std::uint64_t seed = 0,
                              const KMeansOptions& options = {});

std::vector<std::size_t> default_k_range();

}  // namespace rgeom
