#include "rgeom/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rgeom/error.hpp"
#include "rgeom/rng.hpp"

namespace rgeom {

namespace {

std::string label_of(std::span<const std::string> ids, std::size_t i) {
  return i < ids.size() ? ids[i] : "#" + std::to_string(i);
}

void require_finite(const MatrixF& points, const char* op) {
  if (!points.allFinite()) throw UsageError(std::string(op) + ": non-finite input");
}

/// Centred copy in double. Subtracting the first row before the mean keeps a
/// cloud of identical points exactly zero.
MatrixD centred(const MatrixF& points) {
  MatrixD x = points.cast<double>();
  const Eigen::RowVectorXd anchor = x.row(0);
  x.rowwise() -= anchor;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  return x;
}

double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct Eig {
  VectorD values;   // descending
  MatrixD vectors;  // columns, matching order
};

Eig symmetric_eig(const MatrixD& m, bool want_vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      m, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  Eig out;
  const auto n = m.rows();
  out.values = solver.eigenvalues().reverse().cwiseMax(0.0);
  if (want_vectors) out.vectors = solver.eigenvectors().rowwise().reverse();
  (void)n;
  return out;
}

}  // namespace

VectorD pca_spectrum(const MatrixF& points) {
  if (points.rows() < 2) throw UsageError("d95: need at least 2 points");
  require_finite(points, "d95");
  const MatrixD x = centred(points);
  const double scale = 1.0 / static_cast<double>(x.rows() - 1);
  if (x.rows() < x.cols()) {
    const MatrixD gram = (x * x.transpose()) * scale;
    return symmetric_eig(gram, false).values;
  }
  const MatrixD cov = (x.transpose() * x) * scale;
  return symmetric_eig(cov, false).values;
}

std::size_t d95_from_spectrum(const VectorD& spectrum, double threshold) {
  const double total = spectrum.sum();
  if (!(total > 0.0)) return 0;
  const double target = threshold * total * (1.0 - 1e-9);
  double cumulative = 0.0;
  for (Eigen::Index m = 0; m < spectrum.size(); ++m) {
    cumulative += spectrum[m];
    if (cumulative >= target) return static_cast<std::size_t>(m + 1);
  }
  return static_cast<std::size_t>(spectrum.size());
}

std::size_t d95(const MatrixF& points, double threshold) {
  return d95_from_spectrum(pca_spectrum(points), threshold);
}

MatrixD pca_project(const MatrixF& points, std::size_t dims) {
  if (points.rows() < 2) throw UsageError("pca_project: need at least 2 points");
  require_finite(points, "pca_project");
  const MatrixD x = centred(points);
  const auto n = x.rows();
  const auto d = x.cols();
  const auto p = static_cast<Eigen::Index>(
      std::min<std::size_t>({dims, static_cast<std::size_t>(d), static_cast<std::size_t>(n - 1)}));
  if (n < d) {
    // X X^T = U S^2 U^T, scores = U S.
    const auto eig = symmetric_eig(x * x.transpose(), true);
    MatrixD scores = eig.vectors.leftCols(p);
    for (Eigen::Index c = 0; c < p; ++c) scores.col(c) *= std::sqrt(eig.values[c]);
    return scores;
  }
  const auto eig = symmetric_eig(x.transpose() * x, true);
  return x * eig.vectors.leftCols(p);
}

double local_d95_median(const TrajectorySet& set, std::span<const Index> indices, double threshold) {
  std::vector<double> values;
  for (const auto i : indices) {
    if (set.meta(i).n_states() < kLocalPcaMinStates) continue;
    values.push_back(static_cast<double>(d95(set.trajectory(i), threshold)));
  }
  if (values.empty()) throw UsageError("local d95: no trajectory has at least 10 states");
  return median_of(std::move(values));
}

double gl_ratio(double d95_global, double d95_local_median) {
  if (!(d95_local_median > 0.0)) throw UsageError("gl_ratio: local d95 median must be positive");
  return d95_global / d95_local_median;
}

double compactness(double d95_value) { return 1.0 - d95_value / kCompactnessScale; }

MleResult mle_intrinsic_dimension(const MatrixF& points, const MleOptions& options,
                                  std::span<const std::string> ids) {
  const auto n = static_cast<std::size_t>(points.rows());
  const std::size_t k = options.k;
  if (k < 2) throw UsageError("mle: k must be >= 2");
  if (n <= k) {
    throw UsageError("mle: need more than k = " + std::to_string(k) + " points, got " + std::to_string(n));
  }
  require_finite(points, "mle");

  const MatrixD x = points.cast<double>();
  Rng rng(options.seed);
  MleResult result;
  result.anchors = rng.sample_without_replacement(n, std::min(n, options.subsample));
  std::sort(result.anchors.begin(), result.anchors.end());

  std::vector<std::string> duplicates;
  std::vector<double> sq(n);
  result.per_anchor.reserve(result.anchors.size());
  for (const auto a : result.anchors) {
    const auto anchor = x.row(static_cast<Eigen::Index>(a));
    for (std::size_t j = 0; j < n; ++j) {
      sq[j] = j == a ? std::numeric_limits<double>::infinity()
                     : (x.row(static_cast<Eigen::Index>(j)) - anchor).squaredNorm();
    }
    std::partial_sort(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(k), sq.end());
    if (sq[0] == 0.0) {
      duplicates.push_back(label_of(ids, a));
      continue;
    }
    const double log_rk = 0.5 * std::log(sq[k - 1]);
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < k; ++j) sum += log_rk - 0.5 * std::log(sq[j]);
    result.per_anchor.push_back(static_cast<double>(k - 1) / sum);
  }
  if (!duplicates.empty()) {
    throw DataQualityError("mle: " + std::to_string(duplicates.size()) +
                               " anchor(s) have a zero-distance neighbour (duplicate points)",
                           std::move(duplicates));
  }
  result.median = median_of(result.per_anchor);
  return result;
}

AlignmentStats alignment(const MatrixF& displacements, std::span<const std::string> ids) {
  const auto n = displacements.rows();
  if (n < 2) throw UsageError("alignment: need at least 2 displacements");
  const MatrixD delta = displacements.cast<double>();
  const VectorD norms = delta.rowwise().norm();
  std::vector<std::string> zero;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(norms[i] > 0.0)) zero.push_back(label_of(ids, static_cast<std::size_t>(i)));
  }
  if (!zero.empty()) throw DataQualityError("alignment: zero-norm displacement", std::move(zero));

  const VectorD mean = delta.colwise().mean().transpose();
  const double mean_norm = mean.norm();
  if (!(mean_norm > 0.0)) throw DataQualityError("alignment: mean displacement is zero", {});

  AlignmentStats out;
  out.mean_direction = mean / mean_norm;
  out.scores.resize(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = std::clamp(delta.row(i).dot(out.mean_direction) / norms[i], -1.0, 1.0);
    out.scores[static_cast<std::size_t>(i)] = a;
    sum += a;
  }
  out.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const double a : out.scores) ss += (a - out.mean) * (a - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(n));
  return out;
}

double coherence(const MatrixF& trajectory) {
  const auto states = trajectory.rows();
  if (states < static_cast<Eigen::Index>(kCoherenceMinStates)) {
    throw UsageError("coherence: need at least 4 states, got " + std::to_string(states));
  }
  const MatrixD h = trajectory.cast<double>();
  const MatrixD v = h.bottomRows(states - 1) - h.topRows(states - 1);
  const VectorD norms = v.rowwise().norm();
  for (Eigen::Index t = 0; t < norms.size(); ++t) {
    if (!(norms[t] > 0.0)) {
      throw DataQualityError("coherence: zero-norm velocity at step " + std::to_string(t), {});
    }
  }
  double sum = 0.0;
  for (Eigen::Index t = 0; t + 1 < v.rows(); ++t) {
    sum += std::clamp(v.row(t).dot(v.row(t + 1)) / (norms[t] * norms[t + 1]), -1.0, 1.0);
  }
  return sum / static_cast<double>(v.rows() - 1);
}

CoherenceResult condition_coherence(const TrajectorySet& set, std::span<const Index> indices) {
  CoherenceResult out;
  double sum = 0.0;
  for (const auto i : indices) {
    if (set.meta(i).n_states() < kCoherenceMinStates) continue;
    try {
      const double c = coherence(set.trajectory(i));
      out.per_trajectory.push_back(c);
      out.used.push_back(i);
      sum += c;
    } catch (const DataQualityError& e) {
      out.excluded.push_back({set.meta(i).id, e.what()});
    }
  }
  out.n_used = out.per_trajectory.size();
  out.condition_mean = out.n_used > 0 ? sum / static_cast<double>(out.n_used) : 0.0;
  return out;
}

namespace {

double sq_dist(const MatrixD& a, Eigen::Index i, const MatrixD& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

KMeansResult kmeans_once(const MatrixD& x, std::size_t k, Rng& rng, const KMeansOptions& options) {
  const auto n = x.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  KMeansResult r;
  r.centers.resize(kk, x.cols());

  // k-means++ seeding
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  r.centers.row(0) = x.row(first);
  for (Eigen::Index c = 1; c < kk; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& di = d2[static_cast<std::size_t>(i)];
      di = std::min(di, sq_dist(x, i, r.centers, c - 1));
      total += di;
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    r.centers.row(c) = x.row(pick);
  }

  r.labels.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n));
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(x, i, r.centers, 0);
      for (Eigen::Index c = 1; c < kk; ++c) {
        const double dc = sq_dist(x, i, r.centers, c);
        if (dc < best_d) {
          best_d = dc;
          best = static_cast<int>(c);
        }
      }
      r.labels[static_cast<std::size_t>(i)] = best;
      dist[static_cast<std::size_t>(i)] = best_d;
      inertia += best_d;
    }
    r.inertia = inertia;
    r.iterations = iter + 1;

    MatrixD sums = MatrixD::Zero(kk, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto l = r.labels[static_cast<std::size_t>(i)];
      sums.row(l) += x.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (Eigen::Index c = 0; c < kk; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centre.
      const auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
      if (dist[static_cast<std::size_t>(far)] > 0.0) {
        r.centers.row(c) = x.row(far);
        dist[static_cast<std::size_t>(far)] = 0.0;
      }
    }

    const bool converged = previous - inertia <= options.tolerance * previous || inertia == 0.0;
    previous = inertia;
    if (converged) break;
  }

  // Final assignment against the last centres.
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = sq_dist(x, i, r.centers, 0);
    for (Eigen::Index c = 1; c < kk; ++c) {
      const double dc = sq_dist(x, i, r.centers, c);
      if (dc < best_d) {
        best_d = dc;
        best = static_cast<int>(c);
      }
    }
    r.labels[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  r.inertia = inertia;
  return r;
}

/// Silhouette given a distance callback; shared by the cached and direct paths.
template <typename Dist>
double silhouette_impl(std::size_t n, std::span<const int> labels, Dist&& dist) {
  int max_label = -1;
  for (const int l : labels) max_label = std::max(max_label, l);
  const auto k = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> counts(k, 0);
  for (const int l : labels) ++counts[static_cast<std::size_t>(l)];
  const auto nonempty = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (nonempty < 2) return 0.0;

  std::vector<double> sums(k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[static_cast<std::size_t>(labels[j])] += dist(i, j);
    }
    const auto own = static_cast<std::size_t>(labels[i]);
    if (counts[own] <= 1) continue;  // singleton: s = 0
    const double a = sums[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own && counts[c] > 0) b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

}  // namespace

KMeansResult kmeans(const MatrixD& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  if (k < 1 || k > static_cast<std::size_t>(points.rows())) {
    throw UsageError("kmeans: k must lie in [1, N]");
  }
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < std::max<std::size_t>(1, options.restarts); ++restart) {
    Rng rng(derive_seed(seed, k, restart));
    auto r = kmeans_once(points, k, rng, options);
    if (r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

double silhouette_score(const MatrixD& points, std::span<const int> labels) {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw UsageError("silhouette: label count does not match point count");
  }
  return silhouette_impl(labels.size(), labels, [&](std::size_t i, std::size_t j) {
    return std::sqrt(sq_dist(points, static_cast<Eigen::Index>(i), points, static_cast<Eigen::Index>(j)));
  });
}

std::vector<std::size_t> default_k_range() { return {2, 3, 4, 5, 6, 7, 8}; }

ClusterResult best_silhouette(const MatrixF& start_states, std::span<const std::size_t> k_range,
                              std::size_t pca_dims, std::uint64_t seed, const KMeansOptions& options) {
  if (k_range.empty()) throw UsageError("best_silhouette: empty k range");
  const auto n = static_cast<std::size_t>(start_states.rows());
  const std::size_t k_max = *std::max_element(k_range.begin(), k_range.end());
  const std::size_t k_min = *std::min_element(k_range.begin(), k_range.end());
  if (k_min < 2 || n <= k_max) {
    throw UsageError("best_silhouette: k range must lie in [2, N-1] (N = " + std::to_string(n) + ")");
  }
  const MatrixD reduced = pca_project(start_states, pca_dims);

  // Pairwise distances are shared by every k; cache them when they fit.
  constexpr std::size_t kCacheLimit = 4096;
  std::vector<double> cache;
  if (n <= kCacheLimit) {
    cache.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      cache[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = std::sqrt(
            sq_dist(reduced, static_cast<Eigen::Index>(i), reduced, static_cast<Eigen::Index>(j)));
        cache[i * n + j] = d;
        cache[j * n + i] = d;
      }
    }
  }

  ClusterResult out;
  out.pca_dims = pca_dims;
  out.seed = seed;
  out.silhouette = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> ks(k_range.begin(), k_range.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  for (const auto k : ks) {
    const auto km = kmeans(reduced, k, seed, options);
    const double s = cache.empty() ? silhouette_score(reduced, km.labels)
                                   : silhouette_impl(n, km.labels, [&](std::size_t i, std::size_t j) {
                                       return cache[i * n + j];
                                     });
    out.scores_by_k[k] = s;
    if (s > out.silhouette) {
      out.silhouette = s;
      out.best_k = k;
      out.labels = km.labels;
    }
  }
  return out;
}

}  // namespace rgeom
