#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rgeom/error.hpp"
#include "rgeom/geometry.hpp"
#include "rgeom/synthgen.hpp"
#include "test_util.hpp"

using namespace rgeom;
using doctest::Approx;

namespace {

std::vector<TrajectoryRecord> patch_records(std::size_t count, std::size_t states, std::size_t patch_dim,
                                            std::uint64_t seed) {
  // Each trajectory: isotropic Gaussian on its own patch_dim-dimensional affine patch.
  Rng rng(seed);
  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    const MatrixD frame = random_orthonormal_frame(32, patch_dim, rng);
    MatrixD z(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(patch_dim));
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
    TrajectoryRecord rec;
    rec.meta.id = "p" + std::to_string(i);
    rec.states = (z * frame.transpose()).cast<float>();
    rec.states.rowwise() += Eigen::RowVectorXf::Constant(32, static_cast<float>(i));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

TEST_CASE("d95 examples") {
  CHECK(d95(MatrixF::Constant(50, 8, 0.3f)) == 0);
  const auto line = gen_subspace_cloud(64, 1, 1000, 0.0, 1);
  CHECK(d95(line.points) == 1);
  const auto five = gen_subspace_cloud(64, 5, 1000, 0.0, 2);
  CHECK(d95(five.points) == 5);
  // 4 of 5 equal-variance components explain ~80%; the oracle agrees.
  const auto spectrum = pca_spectrum(five.points);
  CHECK(spectrum.head(4).sum() / spectrum.sum() < 0.9);

  CHECK_THROWS_AS(d95(MatrixF::Zero(1, 4)), UsageError);
  MatrixF bad = MatrixF::Zero(3, 2);
  bad(1, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(d95(bad), UsageError);
}

TEST_CASE("d95 matches brute-force eigendecomposition on small clouds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 10 + rng.below(190);
    const std::size_t d = 2 + rng.below(20);
    // Anisotropic cloud so thresholds are not degenerate.
    MatrixF x = testutil::gaussian_matrix(n, d, rng);
    for (Eigen::Index c = 0; c < x.cols(); ++c) x.col(c) *= static_cast<float>(1.0 / (1.0 + c));
    CHECK(d95(x) == oracle::d95(oracle::to_rows(x)));
    CHECK(d95(x, 0.8) == oracle::d95(oracle::to_rows(x), 0.8));
  }
}

TEST_CASE("N < d uses the Gram route and agrees with the oracle") {
  Rng rng(4);
  const MatrixF x = testutil::gaussian_matrix(12, 40, rng);
  CHECK(d95(x) == oracle::d95(oracle::to_rows(x)));
  const auto spectrum = pca_spectrum(x);
  const auto ref = oracle::jacobi_eigenvalues(oracle::covariance(oracle::to_rows(x)));
  for (std::size_t i = 0; i < 11; ++i) CHECK(spectrum[static_cast<Eigen::Index>(i)] * 11.0 == Approx(ref[i]).epsilon(1e-8));
}

TEST_CASE("local d95 median") {
  const auto records = patch_records(7, 20, 5, 3);
  const auto set = TrajectorySet::from_records({}, records);
  const auto all = all_indices(set);
  CHECK(local_d95_median(set, all) == 5.0);

  auto mixed = patch_records(1, 12, 3, 4);
  auto shorter = testutil::random_records(32, {4, 8}, 5);
  mixed.insert(mixed.end(), shorter.begin(), shorter.end());
  const auto one = TrajectorySet::from_records({}, mixed);
  CHECK(local_d95_median(one, all_indices(one)) == static_cast<double>(d95(one.trajectory(0))));

  const auto short_only = TrajectorySet::from_records({}, testutil::random_records(8, {3, 8, 5}, 6));
  CHECK_THROWS_AS(local_d95_median(short_only, all_indices(short_only)), UsageError);
}

TEST_CASE("gl ratio") {
  CHECK(gl_ratio(100, 100.0) == 1.0);
  CHECK(gl_ratio(274, 280.0) == Approx(0.979).epsilon(1e-3));
  CHECK_THROWS_AS(gl_ratio(5, 0.0), UsageError);
  CHECK_THROWS_AS(gl_ratio(5, -1.0), UsageError);

  // 20 patches of 5 orthogonal axes; pooled d95 = 50, every local d95 = 5.
  const auto set = TrajectorySet::from_records({}, gen_patch_trajectories(128, 20, 5, 8));
  const auto all = all_indices(set);
  MatrixF pooled(static_cast<Eigen::Index>(set.total_rows()), 128);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const MatrixF h = set.trajectory(i);
    pooled.middleRows(row, h.rows()) = h;
    row += h.rows();
  }
  CHECK(oracle::d95(oracle::to_rows(pooled)) == 50);
  CHECK(gl_ratio(static_cast<double>(d95(pooled)), local_d95_median(set, all)) == Approx(10.0).epsilon(1e-12));
}

TEST_CASE("compactness") {
  CHECK(compactness(274) == Approx(0.502).epsilon(0.002));
  CHECK(std::abs(compactness(274) - 0.502) <= 0.001);
  CHECK(std::abs(compactness(501) - 0.089) <= 0.001);
  CHECK(compactness(550) == 0.0);
  CHECK(compactness(600) < 0.0);
}

TEST_CASE("mle intrinsic dimension") {
  SUBCASE("segment in R^10") {
    const MatrixF x = gen_ball_manifold(10, 1, 2000, 0.0, 11);
    const auto r = mle_intrinsic_dimension(x, {10, 2000, 1});
    CHECK(r.median >= 0.9);
    CHECK(r.median <= 1.1);
  }
  SUBCASE("2-ball in R^16") {
    const MatrixF x = gen_ball_manifold(16, 2, 4000, 0.0, 12);
    const auto r = mle_intrinsic_dimension(x, {10, 2000, 2});
    CHECK(r.median >= 1.8);
    CHECK(r.median <= 2.2);
  }
  SUBCASE("too few points") {
    Rng rng(1);
    CHECK_THROWS_AS(mle_intrinsic_dimension(testutil::gaussian_matrix(5, 3, rng)), UsageError);
  }
  SUBCASE("duplicates are reported by id") {
    Rng rng(2);
    MatrixF x = testutil::gaussian_matrix(30, 3, rng);
    x.row(7) = x.row(3);
    const std::vector<std::string> ids = [] {
      std::vector<std::string> v;
      for (int i = 0; i < 30; ++i) v.push_back("id" + std::to_string(i));
      return v;
    }();
    try {
      mle_intrinsic_dimension(x, {10, 30, 0}, ids);
      FAIL("expected DataQualityError");
    } catch (const DataQualityError& e) {
      CHECK(e.offending() == std::vector<std::string>{"id3", "id7"});
    }
  }
  SUBCASE("matches all-pairs oracle") {
    Rng rng(3);
    const MatrixF x = testutil::gaussian_matrix(150, 6, rng);
    const auto r = mle_intrinsic_dimension(x, {10, 60, 9});
    const auto rows = oracle::to_rows(x);
    std::vector<double> ref;
    for (std::size_t a = 0; a < r.anchors.size(); ++a) {
      const double expect = oracle::mle_at(rows, r.anchors[a], 10);
      CHECK(r.per_anchor[a] == Approx(expect).epsilon(1e-9));
      ref.push_back(expect);
    }
    CHECK(r.median == Approx(oracle::median(ref)).epsilon(1e-9));
  }
}

TEST_CASE("alignment") {
  MatrixF same(4, 3);
  same.rowwise() = Eigen::RowVector3f(1, 2, 3);
  const auto s = alignment(same);
  CHECK(s.mean == Approx(1.0));
  CHECK(s.sd == Approx(0.0).epsilon(1e-12));

  MatrixF two(2, 2);
  two << 1, 0, 0, 1;
  const auto t = alignment(two);
  CHECK(t.scores[0] == Approx(std::sqrt(0.5)));
  CHECK(t.scores[1] == Approx(std::sqrt(0.5)));
  CHECK(t.mean == Approx(0.70710678));
  CHECK(t.mean_direction.norm() == Approx(1.0).epsilon(1e-12));

  Rng rng(5);
  const MatrixF iso = testutil::gaussian_matrix(10000, 512, rng);
  const auto r = alignment(iso);
  CHECK(std::abs(r.mean) < 0.05);
  double sum = 0.0;
  for (double a : r.scores) {
    CHECK(a >= -1.0);
    CHECK(a <= 1.0);
    sum += a;
  }
  CHECK(r.mean == Approx(sum / 10000.0).epsilon(1e-9));

  MatrixF zero_row = two;
  zero_row.row(1).setZero();
  const std::vector<std::string> ids{"first", "second"};
  try {
    alignment(zero_row, ids);
    FAIL("expected DataQualityError");
  } catch (const DataQualityError& e) {
    CHECK(e.offending() == std::vector<std::string>{"second"});
  }
  MatrixF cancel(2, 2);
  cancel << 1, 0, -1, 0;
  CHECK_THROWS_AS(alignment(cancel), DataQualityError);
  CHECK_THROWS_AS(alignment(MatrixF::Ones(1, 3)), UsageError);
}

TEST_CASE("coherence") {
  const Eigen::RowVectorXf u = Eigen::RowVectorXf::LinSpaced(6, 1.0f, 2.0f);
  MatrixF line(8, 6);
  for (int t = 0; t < 8; ++t) line.row(t) = static_cast<float>(t) * u;
  CHECK(coherence(line) == Approx(1.0).epsilon(1e-9));

  MatrixF zigzag(5, 6);
  for (int t = 0; t < 5; ++t) zigzag.row(t) = (t % 2 == 0) ? Eigen::RowVectorXf::Zero(6) : u;
  CHECK(coherence(zigzag) == Approx(-1.0).epsilon(1e-9));

  const MatrixF osc = gen_oscillator(64, 256, -0.4, 1.0, 13);
  const double c = coherence(osc);
  CHECK(c >= -0.45);
  CHECK(c <= -0.35);
  CHECK(c == Approx(oracle::coherence(oracle::to_rows(osc))).epsilon(1e-9));

  CHECK_THROWS_AS(coherence(line.topRows(3)), UsageError);
  MatrixF stuck = line;
  stuck.row(3) = stuck.row(2);
  CHECK_THROWS_AS(coherence(stuck), DataQualityError);
}

TEST_CASE("condition coherence skips short and degenerate trajectories") {
  std::vector<TrajectoryRecord> recs;
  TrajectoryRecord osc;
  osc.meta.id = "osc";
  osc.states = gen_oscillator(8, 30, 0.5, 1.0, 2);
  recs.push_back(osc);
  TrajectoryRecord tiny;
  tiny.meta.id = "tiny";
  tiny.states = MatrixF::Random(3, 8);
  recs.push_back(tiny);
  TrajectoryRecord stuck;
  stuck.meta.id = "stuck";
  stuck.states = MatrixF::Random(6, 8);
  stuck.states.row(4) = stuck.states.row(3);
  recs.push_back(stuck);
  const auto set = TrajectorySet::from_records({}, recs);
  const auto r = condition_coherence(set, all_indices(set));
  CHECK(r.n_used == 1);
  CHECK(r.used == IndexList{0});
  REQUIRE(r.excluded.size() == 1);
  CHECK(r.excluded[0].sample_id == "stuck");
  CHECK(r.condition_mean == Approx(0.5).epsilon(0.02));
}

TEST_CASE("silhouette and best k") {
  const std::vector<std::size_t> ks{2, 3, 4, 5, 6, 7, 8};
  SUBCASE("five planted clusters") {
    const auto cs = gen_clustered_starts(32, 5, 20.0, 1000, 21);
    const auto r = best_silhouette(cs.points, ks, 50, 1);
    CHECK(r.best_k == 5);
    CHECK(r.silhouette >= 0.9);
    CHECK(r.scores_by_k.size() == ks.size());
  }
  SUBCASE("coincident members") {
    MatrixF x(10, 4);
    for (int i = 0; i < 10; ++i) x.row(i) = Eigen::RowVector4f::Constant(i < 5 ? 0.0f : 3.0f);
    const std::vector<std::size_t> two{2};
    const auto r = best_silhouette(x, two, 50, 0);
    CHECK(r.best_k == 2);
    CHECK(r.silhouette == 1.0);
  }
  SUBCASE("single isotropic blob") {
    const auto cs = gen_clustered_starts(32, 2, 0.0, 1000, 22);
    const auto r = best_silhouette(cs.points, ks, 50, 2);
    for (const auto& [k, s] : r.scores_by_k) CHECK(s < 0.25);
  }
  SUBCASE("two separated pairs") {
    const auto cs = gen_clustered_starts(2, 2, 10.0, 8, 23);
    const std::vector<std::size_t> small{2, 3, 4};
    CHECK(best_silhouette(cs.points, small, 50, 3).best_k == 2);
  }
  SUBCASE("preconditions") {
    Rng rng(1);
    const MatrixF x = testutil::gaussian_matrix(8, 3, rng);
    CHECK_THROWS_AS(best_silhouette(x, std::vector<std::size_t>{}, 50, 0), UsageError);
    CHECK_THROWS_AS(best_silhouette(x, std::vector<std::size_t>{2, 8}, 50, 0), UsageError);
    CHECK_THROWS_AS(best_silhouette(x, std::vector<std::size_t>{1, 2}, 50, 0), UsageError);
  }
}

TEST_CASE("silhouette matches the direct O(N^2) reference") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto cs = gen_clustered_starts(6, 3, 3.0, 90 + 60 * seed, seed);
    const MatrixD x = cs.points.cast<double>();
    const auto km = kmeans(x, 3 + seed % 3, seed);
    CHECK(silhouette_score(x, km.labels) == Approx(oracle::silhouette(oracle::to_rows(x), km.labels)).epsilon(1e-9));
    // best_silhouette's cached distances agree with the reference in the reduced space.
    const std::vector<std::size_t> ks{2, 3, 4};
    const auto r = best_silhouette(cs.points, ks, 50, seed);
    const MatrixD reduced = pca_project(cs.points, 50);
    CHECK(r.silhouette == Approx(oracle::silhouette(oracle::to_rows(reduced), r.labels)).epsilon(1e-9));
  }
}

TEST_CASE("clustering is deterministic for a seed") {
  const auto cs = gen_clustered_starts(16, 4, 4.0, 300, 5);
  const std::vector<std::size_t> ks{2, 3, 4, 5};
  const auto a = best_silhouette(cs.points, ks, 10, 99);
  const auto b = best_silhouette(cs.points, ks, 10, 99);
  CHECK(a.scores_by_k == b.scores_by_k);
  CHECK(a.labels == b.labels);
}
