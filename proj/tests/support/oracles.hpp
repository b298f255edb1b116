#pragma once

// Reference implementations used only by tests. They deliberately avoid the
// library's code paths: plain std::vector storage, cyclic Jacobi instead of
// Eigen's solver, full sorts instead of partial ones.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

template <typename Matrix>
Rows to_rows(const Matrix& m) {
  Rows out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] = static_cast<double>(m(i, j));
  return out;
}

inline double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline std::vector<double> jacobi_eigenvalues(Rows a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = std::max(0.0, a[i][i]);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

inline Rows covariance(const Rows& x) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / static_cast<double>(n);
  Rows c(d, std::vector<double>(d, 0.0));
  for (const auto& r : x)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q) c[p][q] += (r[p] - mean[p]) * (r[q] - mean[q]);
  return c;
}

/// d95 via full spectral decomposition of the covariance.
inline std::size_t d95(const Rows& x, double threshold = 0.95) {
  const auto ev = jacobi_eigenvalues(covariance(x));
  const double total = std::accumulate(ev.begin(), ev.end(), 0.0);
  if (total <= 1e-300) return 0;
  double cum = 0.0;
  for (std::size_t m = 0; m < ev.size(); ++m) {
    cum += ev[m];
    if (cum >= threshold * total * (1 - 1e-9)) return m + 1;
  }
  return ev.size();
}

/// Levina-Bickel estimate at one anchor from a full sorted distance list.
inline double mle_at(const Rows& x, std::size_t anchor, std::size_t k) {
  std::vector<double> r;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (j != anchor) r.push_back(dist(x[anchor], x[j]));
  std::sort(r.begin(), r.end());
  double s = 0.0;
  for (std::size_t j = 1; j <= k - 1; ++j) s += std::log(r[k - 1] / r[j - 1]);
  return 1.0 / (s / static_cast<double>(k - 1));
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// O(N^2) silhouette straight from the definition.
inline double silhouette(const Rows& x, const std::vector<int>& labels) {
  const std::size_t n = x.size();
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(k, 0.0);
    std::vector<int> cnt(k, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[labels[j]] += dist(x[i], x[j]);
      ++cnt[labels[j]];
    }
    if (cnt[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / cnt[labels[i]];
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / cnt[c]);
    if (std::max(a, b) > 0) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

inline double coherence(const Rows& h) {
  double s = 0.0;
  std::size_t m = 0;
  for (std::size_t t = 0; t + 2 < h.size(); ++t) {
    double dot = 0, n1 = 0, n2 = 0;
    for (std::size_t j = 0; j < h[t].size(); ++j) {
      const double v1 = h[t + 1][j] - h[t][j], v2 = h[t + 2][j] - h[t + 1][j];
      dot += v1 * v2;
      n1 += v1 * v1;
      n2 += v2 * v2;
    }
    s += dot / std::sqrt(n1 * n2);
    ++m;
  }
  return s / static_cast<double>(m);
}

}  // namespace oracle
