#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records operations in creation order; since every node depends only
// on earlier nodes, backward() is a single reverse sweep. Templated on the
// scalar so training runs in float and gradient checks in double.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rgeom::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  std::size_t id = 0;
};

template <typename S>
class Tape {
 public:
  using M = Mat<S>;

  Var input(M value) { return push(std::move(value), nullptr); }

  const M& value(Var v) const { return nodes_[v.id].value; }
  const M& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// x * w^T, the affine-layer product for x (B x in) and w (out x in).
  Var matmul_t(Var x, Var w) {
    M out = value(x) * value(w).transpose();
    return push(std::move(out), [x, w](Tape& t, const M& g) {
      t.acc(x) += g * t.value(w);
      t.acc(w) += g.transpose() * t.value(x);
    });
  }

  /// x + b with the 1 x n row b broadcast over rows.
  Var add_row(Var x, Var b) {
    M out = value(x);
    out.rowwise() += value(b).row(0);
    return push(std::move(out), [x, b](Tape& t, const M& g) {
      t.acc(x) += g;
      t.acc(b) += g.colwise().sum();
    });
  }

  Var add(Var x, Var y) {
    return push(value(x) + value(y), [x, y](Tape& t, const M& g) {
      t.acc(x) += g;
      t.acc(y) += g;
    });
  }

  Var sub(Var x, Var y) {
    return push(value(x) - value(y), [x, y](Tape& t, const M& g) {
      t.acc(x) += g;
      t.acc(y) -= g;
    });
  }

  /// Exact GELU, x * Phi(x).
  Var gelu(Var x) {
    const M& in = value(x);
    M out = in.unaryExpr([](S v) { return v * phi_cdf(v); });
    return push(std::move(out), [x](Tape& t, const M& g) {
      const M& in = t.value(x);
      t.acc(x) += g.cwiseProduct(in.unaryExpr([](S v) { return phi_cdf(v) + v * phi_pdf(v); }));
    });
  }

  Var concat_cols(Var x, Var y) {
    const M& a = value(x);
    const M& b = value(y);
    M out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return push(std::move(out), [x, y](Tape& t, const M& g) {
      const auto ca = t.value(x).cols();
      t.acc(x) += g.leftCols(ca);
      t.acc(y) += g.rightCols(g.cols() - ca);
    });
  }

  /// Per-column piecewise-linear functions. z is B x m; `knots` is m x K
  /// holding each function's values at K uniform knots over [lo, hi]. Outside
  /// the range the end segments are extended linearly.
  Var piecewise_linear(Var z, Var knots, S lo, S hi) {
    const M& zv = value(z);
    const M& kv = value(knots);
    if (kv.rows() != zv.cols() || kv.cols() < 2) throw std::invalid_argument("piecewise_linear: shape mismatch");
    const auto k = kv.cols();
    const S h = (hi - lo) / static_cast<S>(k - 1);
    M out(zv.rows(), zv.cols());
    for (Eigen::Index b = 0; b < zv.rows(); ++b) {
      for (Eigen::Index i = 0; i < zv.cols(); ++i) {
        const auto [s, w] = locate(zv(b, i), lo, h, k);
        out(b, i) = (S(1) - w) * kv(i, s) + w * kv(i, s + 1);
      }
    }
    return push(std::move(out), [z, knots, lo, h, k](Tape& t, const M& g) {
      const M& zv = t.value(z);
      const M& kv = t.value(knots);
      M& dz = t.acc(z);
      M& dk = t.acc(knots);
      for (Eigen::Index b = 0; b < zv.rows(); ++b) {
        for (Eigen::Index i = 0; i < zv.cols(); ++i) {
          const auto [s, w] = locate(zv(b, i), lo, h, k);
          dk(i, s) += g(b, i) * (S(1) - w);
          dk(i, s + 1) += g(b, i) * w;
          dz(b, i) += g(b, i) * (kv(i, s + 1) - kv(i, s)) / h;
        }
      }
    });
  }

  /// Mean of squared differences over all elements (1 x 1).
  Var mse(Var pred, Var target) {
    const M diff = value(pred) - value(target);
    const double n = static_cast<double>(diff.size());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < diff.size(); ++i) sum += static_cast<double>(diff.data()[i]) * diff.data()[i];
    M out(1, 1);
    out(0, 0) = static_cast<S>(sum / n);
    return push(std::move(out), [pred, target, n](Tape& t, const M& g) {
      const M d = (t.value(pred) - t.value(target)) * static_cast<S>(2.0 * g(0, 0) / n);
      t.acc(pred) += d;
      t.acc(target) -= d;
    });
  }

  /// Mean softmax cross-entropy of logits (B x C) against class indices.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const M& z = value(logits);
    if (static_cast<std::size_t>(z.rows()) != labels.size()) {
      throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    }
    M probs(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index b = 0; b < z.rows(); ++b) {
      const S mx = z.row(b).maxCoeff();
      double denom = 0.0;
      for (Eigen::Index c = 0; c < z.cols(); ++c) denom += std::exp(static_cast<double>(z(b, c) - mx));
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        probs(b, c) = static_cast<S>(std::exp(static_cast<double>(z(b, c) - mx)) / denom);
      }
      loss += std::log(denom) - static_cast<double>(z(b, labels[static_cast<std::size_t>(b)]) - mx);
    }
    const double n = static_cast<double>(z.rows());
    M out(1, 1);
    out(0, 0) = static_cast<S>(loss / n);
    std::vector<int> lab(labels.begin(), labels.end());
    return push(std::move(out), [logits, probs = std::move(probs), lab = std::move(lab), n](Tape& t, const M& g) {
      M d = probs;
      for (Eigen::Index b = 0; b < d.rows(); ++b) d(b, lab[static_cast<std::size_t>(b)]) -= S(1);
      t.acc(logits) += d * static_cast<S>(g(0, 0) / n);
    });
  }

  /// Reverse sweep from a 1 x 1 node. Gradients of every node are available
  /// afterwards through grad().
  void backward(Var out) {
    for (auto& n : nodes_) n.grad = M::Zero(n.value.rows(), n.value.cols());
    nodes_[out.id].grad.setOnes();
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.back) n.back(*this, n.grad);
    }
  }

  static S phi_cdf(S v) { return S(0.5) * (S(1) + std::erf(v / std::numbers::sqrt2_v<S>)); }
  static S phi_pdf(S v) { return std::exp(S(-0.5) * v * v) / std::sqrt(S(2) * std::numbers::pi_v<S>); }

 private:
  using Backward = std::function<void(Tape&, const M&)>;

  struct Node {
    M value;
    M grad;
    Backward back;
  };

  Var push(M value, Backward back) {
    nodes_.push_back({std::move(value), M(), std::move(back)});
    return Var{nodes_.size() - 1};
  }

  M& acc(Var v) { return nodes_[v.id].grad; }

  static std::pair<Eigen::Index, S> locate(S z, S lo, S h, Eigen::Index k) {
    auto s = static_cast<Eigen::Index>(std::floor((z - lo) / h));
    if (s < 0) s = 0;
    if (s > k - 2) s = k - 2;
    const S w = (z - (lo + static_cast<S>(s) * h)) / h;
    return {s, w};
  }

  std::vector<Node> nodes_;
};

}  // namespace rgeom::ad
