#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace rgeom {

/// Row-major dense matrices: one row per state / sample.
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;
using VectorD = Eigen::VectorXd;

using Index = std::size_t;
using IndexList = std::vector<Index>;

}  // namespace rgeom

#include <string>

namespace rgeom {

/// A sample excluded from a metric, with the reason. Metrics never silently
/// clamp degenerate samples; they drop them and record one of these.
struct Diagnostic {
  std::string sample_id;
  std::string reason;

  bool operator==(const Diagnostic&) const = default;
};

}  // namespace rgeom
