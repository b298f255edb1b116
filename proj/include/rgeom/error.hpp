#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rgeom {

/// Base for all toolkit errors. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (bad argument, empty input, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// On-disk data is malformed: bad magic, truncated payload, schema mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Input data is well-formed but unusable for the requested metric
/// (duplicate points, zero-norm displacements, ...). Carries the ids of the
/// offending samples.
class DataQualityError : public Error {
 public:
  DataQualityError(const std::string& what, std::vector<std::string> offending)
      : Error(what), offending_(std::move(offending)) {}

  const std::vector<std::string>& offending() const noexcept { return offending_; }

 private:
  std::vector<std::string> offending_;
};

/// Non-finite loss, failed decomposition and similar numerical breakdowns.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace rgeom
