#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fbsde {

/// Row-major so that one path (or one time slice) is contiguous.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

enum class Errc {
  picard_diverged,
  cfl_violation,
  grid_mismatch,
  missing_derivatives,
  missing_second_derivatives,
  smoothness_violation,
  not_brownian,
  degenerate_bins,
  mu_search_failed,
  degeneracy_detected,
  too_few_samples,
  bad_bounds,
  degenerate,
  invalid_interval,
  config_invalid,
  missing_reports,
  invalid_argument,
};

const char* to_string(Errc code) noexcept;

/// Single exception type for the library; `code()` tells failures apart.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::picard_diverged: return "PicardDiverged";
    case Errc::cfl_violation: return "CFLViolation";
    case Errc::grid_mismatch: return "GridMismatch";
    case Errc::missing_derivatives: return "MissingDerivatives";
    case Errc::missing_second_derivatives: return "MissingSecondDerivatives";
    case Errc::smoothness_violation: return "SmoothnessViolation";
    case Errc::not_brownian: return "NotBrownian";
    case Errc::degenerate_bins: return "DegenerateBins";
    case Errc::mu_search_failed: return "MuSearchFailed";
    case Errc::degeneracy_detected: return "DegeneracyDetected";
    case Errc::too_few_samples: return "TooFewSamples";
    case Errc::bad_bounds: return "BadBounds";
    case Errc::degenerate: return "Degenerate";
    case Errc::invalid_interval: return "InvalidInterval";
    case Errc::config_invalid: return "ConfigInvalid";
    case Errc::missing_reports: return "MissingReports";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace fbsde
