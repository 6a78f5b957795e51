#pragma once

#include <limits>
#include <utility>

namespace fbsde::pricing {

/// Closed interval [lower, upper]; either end may be infinite.
struct ConstraintInterval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  static ConstraintInterval real_line() { return {}; }
  void validate() const;
};

struct Projection {
  double point;
  double distance;
};

/// Nearest point of C and the distance to it.
Projection project_onto_interval(double a, const ConstraintInterval& c);

/// Exponential-utility generator
///   f = -(gamma/2) dist_C(z + alpha/gamma)^2 + z alpha + alpha^2 / (2 gamma).
double indifference_driver(double z, double alpha, double gamma, const ConstraintInterval& c);

}  // namespace fbsde::pricing
