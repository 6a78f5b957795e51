#pragma once

#include "fbsde/common.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

/// Uniform time nodes t0 < t1 < ... < t_steps = T.
struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  int steps = 1;

  double dt() const { return (T - t0) / steps; }
  double time(int m) const { return m == steps ? T : t0 + m * dt(); }
  int nodes() const { return steps + 1; }
  void validate() const;

  /// Index of the node closest to `t`.
  int nearest_index(double t) const;
};

/// Uniform spatial nodes x_min = x_0 < ... < x_cells = x_max.
struct SpaceGrid {
  double x_min = -1.0;
  double x_max = 1.0;
  int cells = 1;

  double dx() const { return (x_max - x_min) / cells; }
  double x(int j) const { return j == cells ? x_max : x_min + j * dx(); }
  int nodes() const { return cells + 1; }
  double clamp(double value) const { return std::clamp(value, x_min, x_max); }
  bool contains(double value) const { return value >= x_min && value <= x_max; }
  void validate() const;
};

struct SpaceTimeGrid {
  TimeGrid time;
  SpaceGrid space;

  void validate() const {
    time.validate();
    space.validate();
  }

  /// Checks that `x0` lies strictly inside the spatial window.
  void validate_start(double x0) const;

  /// Window [x0 - half_width, x0 + half_width] over [t0, T].
  static SpaceTimeGrid centered(double x0, double half_width, double t0, double T, int time_steps,
                                int space_cells);
};

/// Fritsch-Carlson node slopes for a monotone piecewise-cubic Hermite
/// interpolant through equally spaced values (spacing h).
template <typename Scalar>
VectorX<Scalar> pchip_slopes(const Eigen::Ref<const VectorX<Scalar>>& y, Scalar h) {
  const Eigen::Index n = y.size();
  VectorX<Scalar> d = VectorX<Scalar>::Zero(n);
  if (n < 2) return d;
  VectorX<Scalar> delta(n - 1);
  for (Eigen::Index j = 0; j + 1 < n; ++j) delta(j) = (y(j + 1) - y(j)) / h;
  if (n == 2) {
    d.setConstant(delta(0));
    return d;
  }
  for (Eigen::Index j = 1; j + 1 < n; ++j) {
    const Scalar a = delta(j - 1);
    const Scalar b = delta(j);
    if (a * b <= Scalar(0)) {
      d(j) = Scalar(0);
    } else {
      // Harmonic mean; stays within 3*min(|a|,|b|) so the cubic is monotone.
      d(j) = Scalar(2) * a * b / (a + b);
    }
  }
  auto end_slope = [](Scalar d0, Scalar d1) {
    Scalar s = (Scalar(3) * d0 - d1) / Scalar(2);
    if (s * d0 <= Scalar(0)) return Scalar(0);
    if (d0 * d1 <= Scalar(0) && std::abs(s) > std::abs(Scalar(3) * d0)) return Scalar(3) * d0;
    return s;
  };
  d(0) = end_slope(delta(0), delta(1));
  d(n - 1) = end_slope(delta(n - 2), delta(n - 3));
  return d;
}

/// Cubic Hermite evaluation on cell [x_j, x_j + h] at fraction s in [0,1].
template <typename Scalar>
Scalar hermite(Scalar y0, Scalar y1, Scalar d0, Scalar d1, Scalar h, Scalar s) {
  const Scalar s2 = s * s;
  const Scalar s3 = s2 * s;
  const Scalar h00 = Scalar(2) * s3 - Scalar(3) * s2 + Scalar(1);
  const Scalar h10 = s3 - Scalar(2) * s2 + s;
  const Scalar h01 = Scalar(-2) * s3 + Scalar(3) * s2;
  const Scalar h11 = s3 - s2;
  return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
}

/// Tabulated function on a space-time grid: monotone cubic in x, linear in t.
/// Arguments outside the window are clamped to the boundary.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(SpaceTimeGrid grid, Matrix values);

  const SpaceTimeGrid& grid() const { return grid_; }
  const Matrix& values() const { return values_; }

  double operator()(double t, double x) const;
  /// Evaluation on time node `m` (no time interpolation).
  double at_node(int m, double x) const;

 private:
  SpaceTimeGrid grid_;
  Matrix values_;
  Matrix slopes_;
};

/// Monotone-cubic evaluation of one equally spaced slice.
double interpolate_slice(const SpaceGrid& space, const Eigen::Ref<const Vector>& values,
                         const Eigen::Ref<const Vector>& slopes, double x);

}  // namespace fbsde
