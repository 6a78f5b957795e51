#include "fbsde/grid.hpp"

#include <sstream>

namespace fbsde {

void TimeGrid::validate() const {
  require(steps >= 1, Errc::invalid_argument, "time grid needs at least one step");
  require(std::isfinite(t0) && std::isfinite(T) && T > t0, Errc::invalid_argument,
          "time grid requires t0 < T");
}

int TimeGrid::nearest_index(double t) const {
  const double r = (t - t0) / dt();
  return std::clamp(static_cast<int>(std::lround(r)), 0, steps);
}

void SpaceGrid::validate() const {
  require(cells >= 2, Errc::invalid_argument, "space grid needs at least two cells");
  require(std::isfinite(x_min) && std::isfinite(x_max) && x_max > x_min, Errc::invalid_argument,
          "space grid requires x_min < x_max");
}

void SpaceTimeGrid::validate_start(double x0) const {
  if (!(x0 > space.x_min && x0 < space.x_max)) {
    std::ostringstream os;
    os << "x0=" << x0 << " outside (" << space.x_min << ", " << space.x_max << ")";
    throw Error(Errc::invalid_argument, os.str());
  }
}

SpaceTimeGrid SpaceTimeGrid::centered(double x0, double half_width, double t0, double T,
                                      int time_steps, int space_cells) {
  SpaceTimeGrid g{{t0, T, time_steps}, {x0 - half_width, x0 + half_width, space_cells}};
  g.validate();
  return g;
}

double interpolate_slice(const SpaceGrid& space, const Eigen::Ref<const Vector>& values,
                         const Eigen::Ref<const Vector>& slopes, double x) {
  const double h = space.dx();
  const double xc = space.clamp(x);
  const double r = (xc - space.x_min) / h;
  int j = static_cast<int>(r);
  if (j >= space.cells) j = space.cells - 1;
  if (j < 0) j = 0;
  const double s = r - j;
  if (s == 0.0) return values(j);
  return hermite(values(j), values(j + 1), slopes(j), slopes(j + 1), h, s);
}

GridFunction::GridFunction(SpaceTimeGrid grid, Matrix values)
    : grid_(grid), values_(std::move(values)) {
  require(values_.rows() == grid_.time.nodes() && values_.cols() == grid_.space.nodes(),
          Errc::grid_mismatch, "grid function shape does not match its grid");
  slopes_.resize(values_.rows(), values_.cols());
  const double h = grid_.space.dx();
  for (Eigen::Index m = 0; m < values_.rows(); ++m) {
    slopes_.row(m) = pchip_slopes<double>(values_.row(m).transpose(), h).transpose();
  }
}

double GridFunction::at_node(int m, double x) const {
  return interpolate_slice(grid_.space, values_.row(m).transpose(), slopes_.row(m).transpose(), x);
}

double GridFunction::operator()(double t, double x) const {
  const TimeGrid& tg = grid_.time;
  const double r = std::clamp((t - tg.t0) / tg.dt(), 0.0, static_cast<double>(tg.steps));
  int m = static_cast<int>(r);
  if (m >= tg.steps) return at_node(tg.steps, x);
  const double w = r - m;
  // Snap to a node when t sits on it up to rounding in (t - t0)/dt.
  if (w < 1e-9) return at_node(m, x);
  if (w > 1.0 - 1e-9) return at_node(m + 1, x);
  return (1.0 - w) * at_node(m, x) + w * at_node(m + 1, x);
}

}  // namespace fbsde
