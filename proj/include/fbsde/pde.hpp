#pragma once

#include "fbsde/grid.hpp"
#include "fbsde/model.hpp"

#include <functional>
#include <limits>
#include <vector>

namespace fbsde {

enum class TimeScheme { theta, explicit_euler };

/// Edge-node closure. `curvature_extrapolation` copies the interior second
/// difference to the edge node (zero third derivative); `zero_curvature`
/// drops the diffusion term there (v_xx = 0).
enum class BoundaryRule { curvature_extrapolation, zero_curvature };

/// Optional audit of sup_x |v_x(t,x)| (T - t)^{1-gamma} <= constant.
struct GradientBoundConfig {
  bool enabled = false;
  double gamma = 0.5;
  double constant = std::numeric_limits<double>::infinity();
};

struct SolverConfig {
  TimeScheme scheme = TimeScheme::theta;
  double theta = 0.5;       ///< 1/2 is Crank-Nicolson, 1 is backward Euler
  int rannacher_steps = 2;  ///< fully implicit steps next to the terminal slice
  int picard_max_iterations = 50;
  double damping = 0.5;
  double tolerance = 1e-10;
  BoundaryRule boundary = BoundaryRule::curvature_extrapolation;
  /// Extra width solved on each side of the requested window and discarded
  /// afterwards. Negative selects 5 sigma_max sqrt(T - t0).
  double padding = -1.0;
  GradientBoundConfig gradient_bound;
};

struct StepReport {
  int iterations = 0;
  double residual = 0.0;
  bool converged = true;
};

struct GradientBoundReport {
  bool enabled = false;
  double gamma = 0.5;
  double constant = std::numeric_limits<double>::infinity();
  double sup_weighted = 0.0;  ///< sup over t < T of sup_x |v_x| (T - t)^{1-gamma}
  double best_fit_gamma = std::numeric_limits<double>::quiet_NaN();
  bool satisfied = true;
};

/// Decoupling field v with its spatial derivatives on a space-time grid.
/// Row m of each matrix is the slice at time t_m.
struct DecouplingField {
  SpaceTimeGrid grid;
  Matrix v, v_x, v_xx;
  GridFunction v_fn, v_x_fn, v_xx_fn;
  std::vector<StepReport> iteration_report;  ///< index m: solve of slice m
  GradientBoundReport gradient_bound;
  double interpolation_tol_v = 0.0;
  double interpolation_tol_vx = 0.0;

  /// Rebuilds interpolants and tolerances after v, v_x, v_xx changed.
  void finalize();
  int picard_iterations_total() const;
  double sup_abs_v() const { return v.cwiseAbs().maxCoeff(); }
};

/// Linear parabolic pieces plus the nonlinearity handled by Picard:
///   u_t + a(t,x) u_xx + c(t,x) u + N(t,x,u,u_x) = 0,  u(T) = terminal.
struct QuasiLinearProblem {
  DiffusionFn half_variance;  ///< a = sigma^2 / 2
  DiffusionFn reaction;       ///< c, treated implicitly; empty means 0
  std::function<double(double t, double x, double u, double ux)> nonlinear;
  Vector terminal;
};

struct QuasiLinearSolution {
  Matrix u;
  std::vector<StepReport> reports;
};

QuasiLinearSolution solve_quasilinear(const QuasiLinearProblem& problem, const SpaceTimeGrid& grid,
                                      const SolverConfig& cfg);

/// Solves v_t + sigma^2/2 v_xx + b(t,x,v,v_x) v_x + f(t,x,v,v_x) = 0, v(T) = phi.
DecouplingField solve_decoupling_field(const ModelInstance& model, const SpaceTimeGrid& grid,
                                       const SolverConfig& cfg = {});

/// Central differences inside, second-order one-sided stencils at the edges.
void gradient_and_hessian(DecouplingField& field);

/// Column derivative of a tabulated slice (same stencils as above).
template <typename Scalar>
VectorX<Scalar> first_difference(const Eigen::Ref<const VectorX<Scalar>>& u, Scalar dx) {
  const Eigen::Index n = u.size();
  VectorX<Scalar> d(n);
  for (Eigen::Index j = 1; j + 1 < n; ++j) d(j) = (u(j + 1) - u(j - 1)) / (Scalar(2) * dx);
  d(0) = (Scalar(-3) * u(0) + Scalar(4) * u(1) - u(2)) / (Scalar(2) * dx);
  d(n - 1) = (Scalar(3) * u(n - 1) - Scalar(4) * u(n - 2) + u(n - 3)) / (Scalar(2) * dx);
  return d;
}

template <typename Scalar>
VectorX<Scalar> second_difference(const Eigen::Ref<const VectorX<Scalar>>& u, Scalar dx) {
  const Eigen::Index n = u.size();
  const Scalar h2 = dx * dx;
  VectorX<Scalar> d(n);
  for (Eigen::Index j = 1; j + 1 < n; ++j) d(j) = (u(j + 1) - Scalar(2) * u(j) + u(j - 1)) / h2;
  if (n >= 4) {
    d(0) = (Scalar(2) * u(0) - Scalar(5) * u(1) + Scalar(4) * u(2) - u(3)) / h2;
    d(n - 1) = (Scalar(2) * u(n - 1) - Scalar(5) * u(n - 2) + Scalar(4) * u(n - 3) - u(n - 4)) / h2;
  } else {
    d(0) = d(1);
    d(n - 1) = d(n - 2);
  }
  return d;
}

/// Row-wise x-derivative of a tabulated grid function.
GridFunction differentiate_x(const GridFunction& g);

/// b~(t,x) = b(t, x, v(t,x), v_x(t,x)) on the field's grid.
GridFunction transformed_drift(const DecouplingField& field, const ModelInstance& model);

/// d_x b~ = b_x + b_y v_x + b_z v_xx from supplied derivatives.
/// Throws MissingDerivatives when any of b_x, b_y, b_z is absent.
GridFunction transformed_drift_gradient(const DecouplingField& field, const ModelInstance& model);

struct KolmogorovSolution {
  double mu = 1.0;
  Matrix U, DU;
  std::vector<StepReport> reports;
};

/// U_t + sigma^2/2 U_xx + b~ U_x - mu U = -b~, U(T) = 0.
KolmogorovSolution solve_kolmogorov_U(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                      double mu, const SpaceTimeGrid& grid,
                                      const SolverConfig& cfg = {});

}  // namespace fbsde
