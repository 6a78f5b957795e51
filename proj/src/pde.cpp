#include "fbsde/pde.hpp"

#include "fbsde/tridiagonal.hpp"

#include <cmath>
#include <sstream>

namespace fbsde {

namespace {

// Residual growth is only meaningful above the round-off floor.
constexpr double kDivergenceFloorFactor = 1e3;

double theta_for_step(const SolverConfig& cfg, int steps_from_terminal) {
  if (cfg.scheme == TimeScheme::explicit_euler) return 0.0;
  return steps_from_terminal < cfg.rannacher_steps ? 1.0 : cfg.theta;
}

}  // namespace

QuasiLinearSolution solve_quasilinear(const QuasiLinearProblem& problem, const SpaceTimeGrid& grid,
                                      const SolverConfig& cfg) {
  grid.validate();
  const int M = grid.time.steps;
  const int n = grid.space.nodes();
  require(problem.terminal.size() == n, Errc::grid_mismatch, "terminal slice has wrong length");
  require(cfg.damping > 0.0 && cfg.damping <= 1.0, Errc::invalid_argument,
          "Picard damping must lie in (0, 1]");
  require(n >= 4, Errc::invalid_argument, "space grid needs at least 4 nodes");

  const double dt = grid.time.dt();
  const double dx = grid.space.dx();
  const double inv_h2 = 1.0 / (dx * dx);

  Vector xs(n);
  for (int j = 0; j < n; ++j) xs(j) = grid.space.x(j);

  auto half_var_at = [&](double t) {
    Vector a(n);
    for (int j = 0; j < n; ++j) a(j) = problem.half_variance(t, xs(j));
    return a;
  };
  auto reaction_at = [&](double t) {
    Vector c = Vector::Zero(n);
    if (problem.reaction) {
      for (int j = 0; j < n; ++j) c(j) = problem.reaction(t, xs(j));
    }
    return c;
  };
  auto nonlinear_at = [&](double t, const Vector& u) {
    const Vector ux = first_difference<double>(u, dx);
    Vector out(n);
    for (int j = 0; j < n; ++j) out(j) = problem.nonlinear(t, xs(j), u(j), ux(j));
    return out;
  };
  const bool extrapolate = cfg.boundary == BoundaryRule::curvature_extrapolation;
  // a u_xx + c u; edge nodes take the neighbouring second difference or none.
  auto linear_part = [&](const Vector& a, const Vector& c, const Vector& u) {
    Vector out = c.cwiseProduct(u);
    for (int j = 1; j + 1 < n; ++j) out(j) += a(j) * (u(j + 1) - 2.0 * u(j) + u(j - 1)) * inv_h2;
    if (extrapolate) {
      out(0) += a(0) * (u(2) - 2.0 * u(1) + u(0)) * inv_h2;
      out(n - 1) += a(n - 1) * (u(n - 1) - 2.0 * u(n - 2) + u(n - 3)) * inv_h2;
    }
    return out;
  };

  if (cfg.scheme == TimeScheme::explicit_euler) {
    double worst = 0.0;
    for (int m = 0; m <= M; ++m) worst = std::max(worst, half_var_at(grid.time.time(m)).maxCoeff());
    const double ratio = 2.0 * worst * dt * inv_h2;
    if (ratio > 0.5) {
      std::ostringstream os;
      os << "sigma^2 dt / dx^2 = " << ratio << " > 1/2";
      throw Error(Errc::cfl_violation, os.str());
    }
  }

  QuasiLinearSolution sol;
  sol.u.resize(M + 1, n);
  sol.reports.assign(M + 1, StepReport{});
  sol.u.row(M) = problem.terminal.transpose();

  Vector a_old = half_var_at(grid.time.time(M));
  Vector c_old = reaction_at(grid.time.time(M));

  for (int m = M - 1; m >= 0; --m) {
    const double t_new = grid.time.time(m);
    const double t_old = grid.time.time(m + 1);
    const double theta = theta_for_step(cfg, M - 1 - m);
    const Vector old = sol.u.row(m + 1).transpose();

    Vector rhs = old;
    if (theta < 1.0) {
      rhs += (1.0 - theta) * dt * (linear_part(a_old, c_old, old) + nonlinear_at(t_old, old));
    }

    const Vector a_new = half_var_at(t_new);
    const Vector c_new = reaction_at(t_new);
    StepReport& report = sol.reports[static_cast<std::size_t>(m)];

    if (theta == 0.0) {
      sol.u.row(m) = rhs.transpose();
      report.iterations = 0;
    } else {
      Vector lower = Vector::Zero(n), diag(n), upper = Vector::Zero(n);
      for (int j = 0; j < n; ++j) diag(j) = 1.0 - theta * dt * c_new(j);
      Vector kappa(n);
      for (int j = 0; j < n; ++j) kappa(j) = theta * dt * a_new(j) * inv_h2;
      for (int j = 1; j + 1 < n; ++j) {
        lower(j) = -kappa(j);
        upper(j) = -kappa(j);
        diag(j) += 2.0 * kappa(j);
      }
      // The extrapolated edge row couples three nodes; eliminating the third
      // with the neighbouring row keeps the system tridiagonal. The same
      // combination is applied to every right-hand side below.
      double w_left = 0.0, w_right = 0.0;
      if (extrapolate) {
        if (kappa(1) > 0.0) {
          w_left = kappa(0) / kappa(1);
          upper(0) = -w_left * (1.0 - theta * dt * c_new(1));
        }
        if (kappa(n - 2) > 0.0) {
          w_right = kappa(n - 1) / kappa(n - 2);
          lower(n - 1) = -w_right * (1.0 - theta * dt * c_new(n - 2));
        }
      }
      auto close_rows = [&](Vector r) {
        r(0) -= w_left * r(1);
        r(n - 1) -= w_right * r(n - 2);
        return r;
      };

      Vector iterate = old;
      Vector image = old;
      double prev_residual = std::numeric_limits<double>::infinity();
      int growth_streak = 0;
      bool converged = false;
      int k = 0;
      for (; k < cfg.picard_max_iterations; ++k) {
        image = solve_tridiagonal<double>(
            lower, diag, upper, close_rows(rhs + theta * dt * nonlinear_at(t_new, iterate)));
        const double residual = (image - iterate).cwiseAbs().maxCoeff();
        report.residual = residual;
        const double scale = std::max(1.0, image.cwiseAbs().maxCoeff());
        if (!std::isfinite(residual)) {
          throw Error(Errc::picard_diverged, "non-finite Picard residual at t=" +
                                                 std::to_string(t_new));
        }
        if (residual <= cfg.tolerance * scale) {
          converged = true;
          ++k;
          break;
        }
        if (residual > prev_residual && residual > kDivergenceFloorFactor * cfg.tolerance * scale) {
          if (++growth_streak >= 3) {
            std::ostringstream os;
            os << "residual grew 3 consecutive iterations at t=" << t_new
               << " (residual " << residual << ")";
            throw Error(Errc::picard_diverged, os.str());
          }
        } else {
          growth_streak = 0;
        }
        prev_residual = residual;
        iterate += cfg.damping * (image - iterate);
      }
      report.iterations = k;
      report.converged = converged;
      sol.u.row(m) = image.transpose();
    }
    a_old = a_new;
    c_old = c_new;
  }
  return sol;
}

void DecouplingField::finalize() {
  v_fn = GridFunction(grid, v);
  v_x_fn = GridFunction(grid, v_x);
  v_xx_fn = GridFunction(grid, v_xx);
  const double dx = grid.space.dx();
  double max_vxxx = 0.0;
  for (Eigen::Index m = 0; m < v_xx.rows(); ++m) {
    const Vector row = v_xx.row(m).transpose();
    max_vxxx = std::max(max_vxxx, first_difference<double>(row, dx).cwiseAbs().maxCoeff());
  }
  interpolation_tol_v = dx * dx / 8.0 * v_xx.cwiseAbs().maxCoeff();
  interpolation_tol_vx = dx * dx / 8.0 * max_vxxx;
}

int DecouplingField::picard_iterations_total() const {
  int total = 0;
  for (const auto& r : iteration_report) total += r.iterations;
  return total;
}

void gradient_and_hessian(DecouplingField& field) {
  const double dx = field.grid.space.dx();
  field.v_x.resize(field.v.rows(), field.v.cols());
  field.v_xx.resize(field.v.rows(), field.v.cols());
  for (Eigen::Index m = 0; m < field.v.rows(); ++m) {
    const Vector row = field.v.row(m).transpose();
    field.v_x.row(m) = first_difference<double>(row, dx).transpose();
    field.v_xx.row(m) = second_difference<double>(row, dx).transpose();
  }
}

namespace {

GradientBoundReport gradient_bound_report(const DecouplingField& field,
                                          const GradientBoundConfig& cfg) {
  GradientBoundReport rep;
  rep.enabled = cfg.enabled;
  rep.gamma = cfg.gamma;
  rep.constant = cfg.constant;
  const auto& tg = field.grid.time;
  const int M = tg.steps;
  const int J = field.grid.space.cells;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int count = 0;
  for (int m = 0; m < M; ++m) {
    const double tau = tg.T - tg.time(m);
    const double g = field.v_x.row(m).segment(1, J - 1).cwiseAbs().maxCoeff();
    rep.sup_weighted = std::max(rep.sup_weighted, g * std::pow(tau, 1.0 - cfg.gamma));
    if (g > 0.0) {
      const double lx = std::log(tau), ly = std::log(g);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++count;
    }
  }
  if (count >= 2) {
    const double denom = count * sxx - sx * sx;
    if (denom > 0.0) rep.best_fit_gamma = 1.0 + (count * sxy - sx * sy) / denom;
  }
  rep.satisfied = !cfg.enabled || rep.sup_weighted <= cfg.constant;
  return rep;
}

}  // namespace

DecouplingField solve_decoupling_field(const ModelInstance& model, const SpaceTimeGrid& grid,
                                       const SolverConfig& cfg) {
  model.validate();
  grid.validate();
  grid.validate_start(model.x0);
  const auto& c = model.coefficients;

  double pad = cfg.padding;
  if (pad < 0.0) {
    double sigma_max = 0.0;
    const int stride = std::max(1, grid.time.steps / 20);
    for (int m = 0; m <= grid.time.steps; m += stride) {
      for (int j = 0; j <= grid.space.cells; ++j) {
        sigma_max = std::max(sigma_max, std::abs(c.diffusion(grid.time.time(m), grid.space.x(j))));
      }
    }
    pad = 5.0 * sigma_max * std::sqrt(grid.time.T - grid.time.t0);
  }
  const double dx = grid.space.dx();
  const int pad_cells = static_cast<int>(std::ceil(pad / dx - 1e-9));
  SpaceTimeGrid solve_grid = grid;
  solve_grid.space = {grid.space.x_min - pad_cells * dx, grid.space.x_max + pad_cells * dx,
                      grid.space.cells + 2 * pad_cells};
  auto node = [&](int j) {
    const int inner = j - pad_cells;
    return inner >= 0 && inner <= grid.space.cells ? grid.space.x(inner) : solve_grid.space.x(j);
  };

  QuasiLinearProblem problem;
  problem.half_variance = [sigma = c.diffusion](double t, double x) {
    const double s = sigma(t, x);
    return 0.5 * s * s;
  };
  problem.nonlinear = [b = c.drift, f = c.driver](double t, double x, double u, double ux) {
    return b(t, x, u, ux) * ux + f(t, x, u, ux);
  };
  problem.terminal.resize(solve_grid.space.nodes());
  for (int j = 0; j < solve_grid.space.nodes(); ++j) problem.terminal(j) = c.terminal(node(j));

  QuasiLinearSolution sol = solve_quasilinear(problem, solve_grid, cfg);

  DecouplingField field;
  field.grid = grid;
  field.v = sol.u.middleCols(pad_cells, grid.space.nodes());
  field.iteration_report = std::move(sol.reports);
  gradient_and_hessian(field);
  field.gradient_bound = gradient_bound_report(field, cfg.gradient_bound);
  field.finalize();
  return field;
}

GridFunction differentiate_x(const GridFunction& g) {
  const double dx = g.grid().space.dx();
  Matrix out(g.values().rows(), g.values().cols());
  for (Eigen::Index m = 0; m < out.rows(); ++m) {
    const Vector row = g.values().row(m).transpose();
    out.row(m) = first_difference<double>(row, dx).transpose();
  }
  return GridFunction(g.grid(), std::move(out));
}

GridFunction transformed_drift(const DecouplingField& field, const ModelInstance& model) {
  const auto& grid = field.grid;
  Matrix out(grid.time.nodes(), grid.space.nodes());
  for (int m = 0; m <= grid.time.steps; ++m) {
    const double t = grid.time.time(m);
    for (int j = 0; j <= grid.space.cells; ++j) {
      out(m, j) = model.coefficients.drift(t, grid.space.x(j), field.v(m, j), field.v_x(m, j));
    }
  }
  return GridFunction(grid, std::move(out));
}

GridFunction transformed_drift_gradient(const DecouplingField& field, const ModelInstance& model) {
  const auto& d = model.coefficients.derivatives;
  require(d.has_drift_chain(), Errc::missing_derivatives,
          "d_x b~ needs b_x, b_y and b_z for model '" + model.coefficients.name + "'");
  const auto& grid = field.grid;
  Matrix out(grid.time.nodes(), grid.space.nodes());
  for (int m = 0; m <= grid.time.steps; ++m) {
    const double t = grid.time.time(m);
    for (int j = 0; j <= grid.space.cells; ++j) {
      const double x = grid.space.x(j), y = field.v(m, j), z = field.v_x(m, j);
      out(m, j) = d.b_x(t, x, y, z) + d.b_y(t, x, y, z) * field.v_x(m, j) +
                  d.b_z(t, x, y, z) * field.v_xx(m, j);
    }
  }
  return GridFunction(grid, std::move(out));
}

KolmogorovSolution solve_kolmogorov_U(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                      double mu, const SpaceTimeGrid& grid,
                                      const SolverConfig& cfg) {
  require(mu > 0.0, Errc::invalid_argument, "mu must be positive");
  QuasiLinearProblem problem;
  problem.half_variance = [sigma](double t, double x) {
    const double s = sigma(t, x);
    return 0.5 * s * s;
  };
  problem.reaction = [mu](double, double) { return -mu; };
  problem.nonlinear = [&b_tilde](double t, double x, double, double ux) {
    const double b = b_tilde(t, x);
    return b * ux + b;
  };
  problem.terminal = Vector::Zero(grid.space.nodes());

  QuasiLinearSolution sol = solve_quasilinear(problem, grid, cfg);
  KolmogorovSolution out;
  out.mu = mu;
  out.U = std::move(sol.u);
  out.reports = std::move(sol.reports);
  out.DU.resize(out.U.rows(), out.U.cols());
  const double dx = grid.space.dx();
  for (Eigen::Index m = 0; m < out.U.rows(); ++m) {
    const Vector row = out.U.row(m).transpose();
    out.DU.row(m) = first_difference<double>(row, dx).transpose();
  }
  return out;
}

}  // namespace fbsde
