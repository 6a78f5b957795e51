#pragma once

#include "fbsde/pde.hpp"
#include "fbsde/sde.hpp"

#include <span>
#include <string>

namespace fbsde {

/// (X, Y, Z) along paths with Y = v(t, X) and Z = sigma(t, X) v_x(t, X).
struct TripleEnsemble {
  TimeGrid time;
  Matrix X, Y, Z;
  Matrix dW;  ///< increments of the underlying ensemble, kept for residuals
  std::string field_model;
  std::uint64_t seed = 0;

  std::size_t paths() const { return static_cast<std::size_t>(X.rows()); }
};

/// Checks that a path grid lies inside the field's time window.
void check_compatible(const DecouplingField& field, const TimeGrid& time);

/// Per-path reconstruction into caller-provided spans.
void reconstruct_path(const DecouplingField& field, const DiffusionFn& sigma, const TimeGrid& time,
                      std::span<const double> X, std::span<double> Y, std::span<double> Z);

TripleEnsemble reconstruct_triple(const DecouplingField& field, const PathEnsemble& ensemble,
                                  const DiffusionFn& sigma, int threads = 0);

/// Drift b~ of the forward equation as a path-simulation input.
SimulationSpec forward_spec(const ModelInstance& model, const DecouplingField& field,
                            const TimeGrid& time);

struct ResidualStats {
  double mean_abs = 0.0;
  double sup_abs = 0.0;
  double mean = 0.0;
};

/// Per-path Y_0 - phi(X_T) - sum f dt + sum Z dW with left-point sums.
double path_residual(const ModelInstance& model, const TimeGrid& time, std::span<const double> X,
                     std::span<const double> Y, std::span<const double> Z,
                     std::span<const double> dW);

ResidualStats bsde_residual(const TripleEnsemble& triple, const ModelInstance& model);

struct ComonotonicityReport {
  double min_product = 0.0;
  double max_product = 0.0;
  double fraction_negative = 0.0;  ///< of (path, time) pairs with Z1 Z2 < -tol
  double fraction_positive = 0.0;  ///< of pairs with Z1 Z2 > tol
  double min_z1 = 0.0;
  double min_z2 = 0.0;
  double tolerance = 1e-8;
  std::size_t n_paths = 0;
  int steps = 0;
};

/// Z^1 Z^2 over paths driven by one Brownian sample. Fields are taken as given.
ComonotonicityReport comonotonicity_check(const ModelInstance& model1,
                                          const DecouplingField& field1,
                                          const ModelInstance& model2,
                                          const DecouplingField& field2, const TimeGrid& time,
                                          std::size_t n_paths, std::uint64_t seed,
                                          double tolerance = 1e-8, int threads = 0);

ComonotonicityReport comonotonicity_check(const ModelInstance& model1,
                                          const ModelInstance& model2, const SpaceTimeGrid& grid,
                                          std::size_t n_paths, std::uint64_t seed,
                                          const SolverConfig& cfg = {}, double tolerance = 1e-8,
                                          int threads = 0);

struct ComparisonReport {
  double fraction = 1.0;       ///< grid points with v1 <= v2 + tol
  double max_violation = 0.0;  ///< max(v1 - v2)
  double tolerance = 1e-8;
};

ComparisonReport comparison_check(const DecouplingField& field1, const DecouplingField& field2,
                                  double tolerance = 1e-8);

ComparisonReport comparison_check(const ModelInstance& model1, const ModelInstance& model2,
                                  const SpaceTimeGrid& grid, const SolverConfig& cfg = {},
                                  double tolerance = 1e-8);

}  // namespace fbsde
