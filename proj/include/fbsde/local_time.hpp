#pragma once

#include "fbsde/sde.hpp"
#include "fbsde/stats.hpp"

#include <cmath>
#include <functional>
#include <span>

namespace fbsde {

using SpaceTimeFn = std::function<double(double t, double z)>;

enum class LocalTimeEstimator { occupation, decomposition, smooth_route };

const char* to_string(LocalTimeEstimator e);

struct LocalTimeResult {
  double value = 0.0;
  LocalTimeEstimator estimator = LocalTimeEstimator::occupation;
  double epsilon = 0.0;  ///< occupation half-width (0 for the other estimators)
  double dt = 0.0;
  double se = 0.0;  ///< standard error when ensemble-averaged
  std::size_t n = 1;
};

/// Occupation half-width between the dt^{1/2} noise floor and the grid.
inline double default_epsilon(double dt) { return std::pow(dt, 0.4); }

/// (1/2 eps) sum_m 1{|X_m - R| < eps} sigma^2(t_m, X_m) dt over m < M.
LocalTimeResult level_local_time(std::span<const double> X, const TimeGrid& time, double R,
                                 double epsilon, const DiffusionFn& sigma = {});

/// Ensemble mean and standard error of the per-path estimate, streamed.
LocalTimeResult level_local_time(const SimulationSpec& spec, std::size_t n_paths,
                                 std::uint64_t seed, double R, double epsilon, int threads = 0);

/// The three discrete sums of the time-reversal decomposition along one
/// Brownian path: forward Ito sum against W, reversed-time Ito sum against B,
/// and the kernel integral with (What - x0) / (T - s).
struct DecompositionParts {
  double forward = 0.0;
  double backward = 0.0;
  double correction = 0.0;
  double value() const { return forward + backward - correction; }
};

DecompositionParts local_time_decomposition(const SpaceTimeFn& phi, const TimeGrid& time,
                                            double x0, std::span<const double> X,
                                            std::span<const double> dW,
                                            std::span<const double> W_hat,
                                            std::span<const double> dB);

/// Left-point sum of phi_x(t_m, X_m) dt.
double smooth_route_integral(const SpaceTimeFn& phi_x, const TimeGrid& time,
                             std::span<const double> X);

struct LocalTimeIntegral {
  Vector values;  ///< int int phi L(ds, dz) per path
  Vector smooth;  ///< -int phi_x(s, W_s) ds per path (empty without phi_x)
  MeanSE stats;
  double rms_gap = 0.0;  ///< RMS of values - smooth (when smooth is present)
  /// Sampled sup |phi| times E|What_{T-dt} - x0|: size of the kernel's last interval.
  double last_step_bias = 0.0;
  double dt = 0.0;
};

/// Streams pure Brownian paths (zero drift, unit diffusion) and evaluates
/// the decomposition per path; throws NotBrownian for any other spec.
LocalTimeIntegral spacetime_local_time_integral(const SpaceTimeFn& phi, const SimulationSpec& spec,
                                                std::size_t n_paths, std::uint64_t seed,
                                                const SpaceTimeFn& phi_x = {}, int threads = 0);

/// Same on a stored ensemble, which must be Brownian.
LocalTimeIntegral spacetime_local_time_integral(const SpaceTimeFn& phi, const PathEnsemble& ensemble,
                                                const SpaceTimeFn& phi_x = {}, int threads = 0);

struct ExponentialMomentReport {
  double estimate = 1.0;
  double se = 0.0;
  double max_exponent = 0.0;
  std::size_t n = 0;
};

/// E[exp(lambda int int b L)] from the decomposition values.
ExponentialMomentReport exponential_moment_check(const SpaceTimeFn& b, double lambda,
                                                 const SimulationSpec& spec, std::size_t n_paths,
                                                 std::uint64_t seed, int threads = 0);

enum class FlowRoute { smooth, decomposition };

struct SobolevFlowResult {
  FlowRoute route = FlowRoute::smooth;
  Vector xi;      ///< xi_T per path
  Vector weight;  ///< Girsanov weights (decomposition route); empty otherwise
  MeanSE mean;    ///< E[xi_T] under the law of X (weighted for the decomposition route)
  double dt = 0.0;
};

/// xi_T = exp(int_0^T d_x b~(u, X_u) du) along the paths of `spec` (which
/// may carry drift b~).
SobolevFlowResult sobolev_flow_smooth(const SimulationSpec& spec, const SpaceTimeFn& b_tilde_x,
                                      std::size_t n_paths, std::uint64_t seed, int threads = 0);

/// xi_T = exp(-int int b~ L^W(ds, dz)) on Brownian paths started at x0, with
/// Girsanov weights exp(int b~ dW - 1/2 int b~^2 ds) carrying expectations to
/// the drifted law. `brownian` must be pure Brownian.
SobolevFlowResult sobolev_flow_decomposition(const SimulationSpec& brownian, const SpaceTimeFn& b_tilde,
                                             std::size_t n_paths, std::uint64_t seed,
                                             int threads = 0);

}  // namespace fbsde
