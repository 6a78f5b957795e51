#pragma once

#include "fbsde/grid.hpp"
#include "fbsde/indifference.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace fbsde {

/// b(t,x,y,z) or f(t,x,y,z). The z slot always receives the spatial gradient
/// of the decoupling field, i.e. sigma^{-1} Z.
using CoefficientFn = std::function<double(double t, double x, double y, double z)>;
using DiffusionFn = std::function<double(double t, double x)>;
using TerminalFn = std::function<double(double x)>;
using ScalarFn = std::function<double(double)>;

enum class Smoothness { measurable, holder, lipschitz, c1, c2 };

const char* to_string(Smoothness s);

struct SmoothnessFlags {
  Smoothness drift = Smoothness::c2;
  Smoothness diffusion = Smoothness::c2;
  Smoothness driver = Smoothness::c2;
  Smoothness terminal = Smoothness::c2;
};

struct HolderExponents {
  double theta = 1.0;   ///< b in x
  double beta = 1.0;    ///< phi
  double alpha0 = 1.0;  ///< diffusion in x
};

/// Derivatives the caller chose to supply. An empty std::function means
/// "absent"; operations that need one throw MissingDerivatives.
struct OptionalDerivatives {
  CoefficientFn b_x, b_y, b_z;
  CoefficientFn f_x, f_y, f_z, f_xx, f_xy, f_xz, f_yy, f_yz, f_zz;
  DiffusionFn sigma_x, sigma_xx, sigma_t;
  TerminalFn phi_prime, phi_second;

  bool has_drift_chain() const { return b_x && b_y && b_z; }
  bool has_diffusion() const { return sigma_x && sigma_xx && sigma_t; }
};

/// FBSDE coefficients, BSDE stored as dY = -f dt + Z dW.
struct CoefficientSet {
  std::string name;
  CoefficientFn drift;
  DiffusionFn diffusion;
  CoefficientFn driver;
  TerminalFn terminal;

  double growth_Lambda = 1.0;
  double ellipticity_lambda = 1.0;
  double lipschitz_K = 0.0;
  HolderExponents holder;
  ScalarFn ell = [](double) { return 0.0; };
  SmoothnessFlags smoothness;
  OptionalDerivatives derivatives;

  /// sigma does not depend on (t, x); enables shortcuts such as grid
  /// differencing of b~.
  bool constant_diffusion = false;
  /// b ignores (y, z); path simulation then skips field lookups.
  bool drift_state_only = false;
  /// Free-form provenance (parameters, sign conventions applied).
  nlohmann::json metadata = nlohmann::json::object();
};

struct ModelInstance {
  CoefficientSet coefficients;
  double x0 = 0.0;
  double T = 1.0;
  double t0 = 0.0;

  void validate() const;
};

/// Outcome of sampling the CoefficientSet invariants on a grid.
struct AssumptionAudit {
  bool ellipticity = true;
  bool terminal_bounded = true;
  bool driver_growth = true;
  bool ell_nondecreasing = true;
  double min_sigma_squared = 0.0;
  double max_abs_terminal = 0.0;
  double max_driver_ratio = 0.0;

  bool ok() const { return ellipticity && terminal_bounded && driver_growth && ell_nondecreasing; }
};

AssumptionAudit audit_assumptions(const ModelInstance& model, const SpaceTimeGrid& grid);

// ---------------------------------------------------------------------------
// Built-in models

double sigmoid(double x);

/// b = 0, sigma = 1, f = y + z, phi = e^x / (1 + e^x).
ModelInstance builtin_worked_example(double T = 1.0, double x0 = 0.0);

/// b = 0, sigma = 1, f = 0 with the given terminal (heat-equation field).
ModelInstance builtin_heat(TerminalFn phi, TerminalFn phi_prime, TerminalFn phi_second, double T,
                           double x0, std::string name = "heat");

/// Ornstein-Uhlenbeck forward dX = -beta X dt + sigma dW; f = 0.
ModelInstance builtin_ou(double beta, double sigma, TerminalFn phi, double T, double x0);

struct RegimeSwitchingParams {
  double k1 = 0.0;
  double k2 = 0.0;
  double alpha = 0.5;  ///< triggering level of Y
  double beta = 1.0;
  TerminalFn h = [](double) { return 0.0; };
  TerminalFn phi = [](double) { return 0.0; };
  TerminalFn h_prime;  ///< optional, enables f_x
  TerminalFn phi_prime;
  double h_sup = 0.0;    ///< sup |h| on the truncated domain
  double phi_sup = 0.0;  ///< sup |phi| on the truncated domain
};

/// dX = (k(Y) - beta X) dt + dW, dY = (h(X) Y - 1) dt + Z dW,
/// k(y) = k1 1_{y <= alpha} + k2 1_{y > alpha}.
ModelInstance builtin_regime_switching(const RegimeSwitchingParams& params, double T, double x0);

struct PricingParams {
  double lambda = 0.0;
  double lambda_hat = 0.0;
  double R = 0.0;
  double sigma = 1.0;
  std::function<double(double t, double x)> alpha = [](double, double) { return 0.0; };
  double alpha_sup = 0.0;
  double gamma = 1.0;
  pricing::ConstraintInterval C;
  TerminalFn payoff = [](double) { return 0.0; };
  double payoff_sup = 0.0;
};

/// Bounded Lipschitz ramp clamp((x - strike)/width, 0, 1).
TerminalFn ramp_payoff(double strike, double width);

/// Forward dX = -(lambda 1_{x<R} + lambda_hat 1_{x>=R} + sigma^2/2) dt + sigma dW.
/// Both fields solve v_t + L v - f(t,x,sigma v_x) = 0; the claim field has
/// terminal -F (it carries -Yhat where Yhat_T = F(X_T)).
struct PricingModelPair {
  ModelInstance no_claim;
  ModelInstance with_claim;
  PricingParams params;
};

PricingModelPair builtin_pricing_model(const PricingParams& params, double T, double x0);

// ---------------------------------------------------------------------------
// JSON model definitions

/// Parses a one-variable function spec: number, {"constant"}, {"polynomial"},
/// {"piecewise"}, {"tabulated"}, {"sigmoid"}, {"softplus"}, {"ramp"}.
ScalarFn parse_scalar_function(const nlohmann::json& spec);

/// Either {"builtin": name, "params": {...}} or {"custom": {...}}; see
/// docs/model_schema.md.
ModelInstance load_model(const nlohmann::json& doc);
PricingModelPair load_pricing_models(const nlohmann::json& doc);
/// The "params" object of a regime_switching model.
RegimeSwitchingParams parse_regime_switching_params(const nlohmann::json& params);

}  // namespace fbsde
