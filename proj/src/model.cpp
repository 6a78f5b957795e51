#include "fbsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fbsde {

using nlohmann::json;

const char* to_string(Smoothness s) {
  switch (s) {
    case Smoothness::measurable: return "measurable";
    case Smoothness::holder: return "holder";
    case Smoothness::lipschitz: return "lipschitz";
    case Smoothness::c1: return "C1";
    case Smoothness::c2: return "C2";
  }
  return "unknown";
}

void ModelInstance::validate() const {
  require(T > 0.0, Errc::invalid_argument, "horizon T must be positive");
  require(t0 < T, Errc::invalid_argument, "start time must satisfy t0 < T");
  const auto& c = coefficients;
  require(c.drift && c.diffusion && c.driver && c.terminal, Errc::invalid_argument,
          "model '" + c.name + "' has an unset coefficient");
}

AssumptionAudit audit_assumptions(const ModelInstance& model, const SpaceTimeGrid& grid) {
  const auto& c = model.coefficients;
  AssumptionAudit audit;
  audit.min_sigma_squared = std::numeric_limits<double>::infinity();
  const int time_stride = std::max(1, grid.time.steps / 50);
  const double ys[] = {-4.0, -1.0, -0.25, 0.0, 0.25, 1.0, 4.0};
  for (int m = 0; m <= grid.time.steps; m += time_stride) {
    const double t = grid.time.time(m);
    for (int j = 0; j <= grid.space.cells; ++j) {
      const double x = grid.space.x(j);
      const double s = c.diffusion(t, x);
      audit.min_sigma_squared = std::min(audit.min_sigma_squared, s * s);
      for (double y : ys) {
        const double ratio = std::abs(c.driver(t, x, y, 0.0)) / (1.0 + std::abs(y));
        audit.max_driver_ratio = std::max(audit.max_driver_ratio, ratio);
      }
    }
  }
  for (int j = 0; j <= grid.space.cells; ++j) {
    audit.max_abs_terminal = std::max(audit.max_abs_terminal, std::abs(c.terminal(grid.space.x(j))));
  }
  constexpr double slack = 1e-12;
  audit.ellipticity = audit.min_sigma_squared >= c.ellipticity_lambda * (1.0 - slack);
  audit.terminal_bounded = audit.max_abs_terminal <= c.growth_Lambda * (1.0 + slack);
  audit.driver_growth = audit.max_driver_ratio <= c.growth_Lambda * (1.0 + slack);
  double prev = c.ell(0.0);
  for (int k = 1; k <= 200; ++k) {
    const double cur = c.ell(0.05 * k);
    if (cur < prev) audit.ell_nondecreasing = false;
    prev = cur;
  }
  return audit;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

CoefficientFn constant_coefficient(double value) {
  return [value](double, double, double, double) { return value; };
}

DiffusionFn constant_diffusion(double value) {
  return [value](double, double) { return value; };
}

void zero_diffusion_derivatives(OptionalDerivatives& d) {
  d.sigma_x = constant_diffusion(0.0);
  d.sigma_xx = constant_diffusion(0.0);
  d.sigma_t = constant_diffusion(0.0);
}

}  // namespace

ModelInstance builtin_worked_example(double T, double x0) {
  CoefficientSet c;
  c.name = "worked_example";
  c.drift = constant_coefficient(0.0);
  c.diffusion = constant_diffusion(1.0);
  c.driver = [](double, double, double y, double z) { return y + z; };
  c.terminal = sigmoid;
  c.growth_Lambda = 1.0;
  c.ellipticity_lambda = 1.0;
  c.lipschitz_K = 0.0;
  c.constant_diffusion = true;
  c.drift_state_only = true;
  c.smoothness = {Smoothness::c2, Smoothness::c2, Smoothness::c2, Smoothness::c2};

  auto& d = c.derivatives;
  d.b_x = d.b_y = d.b_z = constant_coefficient(0.0);
  d.f_x = constant_coefficient(0.0);
  d.f_y = constant_coefficient(1.0);
  d.f_z = constant_coefficient(1.0);
  d.f_xx = d.f_xy = d.f_xz = d.f_yy = d.f_yz = d.f_zz = constant_coefficient(0.0);
  zero_diffusion_derivatives(d);
  d.phi_prime = [](double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
  };
  d.phi_second = [](double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s) * (1.0 - 2.0 * s);
  };
  c.metadata = {{"builtin", "worked_example"},
                {"drift", "0"},
                {"diffusion", "1"},
                {"driver", "y + z"},
                {"terminal", "e^x/(1+e^x)"},
                {"driver_sign", "stored as dY = -f dt + Z dW"}};
  return {std::move(c), x0, T, 0.0};
}

ModelInstance builtin_heat(TerminalFn phi, TerminalFn phi_prime, TerminalFn phi_second, double T,
                           double x0, std::string name) {
  CoefficientSet c;
  c.name = std::move(name);
  c.drift = constant_coefficient(0.0);
  c.diffusion = constant_diffusion(1.0);
  c.driver = constant_coefficient(0.0);
  c.terminal = std::move(phi);
  c.constant_diffusion = true;
  c.drift_state_only = true;
  auto& d = c.derivatives;
  d.b_x = d.b_y = d.b_z = constant_coefficient(0.0);
  d.f_x = d.f_y = d.f_z = constant_coefficient(0.0);
  d.f_xx = d.f_xy = d.f_xz = d.f_yy = d.f_yz = d.f_zz = constant_coefficient(0.0);
  zero_diffusion_derivatives(d);
  d.phi_prime = std::move(phi_prime);
  d.phi_second = std::move(phi_second);
  c.metadata = {{"builtin", "heat"}, {"drift", "0"}, {"diffusion", "1"}, {"driver", "0"}};
  return {std::move(c), x0, T, 0.0};
}

ModelInstance builtin_ou(double beta, double sigma, TerminalFn phi, double T, double x0) {
  require(sigma > 0.0, Errc::invalid_argument, "OU model needs sigma > 0");
  CoefficientSet c;
  c.name = "ou";
  c.drift = [beta](double, double x, double, double) { return -beta * x; };
  c.diffusion = constant_diffusion(sigma);
  c.driver = constant_coefficient(0.0);
  c.terminal = std::move(phi);
  c.ellipticity_lambda = sigma * sigma;
  c.lipschitz_K = std::abs(beta);
  c.constant_diffusion = true;
  c.drift_state_only = true;
  auto& d = c.derivatives;
  d.b_x = constant_coefficient(-beta);
  d.b_y = d.b_z = constant_coefficient(0.0);
  d.f_x = d.f_y = d.f_z = constant_coefficient(0.0);
  d.f_xx = d.f_xy = d.f_xz = d.f_yy = d.f_yz = d.f_zz = constant_coefficient(0.0);
  zero_diffusion_derivatives(d);
  c.metadata = {{"builtin", "ou"}, {"beta", beta}, {"sigma", sigma}};
  return {std::move(c), x0, T, 0.0};
}

ModelInstance builtin_regime_switching(const RegimeSwitchingParams& p, double T, double x0) {
  CoefficientSet c;
  c.name = "regime_switching";
  const double k1 = p.k1, k2 = p.k2, alpha = p.alpha, beta = p.beta;
  c.drift = [=](double, double x, double y, double) {
    return (y <= alpha ? k1 : k2) - beta * x;
  };
  c.diffusion = constant_diffusion(1.0);
  // Printed as dY = (h Y - 1) dt + Z dW; stored as dY = -f dt + Z dW.
  auto h = p.h;
  c.driver = [h](double, double x, double y, double) { return 1.0 - h(x) * y; };
  c.terminal = p.phi;
  c.growth_Lambda = std::max({1.0, p.h_sup, p.phi_sup});
  c.ellipticity_lambda = 1.0;
  c.lipschitz_K = std::abs(beta);
  c.constant_diffusion = true;
  c.drift_state_only = k1 == k2;
  c.smoothness = {k1 == k2 ? Smoothness::c2 : Smoothness::measurable, Smoothness::c2,
                  Smoothness::c1, p.phi_prime ? Smoothness::c1 : Smoothness::measurable};
  auto& d = c.derivatives;
  d.b_x = constant_coefficient(-beta);
  if (k1 == k2) {
    d.b_y = constant_coefficient(0.0);
    d.b_z = constant_coefficient(0.0);
  }
  if (p.h_prime) {
    auto hp = p.h_prime;
    d.f_x = [hp](double, double x, double y, double) { return -hp(x) * y; };
  }
  d.f_y = [h](double, double x, double, double) { return -h(x); };
  d.f_z = constant_coefficient(0.0);
  zero_diffusion_derivatives(d);
  d.phi_prime = p.phi_prime;
  c.metadata = {{"builtin", "regime_switching"},
                {"k1", k1},
                {"k2", k2},
                {"alpha", alpha},
                {"beta", beta},
                {"indicator", "k1 on y <= alpha, k2 on y > alpha"},
                {"driver_sign", "printed dY = (hY - 1)dt + Z dW converted to f = 1 - h(x) y"}};
  return {std::move(c), x0, T, 0.0};
}

TerminalFn ramp_payoff(double strike, double width) {
  require(width > 0.0, Errc::invalid_argument, "ramp width must be positive");
  return [strike, width](double x) { return std::clamp((x - strike) / width, 0.0, 1.0); };
}

PricingModelPair builtin_pricing_model(const PricingParams& p, double T, double x0) {
  require(p.sigma > 0.0, Errc::invalid_argument, "pricing model needs sigma > 0");
  require(p.gamma > 0.0, Errc::invalid_argument, "pricing model needs gamma > 0");
  p.C.validate();

  CoefficientSet c;
  c.name = "pricing";
  const double lambda = p.lambda, lambda_hat = p.lambda_hat, R = p.R, sigma = p.sigma;
  const double half_var = 0.5 * sigma * sigma;
  c.drift = [=](double, double x, double, double) {
    return -((x < R ? lambda : lambda_hat) + half_var);
  };
  c.diffusion = constant_diffusion(sigma);
  const auto alpha = p.alpha;
  const double gamma = p.gamma;
  const auto C = p.C;
  // v_t + L v - f(t, x, sigma v_x) = 0.
  c.driver = [=](double t, double x, double, double z) {
    return -pricing::indifference_driver(sigma * z, alpha(t, x), gamma, C);
  };
  c.ellipticity_lambda = sigma * sigma;
  c.growth_Lambda = std::max({1.0, p.payoff_sup, p.alpha_sup * p.alpha_sup / (2.0 * gamma)});
  c.lipschitz_K = 0.0;
  c.ell = [gamma](double) { return gamma; };
  c.constant_diffusion = true;
  c.drift_state_only = true;
  c.smoothness = {lambda == lambda_hat ? Smoothness::c2 : Smoothness::measurable, Smoothness::c2,
                  Smoothness::c1, Smoothness::lipschitz};
  auto& d = c.derivatives;
  if (lambda == lambda_hat) d.b_x = constant_coefficient(0.0);
  d.b_y = d.b_z = constant_coefficient(0.0);
  zero_diffusion_derivatives(d);
  c.metadata = {{"builtin", "pricing"},
                {"lambda", lambda},
                {"lambda_hat", lambda_hat},
                {"R", R},
                {"sigma", sigma},
                {"gamma", gamma},
                {"C", {p.C.lower, p.C.upper}},
                {"indicator", "lambda on x < R, lambda_hat on x >= R"}};

  PricingModelPair pair;
  pair.params = p;
  pair.no_claim = {c, x0, T, 0.0};
  pair.no_claim.coefficients.name = "pricing_no_claim";
  pair.no_claim.coefficients.terminal = [](double) { return 0.0; };
  pair.no_claim.coefficients.metadata["terminal"] = "0";

  pair.with_claim = {std::move(c), x0, T, 0.0};
  pair.with_claim.coefficients.name = "pricing_with_claim";
  const auto payoff = p.payoff;
  pair.with_claim.coefficients.terminal = [payoff](double x) { return -payoff(x); };
  pair.with_claim.coefficients.metadata["terminal"] = "-F(x) (field carries -Yhat, Yhat_T = F)";
  return pair;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

double number_or_inf(const json& v, double inf_value) {
  if (v.is_null()) return inf_value;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(Errc::config_invalid, "bad numeric literal '" + s + "'");
  }
  return v.get<double>();
}

ScalarFn polynomial(std::vector<double> coeffs) {
  return [coeffs = std::move(coeffs)](double x) {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
    return acc;
  };
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : it->template get<T>();
}

}  // namespace

ScalarFn parse_scalar_function(const json& spec) {
  if (spec.is_number()) {
    const double c = spec.get<double>();
    return [c](double) { return c; };
  }
  require(spec.is_object() && spec.size() == 1, Errc::config_invalid,
          "function spec must be a number or a single-key object: " + spec.dump());
  const auto& [kind, body] = *spec.items().begin();
  if (kind == "constant") {
    const double c = body.get<double>();
    return [c](double) { return c; };
  }
  if (kind == "polynomial") return polynomial(body.get<std::vector<double>>());
  if (kind == "piecewise") {
    auto breaks = body.at("breaks").get<std::vector<double>>();
    std::vector<ScalarFn> pieces;
    for (const auto& piece : body.at("pieces")) pieces.push_back(parse_scalar_function(piece));
    require(pieces.size() == breaks.size() + 1, Errc::config_invalid,
            "piecewise spec needs one more piece than breaks");
    require(std::is_sorted(breaks.begin(), breaks.end()), Errc::config_invalid,
            "piecewise breaks must be increasing");
    const bool left_closed_upper = get_or<std::string>(body, "closed", "left") == "left";
    return [breaks, pieces, left_closed_upper](double x) {
      // "left": pieces live on [b_k, b_{k+1}); "right": on (b_k, b_{k+1}].
      const auto it = left_closed_upper ? std::upper_bound(breaks.begin(), breaks.end(), x)
                                        : std::lower_bound(breaks.begin(), breaks.end(), x);
      return pieces[static_cast<std::size_t>(it - breaks.begin())](x);
    };
  }
  if (kind == "tabulated") {
    auto xs = body.at("x").get<std::vector<double>>();
    auto ys = body.at("y").get<std::vector<double>>();
    require(xs.size() == ys.size() && xs.size() >= 2, Errc::config_invalid,
            "tabulated spec needs matching x/y arrays of length >= 2");
    require(std::is_sorted(xs.begin(), xs.end()), Errc::config_invalid,
            "tabulated x must be increasing");
    return [xs, ys](double x) {
      if (x <= xs.front()) return ys.front();
      if (x >= xs.back()) return ys.back();
      const auto k = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) -
                                              xs.begin());
      const double w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
      return (1.0 - w) * ys[k - 1] + w * ys[k];
    };
  }
  if (kind == "sigmoid") {
    const double scale = get_or(body, "scale", 1.0), shift = get_or(body, "shift", 0.0);
    const double amp = get_or(body, "amplitude", 1.0);
    return [=](double x) { return amp * sigmoid(scale * (x - shift)); };
  }
  if (kind == "softplus") {
    const double shift = get_or(body, "shift", 0.0);
    return [shift](double x) {
      const double u = x - shift;
      return u > 30.0 ? u : std::log1p(std::exp(u));
    };
  }
  if (kind == "ramp") return ramp_payoff(body.at("strike").get<double>(), body.at("width").get<double>());
  throw Error(Errc::config_invalid, "unknown function spec kind '" + kind + "'");
}

namespace {

ScalarFn optional_fn(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? ScalarFn{} : parse_scalar_function(*it);
}

ModelInstance load_custom(const json& body) {
  CoefficientSet c;
  c.name = get_or<std::string>(body, "name", "custom");
  const double T = get_or(body, "T", 1.0);
  const double x0 = get_or(body, "x0", 0.0);

  const json drift = body.value("drift", json::object());
  const ScalarFn bx = drift.contains("x") ? parse_scalar_function(drift["x"]) : ScalarFn{};
  const ScalarFn by = drift.contains("y") ? parse_scalar_function(drift["y"]) : ScalarFn{};
  const double bz = get_or(drift, "z", 0.0);
  c.drift = [bx, by, bz](double, double x, double y, double z) {
    return (bx ? bx(x) : 0.0) + (by ? by(y) : 0.0) + bz * z;
  };

  const ScalarFn sig = body.contains("diffusion") ? parse_scalar_function(body["diffusion"])
                                                  : ScalarFn([](double) { return 1.0; });
  c.diffusion = [sig](double, double x) { return sig(x); };
  c.constant_diffusion = !body.contains("diffusion") || body["diffusion"].is_number();
  c.drift_state_only = !by && bz == 0.0;

  const json driver = body.value("driver", json::object());
  const ScalarFn fx = driver.contains("x") ? parse_scalar_function(driver["x"]) : ScalarFn{};
  const double fy = get_or(driver, "y", 0.0), fz = get_or(driver, "z", 0.0);
  const double fzz = get_or(driver, "zz", 0.0);
  c.driver = [fx, fy, fz, fzz](double, double x, double y, double z) {
    return (fx ? fx(x) : 0.0) + fy * y + fz * z + fzz * z * z;
  };
  c.terminal = parse_scalar_function(body.at("terminal"));

  c.growth_Lambda = get_or(body, "growth_Lambda", 1.0);
  c.ellipticity_lambda = get_or(body, "ellipticity_lambda", 1.0);
  c.lipschitz_K = get_or(body, "lipschitz_K", 0.0);
  if (body.contains("ell")) c.ell = parse_scalar_function(body["ell"]);

  // Structural derivatives of the affine/quadratic parts are known; the
  // x-dependent pieces only when supplied under "derivatives".
  auto& d = c.derivatives;
  const json derivs = body.value("derivatives", json::object());
  const ScalarFn bxx = optional_fn(derivs, "drift_x");
  if (!bx || bxx) {
    d.b_x = [bxx](double, double x, double, double) { return bxx ? bxx(x) : 0.0; };
  }
  if (!by) d.b_y = constant_coefficient(0.0);
  d.b_z = constant_coefficient(bz);
  const ScalarFn fxx = optional_fn(derivs, "driver_x");
  if (!fx || fxx) {
    d.f_x = [fxx](double, double x, double, double) { return fxx ? fxx(x) : 0.0; };
  }
  d.f_y = constant_coefficient(fy);
  d.f_z = [fz, fzz](double, double, double, double z) { return fz + 2.0 * fzz * z; };
  d.f_zz = constant_coefficient(2.0 * fzz);
  d.f_yy = d.f_yz = d.f_xy = d.f_xz = constant_coefficient(0.0);
  if (c.constant_diffusion) {
    zero_diffusion_derivatives(d);
  } else {
    const ScalarFn sx = optional_fn(derivs, "diffusion_x");
    const ScalarFn sxx = optional_fn(derivs, "diffusion_xx");
    if (sx && sxx) {
      d.sigma_x = [sx](double, double x) { return sx(x); };
      d.sigma_xx = [sxx](double, double x) { return sxx(x); };
      d.sigma_t = constant_diffusion(0.0);
    }
  }
  d.phi_prime = optional_fn(derivs, "terminal_prime");
  d.phi_second = optional_fn(derivs, "terminal_second");

  c.smoothness.drift = d.b_x ? Smoothness::c1 : Smoothness::measurable;
  c.smoothness.terminal = d.phi_second ? Smoothness::c2
                          : d.phi_prime ? Smoothness::c1
                                        : Smoothness::measurable;
  c.metadata = {{"custom", body}};
  return {std::move(c), x0, T, get_or(body, "t0", 0.0)};
}

PricingParams parse_pricing_params(const json& p) {
  PricingParams out;
  out.lambda = get_or(p, "lambda", 0.0);
  out.lambda_hat = get_or(p, "lambda_hat", out.lambda);
  out.R = get_or(p, "R", 0.0);
  out.sigma = get_or(p, "sigma", 1.0);
  out.gamma = get_or(p, "gamma", 1.0);
  if (p.contains("alpha")) {
    const ScalarFn a = parse_scalar_function(p["alpha"]);
    out.alpha = [a](double, double x) { return a(x); };
  }
  out.alpha_sup = get_or(p, "alpha_sup", 1.0);
  if (p.contains("C")) {
    const auto& c = p["C"];
    require(c.is_array() && c.size() == 2, Errc::config_invalid, "C must be [lower, upper]");
    out.C.lower = number_or_inf(c[0], -std::numeric_limits<double>::infinity());
    out.C.upper = number_or_inf(c[1], std::numeric_limits<double>::infinity());
  }
  if (p.contains("payoff")) {
    out.payoff = parse_scalar_function(p["payoff"]);
  } else {
    out.payoff = ramp_payoff(get_or(p, "strike", 0.0), get_or(p, "width", 1.0));
  }
  out.payoff_sup = get_or(p, "payoff_sup", 1.0);
  return out;
}

}  // namespace

RegimeSwitchingParams parse_regime_switching_params(const json& p) {
  try {
    RegimeSwitchingParams r;
    r.k1 = get_or(p, "k1", 0.0);
    r.k2 = get_or(p, "k2", 0.0);
    r.alpha = get_or(p, "alpha", 0.5);
    r.beta = get_or(p, "beta", 1.0);
    if (p.contains("h")) r.h = parse_scalar_function(p["h"]);
    if (p.contains("phi")) r.phi = parse_scalar_function(p["phi"]);
    r.h_prime = optional_fn(p, "h_prime");
    r.phi_prime = optional_fn(p, "phi_prime");
    r.h_sup = get_or(p, "h_sup", 0.0);
    r.phi_sup = get_or(p, "phi_sup", 1.0);
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, e.what());
  }
}

PricingModelPair load_pricing_models(const json& doc) {
  const json params = doc.value("params", json::object());
  return builtin_pricing_model(parse_pricing_params(params), get_or(params, "T", 1.0),
                               get_or(params, "x0", 0.0));
}

ModelInstance load_model(const json& doc) {
  try {
    if (doc.contains("custom")) return load_custom(doc["custom"]);
    require(doc.contains("builtin"), Errc::config_invalid,
            "model needs either 'builtin' or 'custom'");
    const auto name = doc["builtin"].get<std::string>();
    const json p = doc.value("params", json::object());
    const double T = get_or(p, "T", 1.0);
    const double x0 = get_or(p, "x0", 0.0);
    if (name == "worked_example") return builtin_worked_example(T, x0);
    if (name == "heat") {
      return builtin_heat(parse_scalar_function(p.at("terminal")), optional_fn(p, "terminal_prime"),
                          optional_fn(p, "terminal_second"), T, x0);
    }
    if (name == "ou") {
      const ScalarFn phi = p.contains("terminal") ? parse_scalar_function(p["terminal"])
                                                  : ScalarFn([](double) { return 0.0; });
      return builtin_ou(get_or(p, "beta", 1.0), get_or(p, "sigma", 1.0), phi, T, x0);
    }
    if (name == "regime_switching") {
      return builtin_regime_switching(parse_regime_switching_params(p), T, x0);
    }
    if (name == "pricing") {
      auto pair = load_pricing_models(doc);
      return get_or<std::string>(p, "which", "with_claim") == "no_claim" ? pair.no_claim
                                                                         : pair.with_claim;
    }
    throw Error(Errc::config_invalid, "unknown builtin model '" + name + "'");
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, e.what());
  }
}

}  // namespace fbsde
