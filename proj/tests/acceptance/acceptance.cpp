// Acceptance run: one PASS/FAIL line per criterion. Reports go to
// <dir>/criterion_<n>.json (default dir: acceptance_reports).
//
//   acceptance [dir] [--threads N] [--rerun-threads N]

#include "fbsde/io.hpp"
#include "fbsde/parallel.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

using namespace fbsde;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string summary;
  json report;  ///< numbers only, no timings: compared byte for byte across thread counts
  double seconds = 0.0;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome(int threads)> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

// The time slice at index m of streamed paths, without storing whole paths.
std::vector<double> slice(const SimulationSpec& spec, std::size_t n, std::uint64_t seed, int m,
                          int threads) {
  std::vector<double> out(n);
  stream_paths(spec, n, seed, [&](const PathView& v) { out[v.index] = v.X[static_cast<std::size_t>(m)]; },
               threads);
  return out;
}

Outcome field_oracle(int threads) {
  const auto model = builtin_worked_example(1.0, 0.0);
  const auto grid = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, 400, 400);
  set_default_threads(threads);
  const auto t0 = std::chrono::steady_clock::now();
  const auto field = solve_decoupling_field(model, grid);
  const double solve_s = seconds_since(t0);
  set_default_threads(1);
  double sup = 0.0;
  for (int k = 0; k <= grid.time.steps; ++k) {
    const double t = grid.time.time(k);
    for (int j = 0; j <= grid.space.cells; ++j) {
      sup = std::max(sup, std::abs(field.v(k, j) - oracle::worked_example_field(t, grid.space.x(j), 1.0)));
    }
  }
  Outcome o;
  o.report = {{"sup_error", sup}, {"tolerance", 1e-3}, {"grid", to_json(grid)}};
  o.pass = sup <= 1e-3 && solve_s <= 30.0;
  o.summary = fmt("sup error %.3g (<= 1e-3), solve %.1f s (<= 30 s)", sup, solve_s);
  return o;
}

Outcome gaussian_collapse(int threads) {
  SimulationSpec spec;
  spec.time = {0.0, 1.0, 512};
  const auto t0 = std::chrono::steady_clock::now();
  const auto X = slice(spec, 1'000'000, 2024, 512, threads);
  KdeConfig kc;
  kc.seed = 2024;
  const double t = spec.time.T;
  const auto b = gaussian_sandwich_check(X, t, t, kc);
  const double secs = seconds_since(t0);
  double gap = 0.0;
  for (std::size_t i = 0; i < b.lower.size(); ++i) gap = std::max(gap, std::abs(b.upper[i] - b.lower[i]));
  const double inside = 1.0 - b.violation_fraction;
  Outcome o;
  o.report = {{"t", t}, {"inside_fraction", inside}, {"envelope_gap", gap}, {"bound", to_json(b)}};
  o.pass = inside >= 0.99 && gap == 0.0 && secs <= 60.0;
  o.summary = fmt("inside on %.4f of resolvable probes (>= 0.99), %.1f s (<= 60 s)", inside, secs);
  return o;
}

Outcome y_sandwich(int threads) {
  const auto model = builtin_worked_example(1.0, 0.0);
  const auto grid = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, 256, 400);
  const auto field = solve_decoupling_field(model, grid);
  const int m = 128;
  const double t = grid.time.time(m);
  const auto X = slice(forward_spec(model, field, grid.time), 1'000'000, 7, m, threads);
  std::vector<double> Y(X.size());
  parallel_for(X.size(), [&](std::size_t i) { Y[i] = field.v_fn(t, X[i]); }, threads);
  // Only slice m of the occupied region enters the Y envelopes.
  OccupiedRegion region{grid.time, std::vector<double>(grid.time.nodes(), grid.space.x_min),
                        std::vector<double>(grid.time.nodes(), grid.space.x_max)};
  region.lo[m] = *std::min_element(X.begin(), X.end());
  region.hi[m] = *std::max_element(X.begin(), X.end());
  KdeConfig kc;
  kc.seed = 7;
  const auto b = density_bounds_Y(Y, m, region, field, model, kc);
  Outcome o;
  o.report = {{"t", t}, {"bound", to_json(b)}};
  o.pass = b.violation_fraction <= 0.05 && b.tails.violations == 0;
  o.summary = fmt("envelope violations %.4f (<= 0.05), tail violations %.0f (== 0)",
                  b.violation_fraction, b.tails.violations);
  return o;
}

Outcome comonotonicity(int threads) {
  const auto grid = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, 256, 400);
  const auto m1 = builtin_worked_example(1.0, 0.0);
  const auto up = builtin_heat([](double x) { return sigmoid(2.0 * x); }, {}, {}, 1.0, 0.0, "heat_up");
  const auto down = builtin_heat([](double x) { return sigmoid(-2.0 * x); }, {}, {}, 1.0, 0.0, "heat_down");
  const auto f1 = solve_decoupling_field(m1, grid);
  const auto fu = solve_decoupling_field(up, grid);
  const auto fd = solve_decoupling_field(down, grid);
  const auto co = comonotonicity_check(m1, f1, up, fu, grid.time, 100'000, 5, 1e-8, threads);
  const auto anti = comonotonicity_check(m1, f1, down, fd, grid.time, 100'000, 5, 1e-8, threads);
  Outcome o;
  o.report = {{"comonotone", to_json(co)}, {"anti", to_json(anti)}};
  o.pass = co.min_product >= -1e-8 && anti.max_product <= 1e-8;
  o.summary = fmt("min Z1 Z2 %.3g (>= -1e-8), anti control max %.3g (<= 1e-8)", co.min_product,
                  anti.max_product);
  return o;
}

struct MalliavinFigures {
  double diagonal = 0.0, diagonal_tol = 0.0, mean_DX_T = 0.0, fd_mean = 0.0, rel = 0.0;
};

MalliavinFigures malliavin_figures(const ModelInstance& model, std::size_t n, std::uint64_t seed,
                                   int threads) {
  const auto grid = SpaceTimeGrid::centered(model.x0, 6.0, 0.0, 1.0, 128, 400);
  const auto field = solve_decoupling_field(model, grid);
  const auto spec = forward_spec(model, field, grid.time);
  const auto paths = simulate_forward(spec, n, seed, threads);
  const auto triple = reconstruct_triple(field, paths, model.coefficients.diffusion, threads);
  auto ms = malliavin_forward(paths, field, model, DriftGradientRoute::automatic, threads);
  malliavin_backward(triple, field, model, ms, threads);
  const int M = grid.time.steps;
  MalliavinFigures r;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (int m = 0; m < M; ++m) r.diagonal += std::abs(ms.DY(i, m, m) - triple.Z(i, m));
    r.mean_DX_T += ms.DX(i, 0, M) / ms.sig(i, 0);  // D_0X_T = sigma(x0) dX_T/dx0
  }
  r.diagonal /= static_cast<double>(n) * M;
  r.mean_DX_T /= static_cast<double>(n);
  r.diagonal_tol = 2.0 * field.interpolation_tol_vx;
  r.fd_mean = finite_difference_flow(spec, 1e-3, n, seed, M, {}, threads).mean();
  r.rel = std::abs(r.mean_DX_T - r.fd_mean) / std::abs(r.fd_mean);
  return r;
}

json to_json(const MalliavinFigures& f) {
  return {{"diagonal_mean_abs", f.diagonal},
          {"diagonal_tolerance", f.diagonal_tol},
          {"mean_D0X_T_over_sigma", f.mean_DX_T},
          {"finite_difference_mean", f.fd_mean},
          {"flow_relative_error", f.rel}};
}

Outcome malliavin(int threads) {
  const auto we = malliavin_figures(builtin_worked_example(1.0, 0.0), 100'000, 13, threads);
  const auto ou = malliavin_figures(builtin_ou(0.8, 0.7, [](double x) { return sigmoid(x); }, 1.0, 0.3),
                                    100'000, 13, threads);
  Outcome o;
  o.report = {{"worked_example", to_json(we)}, {"ou", to_json(ou)}};
  o.pass = we.diagonal <= we.diagonal_tol && ou.diagonal <= ou.diagonal_tol && we.rel <= 0.01 &&
           ou.rel <= 0.01;
  o.summary = fmt("diagonal/tolerance %.3g, worst flow relative error %.3g (<= 0.01)",
                  std::max(we.diagonal / we.diagonal_tol, ou.diagonal / ou.diagonal_tol),
                  std::max(we.rel, ou.rel));
  return o;
}

Outcome local_time(int threads) {
  const SpaceTimeFn phi = [](double, double z) { return z; };
  const SpaceTimeFn phi_x = [](double, double) { return 1.0; };
  const int finest = 1024;
  std::vector<double> steps, rms, means, ses;
  for (int s : {256, 512, 1024}) {
    SimulationSpec spec;
    spec.time = {0.0, 1.0, s};
    spec.noise_substeps = finest / s;
    const auto li = spacetime_local_time_integral(phi, spec, 100'000, 17, phi_x, threads);
    steps.push_back(s);
    rms.push_back(li.rms_gap);
    means.push_back(li.stats.mean);
    ses.push_back(li.stats.se);
  }
  const double order = std::log2(rms.front() / rms.back()) / 2.0;
  const double z = std::abs(means.back() + 1.0) / ses.back();
  Outcome o;
  o.report = {{"steps", steps}, {"rms_gap", rms}, {"mean", means}, {"se", ses}, {"z_score", z},
              {"order", order}};
  o.pass = z <= 4.0 && order >= 0.4;
  o.summary = fmt("|mean + T| = %.2f SE (<= 4), order %.3f (>= 0.4)", z, order);
  return o;
}

Outcome zvonkin(int threads) {
  const DiffusionFn unit = [](double, double) { return 1.0; };
  CorrespondenceConfig cc;
  cc.threads = threads;
  const std::size_t n = 20'000;

  // Constant drift: error under dt-halving on shared noise, KS at the finer step.
  auto constant = [&](int steps) {
    const auto g = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, steps, 240);
    const auto b = two_level_drift(g, 0.8, 0.8, 0.0);
    const auto zt = build_transform(b, unit);
    const auto c = transformed_coefficients(zt, unit, 1.0);
    auto cfg = cc;
    cfg.noise_substeps = 2048 / steps;
    return correspondence_check(b, unit, zt, c, 0.0, g.time, n, 23, cfg);
  };
  const auto coarse = constant(1024), fine = constant(2048);
  const double ratio = fine.sup_rms / coarse.sup_rms;

  // Hoelder two-level drift at dt = T/2048; mu must be found by doubling.
  const auto g = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, 2048, 240);
  const auto b = two_level_drift(g, 1.0, -1.0, 0.2, 0.1, 0.5);
  const auto zt = build_transform(b, unit);
  const auto c = transformed_coefficients(zt, unit, 1.0);
  const auto holder = correspondence_check(b, unit, zt, c, 0.0, g.time, n, 29, cc);

  Outcome o;
  o.report = {{"constant_coarse", to_json(coarse)},
              {"constant_fine", to_json(fine)},
              {"ratio", ratio},
              {"holder", to_json(holder)},
              {"holder_transform", to_json(zt)}};
  o.pass = std::abs(ratio - 0.5) <= 0.15 && fine.ks_pass && holder.ks_pass && fine.sup_DU <= 0.5 &&
           holder.sup_DU <= 0.5 && zt.doublings >= 1;
  o.summary = fmt("rms ratio %.3f (0.5 +- 30%%), worst KS/critical %.3f (< 1)", ratio,
                  std::max(fine.ks / fine.ks_critical, holder.ks / holder.ks_critical));
  o.summary += fmt(", sup|DU| %.3f at mu %.0f", holder.sup_DU, zt.mu);
  return o;
}

Outcome skorohod(int threads) {
  const double T = 1.0;
  const std::size_t n = 1'000'000;
  SimulationSpec spec;
  spec.time = {0.0, T, 64};
  const auto W = slice(spec, n, 31, 64, threads);
  SkorohodInputs in;
  in.F = W;
  in.W_T = W;
  in.gamma.assign(n, T);  // D_sW_T = 1
  in.second.assign(n, 0.0);
  SkorohodConfig sc;
  sc.bins = 50;
  const auto d = skorohod_density_representation(in, sc);
  const double half = 1.959963984540054 * std::sqrt(T);
  double sup = 0.0;
  for (std::size_t i = 0; i < d.density.x.size(); ++i) {
    const double x = d.density.x[i];
    if (std::abs(x) <= half) {
      sup = std::max(sup, std::abs(d.density.density[i] / oracle::normal_pdf(x, 0.0, T) - 1.0));
    }
  }
  Outcome o;
  o.report = {{"sup_relative_error", sup}, {"bins", sc.bins}, {"mass", d.density.mass()},
              {"anchor", d.anchor}};
  o.pass = sup <= 0.03;
  o.summary = fmt("sup relative error %.3g on the central 95%% (<= %.2f)", sup, 0.03);
  return o;
}

Outcome pricing_identities(int threads) {
  // F = 0 under a constraint and a state-dependent alpha.
  PricingParams zero;
  zero.lambda = 0.1;
  zero.lambda_hat = 0.3;
  zero.sigma = 0.8;
  zero.alpha = [](double, double x) { return 0.3 * std::tanh(x); };
  zero.alpha_sup = 0.3;
  zero.gamma = 2.0;
  zero.C = {0.0, inf};
  const auto g0 = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, 128, 240);
  const double sup_p = price_and_hedge(builtin_pricing_model(zero, 1.0, 0.0), g0, {}, threads)
                           .p.cwiseAbs()
                           .maxCoeff();

  // alpha = 0, C = R: the price is the expected payoff under the forward law.
  PricingParams lin;
  lin.lambda = lin.lambda_hat = 0.2;
  lin.sigma = 0.6;
  lin.payoff = ramp_payoff(0.0, 0.5);
  lin.payoff_sup = 1.0;
  const auto gl = SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, 256, 480);
  const auto sl = price_and_hedge(builtin_pricing_model(lin, 1.0, 0.0), gl, {}, threads);
  const double drift = -(lin.lambda + 0.5 * lin.sigma * lin.sigma);
  double linear_err = 0.0;
  for (int m = 0; m <= gl.time.steps; m += 8) {
    const double tau = 1.0 - gl.time.time(m);
    for (int j = 0; j <= gl.space.cells; j += 4) {
      const double x = gl.space.x(j);
      const double expect = oracle::normal_expectation_simpson(
          [&](double y) { return lin.payoff(y); }, x + drift * tau, lin.sigma * std::sqrt(tau));
      linear_err = std::max(linear_err, std::abs(sl.p(m, j) - expect));
    }
  }

  // Indifference identity on a constrained, nonlinear case.
  PricingParams con;
  con.lambda = 0.3;
  con.lambda_hat = 0.1;
  con.R = 0.5;
  con.sigma = 1.0;
  con.alpha = [](double, double x) { return 0.4 * std::tanh(x); };
  con.alpha_sup = 0.4;
  con.gamma = 1.5;
  con.C = {-1.0, 1.0};
  con.payoff = ramp_payoff(0.0, 1.0);
  con.payoff_sup = 1.0;
  const auto sc = price_and_hedge(builtin_pricing_model(con, 1.0, 0.0), g0, {}, threads);
  const double residual = value_functions(sc, {-2.0, -1.0, 0.0, 1.0, 2.0}).residual;

  const double driver = pricing::indifference_driver(-1.0, 0.2, 1.0, {0.0, inf});

  Outcome o;
  o.report = {{"zero_payoff_sup_p", sup_p},
              {"linear_sup_error", linear_err},
              {"indifference_residual", residual},
              {"driver_value", driver}};
  o.pass = sup_p <= 1e-10 && linear_err <= 1e-3 && residual <= 1e-10 && driver == -0.5;
  o.summary = fmt("sup|p| (F = 0) %.3g, linear error %.3g", sup_p, linear_err);
  o.summary += fmt(", residual %.3g, driver %.17g", residual, driver);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::filesystem::path dir = "acceptance_reports";
  int threads = 1, rerun_threads = 4;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--threads" && i + 1 < argc) threads = std::stoi(argv[++i]);
    else if (a == "--rerun-threads" && i + 1 < argc) rerun_threads = std::stoi(argv[++i]);
    else dir = a;
  }

  const std::vector<Criterion> criteria = {
      {1, "decoupling-field oracle", field_oracle},
      {2, "Gaussian collapse", gaussian_collapse},
      {3, "Y-density sandwich", y_sandwich},
      {4, "comonotonicity", comonotonicity},
      {5, "Malliavin diagonal and flow", malliavin},
      {6, "local-time decomposition", local_time},
      {7, "Zvonkin correspondence", zvonkin},
      {8, "Skorohod density", skorohod},
      {9, "pricing identities", pricing_identities},
  };

  auto run = [](const Criterion& c, int t) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(t);
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("error: ") + e.what();
      o.report = {{"error", e.what()}};
    }
    o.seconds = seconds_since(t0);
    return o;
  };

  int failures = 0;
  std::vector<std::string> texts;
  for (const auto& c : criteria) {
    const auto o = run(c, threads);
    texts.push_back(to_text(o.report));
    write_text(dir / ("criterion_" + std::to_string(c.id) + ".json"), texts.back());
    failures += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s [%.1f s, %d thread(s)]\n", o.pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), o.summary.c_str(), o.seconds, threads);
    std::fflush(stdout);
  }

  // Every report again at another worker count; bytes must agree.
  int differing = 0;
  double rerun_s = 0.0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto o = run(criteria[i], rerun_threads);
    rerun_s += o.seconds;
    if (to_text(o.report) != texts[i]) {
      ++differing;
      std::printf("     criterion %d differs at %d threads\n", criteria[i].id, rerun_threads);
    }
  }
  const bool same = differing == 0;
  failures += same ? 0 : 1;
  std::printf("%s 10 determinism: %zu of %zu reports byte-identical at %d vs %d threads [%.1f s]\n",
              same ? "PASS" : "FAIL", criteria.size() - differing, criteria.size(), threads,
              rerun_threads, rerun_s);
  return failures == 0 ? 0 : 1;
}
