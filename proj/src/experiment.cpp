#include "fbsde/experiment.hpp"

#include "fbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace fbsde {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Checks in the order they run; the flag says whether the check samples paths.
const std::vector<std::pair<std::string, bool>>& check_table() {
  static const std::vector<std::pair<std::string, bool>> table = {
      {"field", false},      {"field_oracle", false}, {"comparison", false},
      {"simulate", true},    {"triple", true},        {"comonotone", true},
      {"density", true},     {"bounds_X", true},      {"bounds_Y", true},
      {"bounds_Z", true},    {"malliavin", true},     {"localtime", true},
      {"zvonkin", true},     {"skorohod", true},      {"price", false},
      {"regime_switching", true}};
  return table;
}

template <typename T>
T option(const json& o, const char* key, T fallback) {
  return o.contains(key) ? o.at(key).get<T>() : fallback;
}

std::span<const double> column_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// E[g(mean + sd Z)] with a 64-node Gauss-Hermite rule.
double normal_expectation(const std::function<double(double)>& g, double mean, double sd) {
  static const auto rule = [] {
    constexpr int n = 64;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    std::vector<std::pair<double, double>> r;
    for (int i = 0; i < n; ++i) {
      const double v0 = eig.eigenvectors()(0, i);
      r.emplace_back(eig.eigenvalues()(i), v0 * v0);
    }
    return r;
  }();
  double acc = 0.0;
  for (const auto& [z, w] : rule) acc += w * g(mean + sd * z);
  return acc;
}

std::vector<int> preview_rows(int steps) {
  std::set<int> rows{0, steps / 4, steps / 2, 3 * steps / 4, steps};
  return {rows.begin(), rows.end()};
}

}  // namespace

ExitCode exit_code_for(Errc code) {
  switch (code) {
    case Errc::config_invalid:
    case Errc::missing_reports:
    case Errc::invalid_argument:
    case Errc::invalid_interval:
    case Errc::missing_derivatives:
    case Errc::missing_second_derivatives:
    case Errc::grid_mismatch:
      return ExitCode::config_error;
    default:
      return ExitCode::numerical_failure;
  }
}

const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, mc] : check_table()) n.push_back(name);
    return n;
  }();
  return names;
}

bool needs_monte_carlo(const std::string& check) {
  for (const auto& [name, mc] : check_table()) {
    if (name == check) return mc;
  }
  throw Error(Errc::config_invalid, "unknown check '" + check + "'");
}

ExperimentConfig ExperimentConfig::parse(const json& doc) {
  try {
    require(doc.is_object(), Errc::config_invalid, "config must be a JSON object");
    ExperimentConfig c;
    c.name = doc.value("experiment", c.name);
    require(!c.name.empty() && c.name.find('/') == std::string::npos, Errc::config_invalid,
            "experiment name must be a plain directory name");
    if (doc.contains("model")) c.model = doc["model"];
    if (doc.contains("pricing")) c.pricing = doc["pricing"];
    if (doc.contains("grid")) {
      const auto& g = doc["grid"];
      c.grid.half_width = option(g, "half_width", c.grid.half_width);
      c.grid.time_steps = option(g, "time_steps", c.grid.time_steps);
      c.grid.space_cells = option(g, "space_cells", c.grid.space_cells);
    }
    require(c.grid.half_width > 0 && c.grid.time_steps > 0 && c.grid.space_cells > 1,
            Errc::config_invalid, "grid needs half_width > 0, time_steps > 0, space_cells > 1");
    if (doc.contains("mc")) {
      const auto& m = doc["mc"];
      c.mc.n_paths = option<std::size_t>(m, "n_paths", c.mc.n_paths);
      c.mc.time_steps = option(m, "time_steps", c.mc.time_steps);
      if (m.contains("seed")) c.mc.seed = m["seed"].get<std::uint64_t>();
    }
    require(c.mc.n_paths > 0 && c.mc.time_steps > 0, Errc::config_invalid,
            "mc needs n_paths > 0 and time_steps > 0");
    c.checks = doc.value("checks", std::vector<std::string>{});
    require(!c.checks.empty(), Errc::config_invalid, "config lists no checks");
    bool mc = false;
    for (const auto& name : c.checks) mc = needs_monte_carlo(name) || mc;
    require(!mc || c.mc.seed.has_value(), Errc::config_invalid,
            "mc.seed is required when a Monte Carlo check is requested");
    const bool needs_model = std::any_of(c.checks.begin(), c.checks.end(), [](const auto& n) {
      return n != "price" && n != "regime_switching" && n != "skorohod";
    });
    require(!needs_model || !c.model.is_null(), Errc::config_invalid, "config has no model");
    require(std::find(c.checks.begin(), c.checks.end(), "price") == c.checks.end() ||
                !c.pricing.is_null(),
            Errc::config_invalid, "the price check needs a 'pricing' section");
    c.options = doc.value("options", json::object());
    c.output = doc.value("output", std::string("out"));
    c.threads = doc.value("threads", 1);
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const fs::path& file) {
  std::ifstream is(file);
  require(static_cast<bool>(is), Errc::config_invalid, "cannot read " + file.string());
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, file.string() + ": " + e.what());
  }
  return parse(doc);
}

json ExperimentConfig::options_for(const std::string& check) const {
  return options.contains(check) ? options[check] : json::object();
}

struct Experiment::Cache {
  std::optional<ModelInstance> model;
  std::optional<SpaceTimeGrid> grid;
  std::optional<DecouplingField> field;
  std::optional<DecouplingField> path_field;
  std::optional<PathEnsemble> paths;
  std::optional<TripleEnsemble> triple;
};

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), cache_(std::make_unique<Cache>()) {}
Experiment::~Experiment() = default;
Experiment::Experiment(Experiment&&) noexcept = default;
Experiment& Experiment::operator=(Experiment&&) noexcept = default;

std::uint64_t Experiment::seed() const {
  require(cfg_.mc.seed.has_value(), Errc::config_invalid, "no seed configured");
  return *cfg_.mc.seed;
}

const ModelInstance& Experiment::model() {
  if (!cache_->model) cache_->model = load_model(cfg_.model);
  return *cache_->model;
}

const SpaceTimeGrid& Experiment::field_grid() {
  if (!cache_->grid) {
    const auto& m = model();
    cache_->grid = SpaceTimeGrid::centered(m.x0, cfg_.grid.half_width, m.t0, m.T,
                                           cfg_.grid.time_steps, cfg_.grid.space_cells);
  }
  return *cache_->grid;
}

const DecouplingField& Experiment::field() {
  if (!cache_->field) cache_->field = solve_decoupling_field(model(), field_grid());
  return *cache_->field;
}

const DecouplingField& Experiment::path_field() {
  if (cfg_.grid.time_steps == cfg_.mc.time_steps) return field();
  if (!cache_->path_field) {
    auto g = field_grid();
    g.time.steps = cfg_.mc.time_steps;
    cache_->path_field = solve_decoupling_field(model(), g);
  }
  return *cache_->path_field;
}

const PathEnsemble& Experiment::paths() {
  if (!cache_->paths) {
    const auto& m = model();
    const TimeGrid time{m.t0, m.T, cfg_.mc.time_steps};
    cache_->paths = simulate_forward(forward_spec(m, field(), time), cfg_.mc.n_paths, seed(),
                                     cfg_.threads);
  }
  return *cache_->paths;
}

const TripleEnsemble& Experiment::triple() {
  if (!cache_->triple) {
    cache_->triple =
        reconstruct_triple(field(), paths(), model().coefficients.diffusion, cfg_.threads);
  }
  return *cache_->triple;
}

namespace {

StageResult field_stage(Experiment& ex) {
  StageResult r;
  const auto& f = ex.field();
  bool converged = true;
  int iterations = 0;
  double worst_residual = 0.0;
  for (const auto& s : f.iteration_report) {
    converged = converged && s.converged;
    iterations += s.iterations;
    worst_residual = std::max(worst_residual, s.residual);
  }
  r.pass = converged;
  r.report = {{"picard_converged", converged},
              {"picard_iterations", iterations},
              {"max_step_residual", worst_residual},
              {"sup_abs_v", f.sup_abs_v()},
              {"interpolation_tol_v", f.interpolation_tol_v},
              {"interpolation_tol_vx", f.interpolation_tol_vx},
              {"gradient_bound", to_json(f.gradient_bound)},
              {"assumptions", to_json(audit_assumptions(ex.model(), ex.field_grid()))}};
  const auto rows = preview_rows(f.grid.time.steps);
  r.curves.emplace_back("v", slices(f.grid.space, f.v, rows, "v"));
  return r;
}

StageResult field_oracle_stage(Experiment& ex, const json& o) {
  StageResult r = field_stage(ex);
  const auto& m = ex.model();
  const auto& f = ex.field();
  const bool known = m.coefficients.metadata.value("builtin", "") == "worked_example";
  const double tol = option(o, "tolerance", 1e-3);
  r.report["oracle"] = known ? "exp(T-t) E[phi(x + (T-t) + W_{T-t})]" : "none for this model";
  if (!known) {
    r.asserted = false;
    return r;
  }
  const auto& phi = m.coefficients.terminal;
  double sup = 0.0;
  const int stride = option(o, "stride", 1);
  for (int k = 0; k <= f.grid.time.steps; k += stride) {
    const double tau = m.T - f.grid.time.time(k);
    for (int j = 0; j <= f.grid.space.cells; j += stride) {
      const double x = f.grid.space.x(j);
      const double exact = tau <= 0.0 ? phi(x)
                                      : std::exp(tau) * normal_expectation(phi, x + tau, std::sqrt(tau));
      sup = std::max(sup, std::abs(f.v(k, j) - exact));
    }
  }
  r.report["sup_error"] = sup;
  r.report["tolerance"] = tol;
  r.pass = r.pass && sup <= tol;
  return r;
}

StageResult comparison_stage(Experiment& ex, const json& o) {
  StageResult r;
  require(o.contains("model2"), Errc::config_invalid, "comparison needs options.model2");
  const auto other = solve_decoupling_field(load_model(o["model2"]), ex.field_grid());
  const double tol = option(o, "tolerance", 1e-8);
  const auto c = comparison_check(ex.field(), other, tol);
  r.report = to_json(c);
  r.pass = c.fraction == 1.0;
  return r;
}

StageResult simulate_stage(Experiment& ex) {
  StageResult r;
  r.asserted = false;
  const auto& p = ex.paths();
  const auto M = p.time.steps;
  std::vector<double> t, mean, sd;
  for (int m = 0; m <= M; ++m) {
    const Vector col = p.X.col(m);
    const auto s = mean_se(column_span(col));
    t.push_back(p.time.time(m));
    mean.push_back(s.mean);
    sd.push_back(s.sd);
  }
  r.report = {{"paths", p.paths()},
              {"scheme", p.scheme},
              {"time_steps", M},
              {"X_T", {{"mean", mean.back()}, {"sd", sd.back()}}},
              {"exits", to_json(p.exits)},
              {"noise", to_json(p.sanity)}};
  CsvTable tab;
  tab.add("t", std::move(t));
  tab.add("mean", std::move(mean));
  tab.add("sd", std::move(sd));
  r.curves.emplace_back("moments", std::move(tab));
  return r;
}

StageResult triple_stage(Experiment& ex) {
  StageResult r;
  r.asserted = false;
  const auto& tr = ex.triple();
  const auto res = bsde_residual(tr, ex.model());
  std::vector<double> t, y, z;
  for (int m = 0; m <= tr.time.steps; ++m) {
    t.push_back(tr.time.time(m));
    y.push_back(tr.Y.col(m).mean());
    z.push_back(tr.Z.col(m).mean());
  }
  r.report = {{"Y0", tr.Y(0, 0)}, {"residual", to_json(res)}};
  CsvTable tab;
  tab.add("t", std::move(t));
  tab.add("mean_Y", std::move(y));
  tab.add("mean_Z", std::move(z));
  r.curves.emplace_back("means", std::move(tab));
  return r;
}

StageResult comonotone_stage(Experiment& ex, const json& o) {
  StageResult r;
  require(o.contains("model2"), Errc::config_invalid, "comonotone needs options.model2");
  const auto m2 = load_model(o["model2"]);
  const auto f2 = solve_decoupling_field(m2, ex.field_grid());
  const auto& m = ex.model();
  const TimeGrid time{m.t0, m.T, ex.config().mc.time_steps};
  const double tol = option(o, "tolerance", 1e-8);
  const auto expect = option<std::string>(o, "expect", "comonotone");
  require(expect == "comonotone" || expect == "anti", Errc::config_invalid,
          "comonotone.expect must be 'comonotone' or 'anti'");
  const auto c = comonotonicity_check(m, ex.field(), m2, f2, time, ex.config().mc.n_paths,
                                      ex.seed(), tol, ex.config().threads);
  r.report = to_json(c);
  r.report["expect"] = expect;
  r.pass = expect == "comonotone" ? c.min_product >= -tol : c.max_product <= tol;
  return r;
}

int time_index(const TimeGrid& time, const json& o) {
  const double t = option(o, "t", 0.5 * (time.t0 + time.T));
  return std::clamp(time.nearest_index(t), 1, time.steps);
}

StageResult density_stage(Experiment& ex, const json& o) {
  StageResult r;
  r.asserted = false;
  const auto& p = ex.paths();
  const int m = time_index(p.time, o);
  const Vector col = p.X.col(m);
  const auto d = kde(column_span(col));
  r.report = {{"t", p.time.time(m)},
              {"bandwidth", d.bandwidth},
              {"mass", d.mass()},
              {"n_samples", d.n_samples}};
  r.curves.emplace_back("kde", density_curve(d));
  return r;
}

StageResult bounds_stage(Experiment& ex, const json& o, char which) {
  StageResult r;
  const auto& p = ex.paths();
  const auto& tr = ex.triple();
  const int m = time_index(p.time, o);
  const auto region = OccupiedRegion::of(p.X, p.time);
  const Vector col = which == 'X' ? Vector(p.X.col(m)) : which == 'Y' ? Vector(tr.Y.col(m)) : Vector(tr.Z.col(m));
  const auto samples = column_span(col);
  KdeConfig kc;
  kc.seed = ex.seed();
  const auto& f = ex.path_field();
  BoundReport b = which == 'X'   ? density_bounds_X(samples, m, region, f, ex.model(), kc)
                  : which == 'Y' ? density_bounds_Y(samples, m, region, f, ex.model(), kc)
                                 : density_bounds_Z(samples, m, region, f, ex.model(), kc);
  // Overrides exist for negative controls.
  if (o.contains("l") || o.contains("L")) {
    const auto c = b.constants;
    b = gaussian_sandwich_check(samples, option(o, "l", b.l), option(o, "L", b.L), kc);
    b.constants = c;
    b.constants.rule += " (overridden)";
  }
  const double max_fraction = option(o, "max_violation_fraction", 0.05);
  r.report = to_json(b);
  r.report["component"] = std::string(1, which);
  r.report["t"] = p.time.time(m);
  r.report["max_violation_fraction"] = max_fraction;
  r.pass = b.violation_fraction <= max_fraction && b.tails.violations == 0;
  r.curves.emplace_back("envelopes", bound_curves(b));
  return r;
}

StageResult malliavin_stage(Experiment& ex, const json& o) {
  StageResult r;
  const auto& p = ex.paths();
  const auto& tr = ex.triple();
  const int threads = ex.config().threads;
  auto ms = malliavin_forward(p, ex.field(), ex.model(), DriftGradientRoute::automatic, threads);
  malliavin_backward(tr, ex.field(), ex.model(), ms, threads);
  const int M = p.time.steps;
  const auto N = static_cast<Eigen::Index>(p.paths());
  double diag = 0.0, dx_mean = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (int m = 0; m < M; ++m) diag += std::abs(ms.DY(i, m, m) - tr.Z(i, m));
    dx_mean += ms.DX(i, 0, M) / ms.sig(i, 0);  // D_0X_T = sigma(x0) dX_T/dx0
  }
  diag /= static_cast<double>(N) * M;
  dx_mean /= static_cast<double>(N);
  const double h = option(o, "h", 1e-3);
  const Vector fd = finite_difference_flow(forward_spec(ex.model(), ex.field(), p.time), h,
                                           p.paths(), ex.seed(), M, {}, threads);
  const double fd_mean = fd.mean();
  const double rel = std::abs(dx_mean - fd_mean) / std::abs(fd_mean);
  const double diag_tol = 2.0 * ex.field().interpolation_tol_vx;
  const double fd_tol = option(o, "flow_tolerance", 0.01);

  // Malliavin covariance of X_T: D_sX_T against E[D_sX_T | X_s].
  const int stride = std::max(1, M / 32);
  std::vector<int> cols;
  for (int m = 0; m < M; m += stride) cols.push_back(m);
  Matrix DF(N, static_cast<Eigen::Index>(cols.size())), Xs(DF.rows(), DF.cols());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < N; ++i) {
      DF(i, c) = ms.DX(i, cols[k], M);
      Xs(i, c) = p.X(i, cols[k]);
    }
  }
  json cov;
  try {
    cov = to_json(covariance_bounds(DF, Xs, stride * p.time.dt()));
  } catch (const Error& e) {
    cov = {{"error", e.what()}};
  }
  r.report = {{"diagonal_mean_abs", diag},
              {"diagonal_tolerance", diag_tol},
              {"mean_D0X_T_over_sigma", dx_mean},
              {"finite_difference_mean", fd_mean},
              {"finite_difference_h", h},
              {"flow_relative_error", rel},
              {"flow_tolerance", fd_tol},
              {"covariance", cov}};
  r.pass = diag <= diag_tol && rel <= fd_tol;
  return r;
}

StageResult localtime_stage(Experiment& ex, const json& o) {
  StageResult r;
  const auto& cfg = ex.config();
  const double x0 = cfg.model.is_null() ? 0.0 : ex.model().x0;
  const double t0 = cfg.model.is_null() ? 0.0 : ex.model().t0;
  const double T = cfg.model.is_null() ? 1.0 : ex.model().T;
  const int levels = option(o, "refinements", 3);
  const SpaceTimeFn phi = [](double, double z) { return z; };
  const SpaceTimeFn phi_x = [](double, double) { return 1.0; };
  std::vector<double> steps, rms, means, ses;
  const int finest = cfg.mc.time_steps << (levels - 1);
  for (int k = 0; k < levels; ++k) {
    SimulationSpec spec;
    spec.x0 = x0;
    spec.time = {t0, T, cfg.mc.time_steps << k};
    spec.noise_substeps = finest / spec.time.steps;
    const auto li = spacetime_local_time_integral(phi, spec, cfg.mc.n_paths, ex.seed(), phi_x,
                                                  cfg.threads);
    steps.push_back(spec.time.steps);
    rms.push_back(li.rms_gap);
    means.push_back(li.stats.mean);
    ses.push_back(li.stats.se);
  }
  double order = std::numeric_limits<double>::quiet_NaN();
  if (levels > 1) order = std::log2(rms.front() / rms.back()) / (levels - 1);
  const double target = -(T - t0);
  const double z = std::abs(means.front() - target) / ses.front();
  const double min_order = option(o, "min_order", 0.4);
  r.report = {{"phi", "z"},
              {"target", target},
              {"mean", means.front()},
              {"se", ses.front()},
              {"z_score", z},
              {"steps", steps},
              {"rms_gap", rms},
              {"order", order},
              {"min_order", min_order}};
  r.pass = z <= 4.0 && (levels < 2 || order >= min_order);
  CsvTable tab;
  tab.add("steps", steps);
  tab.add("rms_gap", rms);
  tab.add("mean", means);
  tab.add("se", ses);
  r.curves.emplace_back("refinement", std::move(tab));
  return r;
}

StageResult zvonkin_stage(Experiment& ex, const json& o) {
  StageResult r;
  const auto& cfg = ex.config();
  const auto& m = ex.model();
  const auto sigma = m.coefficients.diffusion;
  const auto grid = SpaceTimeGrid::centered(m.x0, cfg.grid.half_width, m.t0, m.T,
                                            cfg.mc.time_steps, cfg.grid.space_cells);
  GridFunction b;
  std::string source = "field";
  if (o.contains("two_level")) {
    const auto& t = o["two_level"];
    b = two_level_drift(grid, option(t, "low", 1.0), option(t, "high", -1.0), option(t, "R", 0.0),
                        option(t, "width", 0.0), option(t, "theta", 1.0));
    source = "two_level";
  } else {
    const auto bt = transformed_drift(ex.field(), m);
    Matrix vals(grid.time.nodes(), grid.space.nodes());
    for (int k = 0; k < grid.time.nodes(); ++k) {
      for (int j = 0; j < grid.space.nodes(); ++j) vals(k, j) = bt(grid.time.time(k), grid.space.x(j));
    }
    b = GridFunction(grid, std::move(vals));
  }
  ZvonkinConfig zc;
  zc.mu_initial = option(o, "mu_initial", 1.0);
  const auto z = build_transform(b, sigma, zc);
  const auto coeffs = transformed_coefficients(z, sigma, m.coefficients.ellipticity_lambda);
  CorrespondenceConfig cc;
  cc.threads = cfg.threads;
  const auto corr = correspondence_check(b, sigma, z, coeffs, m.x0, grid.time, cfg.mc.n_paths,
                                         ex.seed(), cc);
  r.report = {{"drift", source},
              {"transform", to_json(z)},
              {"round_trip_error", z.round_trip_error()},
              {"coefficients", to_json(coeffs)},
              {"correspondence", to_json(corr)}};
  if (option(o, "flow_route", false) && m.coefficients.constant_diffusion) {
    const auto n = std::min<std::size_t>(cfg.mc.n_paths, 2000);
    r.report["flow_route"] = to_json(
        flow_route_cross_check(b, sigma(m.t0, m.x0), z, coeffs, m.x0, grid.time, n, ex.seed(), cfg.threads));
  }
  r.pass = corr.ks_pass && z.sup_DU <= 0.5 && coeffs.quarter_bound;
  CsvTable tab;
  tab.add("t", corr.times);
  tab.add("rms", corr.rms);
  r.curves.emplace_back("rms", std::move(tab));
  return r;
}

StageResult skorohod_stage(Experiment& ex, const json& o) {
  StageResult r;
  const auto& cfg = ex.config();
  const double T = option(o, "T", cfg.model.is_null() ? 1.0 : ex.model().T);
  const std::size_t n = cfg.mc.n_paths;
  std::vector<double> W(n);
  SimulationSpec spec;
  spec.time = {0.0, T, cfg.mc.time_steps};
  stream_paths(spec, n, ex.seed(), [&](const PathView& v) { W[v.index] = v.X.back(); }, cfg.threads);
  SkorohodInputs in;
  in.F = W;
  in.W_T = W;
  in.gamma.assign(n, T);  // D_sW_T = 1
  in.second.assign(n, 0.0);
  SkorohodConfig sc;
  sc.bins = option(o, "bins", 50);
  const auto d = skorohod_density_representation(in, sc);
  const double half = 1.959963984540054 * std::sqrt(T);
  double sup = 0.0;
  std::vector<double> exact;
  for (std::size_t i = 0; i < d.density.x.size(); ++i) {
    const double x = d.density.x[i];
    const double e = std::exp(-0.5 * x * x / T) / std::sqrt(2.0 * std::numbers::pi * T);
    exact.push_back(e);
    if (std::abs(x) <= half) sup = std::max(sup, std::abs(d.density.density[i] / e - 1.0));
  }
  const double tol = option(o, "tolerance", 0.03);
  r.report = {{"functional", "W_T"},
              {"bins", sc.bins},
              {"sup_relative_error_central_95", sup},
              {"tolerance", tol},
              {"anchor", d.anchor},
              {"mass", d.density.mass()}};
  r.pass = sup <= tol;
  auto tab = density_curve(d.density);
  tab.add("normal", std::move(exact));
  r.curves.emplace_back("density", std::move(tab));
  return r;
}

StageResult price_stage(Experiment& ex, const json& o) {
  StageResult r;
  const auto& cfg = ex.config();
  const auto pair = load_pricing_models(cfg.pricing);
  const auto& m = pair.no_claim;
  const auto grid = SpaceTimeGrid::centered(m.x0, cfg.grid.half_width, m.t0, m.T,
                                            cfg.grid.time_steps, cfg.grid.space_cells);
  const auto s = price_and_hedge(pair, grid, {}, cfg.threads);
  const auto nu = option(o, "nu", std::vector<double>{-1.0, 0.0, 1.0});
  const auto vf = value_functions(s, nu);
  const bool free = std::isinf(s.C.lower) && std::isinf(s.C.upper);
  const double gap_tol = 10.0 * grid.space.dx();
  const double residual_tol = option(o, "residual_tolerance", 1e-10);
  const auto j0 = static_cast<Eigen::Index>(grid.space.cells / 2);
  r.report = {{"p0", s.p(0, j0)},
              {"sup_abs_p", s.p.cwiseAbs().maxCoeff()},
              {"hedge_gap", s.hedge_gap},
              {"hedge_gap_unscaled", s.hedge_gap_unscaled},
              {"hedge_gap_tolerance", free ? json(gap_tol) : json(nullptr)},
              {"indifference_residual", vf.residual},
              {"residual_tolerance", residual_tol},
              {"identity", "V^F(t, nu - p, x) = V^0(t, nu, x)"},
              {"gamma", s.gamma},
              {"sigma", s.sigma},
              {"C", {s.C.lower, s.C.upper}},
              {"grid", to_json(grid)}};
  r.pass = vf.residual <= residual_tol && (!free || s.hedge_gap <= gap_tol);
  const auto rows = preview_rows(grid.time.steps);
  r.curves.emplace_back("price", slices(grid.space, s.p, rows, "p"));
  r.curves.emplace_back("delta", slices(grid.space, s.delta_grad, rows, "delta"));
  return r;
}

StageResult regime_stage(Experiment& ex, const json&) {
  StageResult r;
  const auto& cfg = ex.config();
  require(cfg.model.value("builtin", "") == "regime_switching", Errc::config_invalid,
          "regime_switching needs a regime_switching model");
  const json p = cfg.model.value("params", json::object());
  const double T = p.value("T", 1.0), x0 = p.value("x0", 0.0);
  const auto grid =
      SpaceTimeGrid::centered(x0, cfg.grid.half_width, 0.0, T, cfg.grid.time_steps, cfg.grid.space_cells);
  RegimeSwitchingConfig rc;
  rc.n_paths = cfg.mc.n_paths;
  rc.seed = ex.seed();
  rc.threads = cfg.threads;
  rc.kde.seed = ex.seed();
  const auto rep = regime_switching_experiment(parse_regime_switching_params(p), T, x0, grid, rc);
  r.report = {{"switching", to_json(rep.switching)},
              {"residual", to_json(rep.residual)},
              {"mean_DX_T", rep.mean_DX_T},
              {"mean_DY", rep.mean_DY_m},
              {"density_t", grid.time.time(rep.density_index)},
              {"Y0", rep.triple.Y(0, 0)}};
  r.report["bounds_X"] = rep.x_bounds ? to_json(*rep.x_bounds) : json{{"error", rep.x_bounds_error}};
  r.report["bounds_Y"] = rep.y_bounds ? to_json(*rep.y_bounds) : json{{"error", rep.y_bounds_error}};
  r.pass = rep.switching.preserved;
  return r;
}

}  // namespace

StageResult Experiment::run_check(const std::string& check) {
  const json o = cfg_.options_for(check);
  StageResult r;
  if (check == "field") r = field_stage(*this);
  else if (check == "field_oracle") r = field_oracle_stage(*this, o);
  else if (check == "comparison") r = comparison_stage(*this, o);
  else if (check == "simulate") r = simulate_stage(*this);
  else if (check == "triple") r = triple_stage(*this);
  else if (check == "comonotone") r = comonotone_stage(*this, o);
  else if (check == "density") r = density_stage(*this, o);
  else if (check == "bounds_X") r = bounds_stage(*this, o, 'X');
  else if (check == "bounds_Y") r = bounds_stage(*this, o, 'Y');
  else if (check == "bounds_Z") r = bounds_stage(*this, o, 'Z');
  else if (check == "malliavin") r = malliavin_stage(*this, o);
  else if (check == "localtime") r = localtime_stage(*this, o);
  else if (check == "zvonkin") r = zvonkin_stage(*this, o);
  else if (check == "skorohod") r = skorohod_stage(*this, o);
  else if (check == "price") r = price_stage(*this, o);
  else if (check == "regime_switching") r = regime_stage(*this, o);
  else throw Error(Errc::config_invalid, "unknown check '" + check + "'");

  r.stage = check;
  json head = {{"stage", check},
               {"experiment", cfg_.name},
               {"pass", r.pass},
               {"asserted", r.asserted}};
  if (cfg_.mc.seed && needs_monte_carlo(check)) {
    head["seed"] = *cfg_.mc.seed;
    head["mc"] = {{"n_paths", cfg_.mc.n_paths}, {"time_steps", cfg_.mc.time_steps}};
  }
  if (!cfg_.model.is_null() && check != "skorohod" && check != "price") {
    head["model"] = model().coefficients.name;
    head["grid"] = to_json(field_grid());
  }
  head.update(r.report);
  r.report = std::move(head);
  return r;
}

void write_stage(const fs::path& dir, const StageResult& s) {
  write_text(dir / (s.stage + ".json"), to_text(s.report));
  for (const auto& [suffix, table] : s.curves) {
    const auto name = s.curves.size() == 1 ? s.stage : s.stage + "_" + suffix;
    write_text(dir / (name + ".csv"), to_csv(table));
  }
}

RunOutcome run_experiment(const ExperimentConfig& cfg, bool write) {
  RunOutcome out;
  set_default_threads(cfg.threads);
  Experiment ex(cfg);
  const auto dir = cfg.output / cfg.name;
  std::vector<std::string> order;
  for (const auto& name : known_checks()) {
    if (std::find(cfg.checks.begin(), cfg.checks.end(), name) != cfg.checks.end()) order.push_back(name);
  }
  for (const auto& name : order) {
    try {
      auto s = ex.run_check(name);
      if (write) write_stage(dir, s);
      if (s.asserted && !s.pass) out.code = ExitCode::check_failed;
      out.stages.push_back(std::move(s));
    } catch (const Error& e) {
      out.failed_stage = name;
      out.error = e.what();
      out.code = exit_code_for(e.code());
      return out;
    }
  }
  return out;
}

json consolidate_reports(const fs::path& dir) {
  require(fs::is_directory(dir), Errc::missing_reports, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json" && e.path().filename() != "summary.json") {
      files.push_back(e.path());
    }
  }
  require(!files.empty(), Errc::missing_reports, "no stage reports in " + dir.string());
  std::sort(files.begin(), files.end());

  json checks = json::array(), reports = json::object(), seeds = json::array(), mu = json::object(),
       constants = json::object();
  bool all_pass = true;
  json grid, experiment;
  for (const auto& f : files) {
    std::ifstream is(f);
    json doc;
    try {
      is >> doc;
    } catch (const json::exception& e) {
      throw Error(Errc::missing_reports, f.string() + ": " + e.what());
    }
    const auto stage = doc.value("stage", f.stem().string());
    const bool pass = doc.value("pass", false), asserted = doc.value("asserted", true);
    checks.push_back({{"stage", stage}, {"pass", pass}, {"asserted", asserted}});
    if (asserted) all_pass = all_pass && pass;
    if (doc.contains("seed") && std::find(seeds.begin(), seeds.end(), doc["seed"]) == seeds.end()) {
      seeds.push_back(doc["seed"]);
    }
    if (doc.contains("grid") && grid.is_null()) grid = doc["grid"];
    if (doc.contains("experiment")) experiment = doc["experiment"];
    if (doc.contains("transform")) mu[stage] = doc["transform"]["mu"];
    if (doc.contains("constants")) constants[stage] = doc["constants"];
    reports[stage] = std::move(doc);
  }
  return {{"experiment", experiment},
          {"version", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"all_pass", all_pass},
          {"checks", checks},
          {"seeds", seeds},
          {"grid", grid},
          {"mu", mu},
          {"constants", constants},
          {"reports", reports}};
}

}  // namespace fbsde
