#include "fbsde/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fbsde {

void CsvTable::add(std::string name, std::vector<double> values) {
  require(columns.empty() || values.size() == rows(), Errc::invalid_argument,
          "CSV column '" + name + "' has the wrong length");
  names.push_back(std::move(name));
  columns.push_back(std::move(values));
}

std::string to_csv(const CsvTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.names.size(); ++c) {
    if (c) out += ',';
    out += table.names[c];
  }
  out += '\n';
  char buf[32];
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      if (c) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", table.columns[c][r]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  require(static_cast<bool>(os), Errc::invalid_argument, "cannot write " + file.string());
  os << text;
}

std::string to_text(const json& doc) { return doc.dump(2) + "\n"; }

json to_json(const SpaceTimeGrid& g) {
  return {{"t0", g.time.t0},       {"T", g.time.T},         {"time_steps", g.time.steps},
          {"x_min", g.space.x_min}, {"x_max", g.space.x_max}, {"space_cells", g.space.cells}};
}

json to_json(const MeanSE& s) { return {{"mean", s.mean}, {"se", s.se}, {"sd", s.sd}, {"n", s.n}}; }

json to_json(const ExitStats& e) {
  return {{"paths_exited", e.paths_exited}, {"fraction", e.fraction}};
}

json to_json(const NoiseSanity& n) {
  return {{"max_mean_z", n.max_mean_z},
          {"max_variance_z", n.max_variance_z},
          {"flagged_columns", n.flagged_columns},
          {"ok", n.ok()}};
}

json to_json(const ResidualStats& r) {
  return {{"mean_abs", r.mean_abs}, {"sup_abs", r.sup_abs}, {"mean", r.mean}};
}

json to_json(const GradientBoundReport& g) {
  return {{"enabled", g.enabled},
          {"gamma", g.gamma},
          {"constant", g.constant},
          {"sup_weighted", g.sup_weighted},
          {"best_fit_gamma", g.best_fit_gamma},
          {"satisfied", g.satisfied}};
}

json to_json(const AssumptionAudit& a) {
  return {{"ellipticity", a.ellipticity},
          {"terminal_bounded", a.terminal_bounded},
          {"driver_growth", a.driver_growth},
          {"ell_nondecreasing", a.ell_nondecreasing},
          {"min_sigma_squared", a.min_sigma_squared},
          {"max_abs_terminal", a.max_abs_terminal},
          {"max_driver_ratio", a.max_driver_ratio},
          {"ok", a.ok()}};
}

json to_json(const TailReport& t) {
  json probes = json::array();
  for (const auto& p : t.probes) {
    probes.push_back({{"x", p.x},
                      {"side", p.upper ? "upper" : "lower"},
                      {"bound", p.bound},
                      {"empirical", p.empirical},
                      {"se", p.se},
                      {"violated", p.violated}});
  }
  return {{"violations", t.violations},
          {"violation_fraction", t.violation_fraction()},
          {"probes", std::move(probes)}};
}

json to_json(const BoundReport& b) {
  const auto& c = b.constants;
  return {{"l", b.l},
          {"L", b.L},
          {"mean", b.mean},
          {"abs_dev", b.abs_dev},
          {"bandwidth", b.kde.bandwidth},
          {"n_samples", b.kde.n_samples},
          {"probes", b.kde.x.size()},
          {"resolvable", b.resolvable},
          {"violations", b.violations},
          {"violation_fraction", b.violation_fraction},
          {"tails", to_json(b.tails)},
          {"constants",
           {{"t", c.t},
            {"K", c.K},
            {"Lambda", c.Lambda},
            {"lambda", c.lambda},
            {"Upsilon", c.Upsilon},
            {"alpha", c.alpha},
            {"rule", c.rule}}}};
}

json to_json(const ComonotonicityReport& c) {
  return {{"min_product", c.min_product},
          {"max_product", c.max_product},
          {"fraction_negative", c.fraction_negative},
          {"fraction_positive", c.fraction_positive},
          {"min_z1", c.min_z1},
          {"min_z2", c.min_z2},
          {"tolerance", c.tolerance},
          {"n_paths", c.n_paths},
          {"steps", c.steps}};
}

json to_json(const ComparisonReport& c) {
  return {{"fraction", c.fraction}, {"max_violation", c.max_violation}, {"tolerance", c.tolerance}};
}

json to_json(const CovarianceBoundsReport& c) {
  return {{"l_hat", c.l_hat},
          {"L_hat", c.L_hat},
          {"mean", c.mean},
          {"min", c.min},
          {"max", c.max},
          {"violation_fraction", c.violation_fraction},
          {"bins", c.bins}};
}

json to_json(const LocalTimeIntegral& l) {
  return {{"stats", to_json(l.stats)},
          {"rms_gap", l.rms_gap},
          {"last_step_bias", l.last_step_bias},
          {"dt", l.dt}};
}

json to_json(const CorrespondenceReport& c) {
  return {{"times", c.times},
          {"rms", c.rms},
          {"sup_rms", c.sup_rms},
          {"ks", c.ks},
          {"ks_critical", c.ks_critical},
          {"ks_pass", c.ks_pass},
          {"mu", c.mu},
          {"sup_DU", c.sup_DU},
          {"exits", to_json(c.exits)}};
}

json to_json(const DensityTransferReport& d) {
  return {{"t", d.t}, {"max_relative_deviation", d.max_relative_deviation}, {"probes", d.probes}};
}

json to_json(const FlowRouteReport& m) {
  return {{"mean_relative_gap", m.mean_relative_gap},
          {"max_relative_gap", m.max_relative_gap},
          {"paths", m.paths}};
}

json to_json(const ZvonkinTransform& z) {
  json search = json::array();
  for (const auto& [mu, sup] : z.search) search.push_back({{"mu", mu}, {"sup_DU", sup}});
  return {{"mu", z.mu},
          {"doublings", z.doublings},
          {"sup_DU", z.sup_DU},
          {"sup_U", z.sup_U},
          {"identity", z.identity()},
          {"search", std::move(search)}};
}

json to_json(const TransformedCoefficients& c) {
  return {{"min_sigma1_sq", c.min_sigma1_sq},
          {"lambda", c.lambda},
          {"quarter_bound", c.quarter_bound},
          {"half_bound", c.half_bound},
          {"identity", c.identity}};
}

json to_json(const SwitchingAudit& s) {
  return {{"max_distinct", s.max_distinct},
          {"slices_two_valued", s.slices_two_valued},
          {"slices", s.slices},
          {"max_off_level", s.max_off_level},
          {"preserved", s.preserved}};
}

CsvTable bound_curves(const BoundReport& b) {
  CsvTable t;
  t.add("x", b.kde.x);
  t.add("kde", b.kde.density);
  if (b.kde.se.size() == b.kde.x.size()) t.add("se", b.kde.se);
  t.add("lower", b.lower);
  t.add("upper", b.upper);
  return t;
}

CsvTable density_curve(const DensityEstimate& d) {
  CsvTable t;
  t.add("x", d.x);
  t.add("density", d.density);
  if (d.se.size() == d.x.size()) t.add("se", d.se);
  return t;
}

CsvTable slices(const SpaceGrid& space, const Matrix& values, const std::vector<int>& rows,
                const std::string& name) {
  CsvTable t;
  std::vector<double> x(static_cast<std::size_t>(space.nodes()));
  for (int j = 0; j < space.nodes(); ++j) x[static_cast<std::size_t>(j)] = space.x(j);
  t.add("x", std::move(x));
  for (int m : rows) {
    const Vector row = values.row(m).transpose();
    t.add(name + "_t" + std::to_string(m), std::vector<double>(row.data(), row.data() + row.size()));
  }
  return t;
}

}  // namespace fbsde
