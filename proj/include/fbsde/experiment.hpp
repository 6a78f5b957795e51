#pragma once

#include "fbsde/io.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fbsde {

enum class ExitCode { pass = 0, check_failed = 1, config_error = 2, numerical_failure = 3 };

/// Configuration mistakes map to 2, everything else a stage can throw to 3.
ExitCode exit_code_for(Errc code);

struct GridConfig {
  double half_width = 6.0;
  int time_steps = 200;
  int space_cells = 400;
};

struct MonteCarloConfig {
  std::size_t n_paths = 10000;
  std::optional<std::uint64_t> seed;
  int time_steps = 256;
};

/// See docs/model_schema.md for the JSON layout.
struct ExperimentConfig {
  std::string name = "experiment";
  json model;    ///< model document for load_model
  json pricing;  ///< pricing model document (price check)
  GridConfig grid;
  MonteCarloConfig mc;
  std::vector<std::string> checks;
  json options = json::object();  ///< per-check options keyed by check name
  std::filesystem::path output = "out";
  int threads = 1;

  /// Throws ConfigInvalid on unknown checks, a missing seed for Monte Carlo
  /// checks, or malformed fields.
  static ExperimentConfig parse(const json& doc);
  static ExperimentConfig load(const std::filesystem::path& file);
  json options_for(const std::string& check) const;
};

/// Names accepted in "checks", in dependency order.
const std::vector<std::string>& known_checks();
bool needs_monte_carlo(const std::string& check);

struct StageResult {
  std::string stage;
  bool asserted = true;  ///< false: informational, never fails a run
  bool pass = true;
  json report = json::object();
  std::vector<std::pair<std::string, CsvTable>> curves;  ///< file suffix, table
};

/// Lazily builds model, field, paths and triple, and runs named checks on them.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);
  ~Experiment();
  Experiment(Experiment&&) noexcept;
  Experiment& operator=(Experiment&&) noexcept;

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const;

  const ModelInstance& model();
  const SpaceTimeGrid& field_grid();
  const DecouplingField& field();
  /// The field re-solved on the Monte Carlo time grid (or field() when they agree).
  const DecouplingField& path_field();
  const PathEnsemble& paths();
  const TripleEnsemble& triple();

  StageResult run_check(const std::string& check);

 private:
  struct Cache;
  ExperimentConfig cfg_;
  std::unique_ptr<Cache> cache_;
};

struct RunOutcome {
  ExitCode code = ExitCode::pass;
  std::vector<StageResult> stages;
  std::string failed_stage;  ///< stage that threw, if any
  std::string error;
};

/// Runs every configured check in dependency order. Writes
/// <output>/<experiment>/<stage>.json (+ .csv) when `write` is set.
RunOutcome run_experiment(const ExperimentConfig& cfg, bool write = true);

/// Writes one stage's JSON and CSV files into `dir`.
void write_stage(const std::filesystem::path& dir, const StageResult& stage);

/// Merges the stage reports in `dir` into one summary (throws MissingReports
/// when there are none). Deterministic: no timestamps.
json consolidate_reports(const std::filesystem::path& dir);

}  // namespace fbsde
