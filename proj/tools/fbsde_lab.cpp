// Command-line front end: each subcommand runs a subset of checks from a
// JSON experiment config and writes out/<experiment>/<stage>.{json,csv}.

#include "fbsde/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace fbsde;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

json read_config(const std::string& file) {
  std::ifstream is(file);
  require(static_cast<bool>(is), Errc::config_invalid, "cannot read " + file);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, file + ": " + e.what());
  }
}

// Checks a subcommand runs; the config's own list narrows "bounds" and "density".
std::vector<std::string> checks_for(const std::string& cmd, const json& doc) {
  const auto listed = doc.value("checks", std::vector<std::string>{});
  auto pick = [&](std::vector<std::string> wanted, std::vector<std::string> fallback) {
    std::vector<std::string> out;
    for (const auto& w : wanted) {
      if (std::find(listed.begin(), listed.end(), w) != listed.end()) out.push_back(w);
    }
    return out.empty() ? fallback : out;
  };
  if (cmd == "run") return listed;
  if (cmd == "solve") return {"field_oracle"};
  if (cmd == "simulate") return {"simulate", "triple"};
  if (cmd == "density") return pick({"density", "skorohod"}, {"density"});
  if (cmd == "bounds") return pick({"bounds_X", "bounds_Y", "bounds_Z"}, {"bounds_X", "bounds_Y"});
  if (cmd == "comonotone") return {"comonotone"};
  if (cmd == "malliavin") return {"malliavin"};
  if (cmd == "localtime") return {"localtime"};
  if (cmd == "zvonkin") return {"zvonkin"};
  if (cmd == "price") return {"price"};
  throw Error(Errc::config_invalid, "unknown subcommand " + cmd);
}

int run_checks(const std::string& cmd, const Common& c) {
  json doc = read_config(c.config);
  doc["checks"] = checks_for(cmd, doc);
  if (c.seed) doc["mc"]["seed"] = *c.seed;
  if (c.threads > 0) doc["threads"] = c.threads;
  if (!c.out.empty()) doc["output"] = c.out;
  const auto cfg = ExperimentConfig::parse(doc);
  const auto outcome = run_experiment(cfg);
  for (const auto& s : outcome.stages) {
    std::cout << (s.asserted ? (s.pass ? "PASS " : "FAIL ") : "INFO ") << s.stage << "\n";
  }
  if (!outcome.failed_stage.empty()) {
    std::cerr << "error in stage " << outcome.failed_stage << ": " << outcome.error << "\n";
  }
  std::cout << "reports in " << (cfg.output / cfg.name).string() << "\n";
  return static_cast<int>(outcome.code);
}

int report(const Common& c) {
  std::filesystem::path dir = c.out.empty() ? "out" : c.out;
  if (!c.config.empty()) {
    const auto cfg = ExperimentConfig::parse(read_config(c.config));
    if (c.out.empty()) dir = cfg.output;
    dir /= cfg.name;
  }
  const auto summary = consolidate_reports(dir);
  write_text(dir / "summary.json", to_text(summary));
  for (const auto& s : summary["checks"]) {
    const bool asserted = s["asserted"].get<bool>();
    std::cout << (asserted ? (s["pass"].get<bool>() ? "PASS " : "FAIL ") : "INFO ")
              << s["stage"].get<std::string>() << "\n";
  }
  std::cout << "summary written to " << (dir / "summary.json").string() << "\n";
  return summary["all_pass"].get<bool>() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for coupled quadratic FBSDEs"};
  app.require_subcommand(1);
  Common c;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"solve", "solve the decoupling field (and compare with an oracle when one is known)"},
      {"simulate", "simulate forward paths and reconstruct (Y, Z)"},
      {"density", "kernel density estimates (and the Skorohod representation if configured)"},
      {"bounds", "Gaussian density envelopes for X, Y, Z"},
      {"comonotone", "sign of Z1 Z2 for two models on shared noise"},
      {"malliavin", "Malliavin derivatives against finite-difference flows"},
      {"localtime", "space-time local-time decomposition"},
      {"zvonkin", "Zvonkin transform and pathwise correspondence"},
      {"price", "indifference price, hedge and value functions"},
      {"run", "every check listed in the config"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", c.out, "output root (overrides the config)");
    sub->add_option("-s,--seed", c.seed, "seed override");
    sub->add_option("-t,--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  }
  auto* rep = app.add_subcommand("report", "merge stage reports into summary.json");
  rep->add_option("-c,--config", c.config, "config naming the experiment")->check(CLI::ExistingFile);
  rep->add_option("-o,--out", c.out, "output root, or the experiment directory without --config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::config_error);
  }

  try {
    const auto* sub = app.get_subcommands().front();
    if (sub->get_name() == "report") return report(c);
    return run_checks(sub->get_name(), c);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return static_cast<int>(exit_code_for(e.code()));
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return static_cast<int>(ExitCode::numerical_failure);
  }
}
