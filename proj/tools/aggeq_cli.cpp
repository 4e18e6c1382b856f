/// Command-line front end: run Monte Carlo experiments, check assumptions,
/// solve for reference equilibria and fit convergence rates from traces.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aggeq/experiments.hpp"

namespace {

using aggeq::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kAssumptionViolation = 3,
  kAllDiverged = 4,
};

struct CommonFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> threads;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment JSON file")->required();
  cmd->add_option("--seed", f.seed, "Override the master seed");
  cmd->add_option("--trials", f.trials, "Override the number of trials");
  cmd->add_option("--threads", f.threads, "Worker threads for trials");
  cmd->add_flag("--quiet", f.quiet, "Print only errors");
}

aggeq::ExperimentConfig load_config(const CommonFlags& f) {
  std::ifstream in(f.config);
  if (!in) throw aggeq::ConfigError("cannot open config file " + f.config);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw aggeq::ConfigError(f.config + ": " + e.what());
  }
  if (f.out) doc["output_dir"] = *f.out;
  if (f.seed) doc["seed"] = *f.seed;
  if (f.trials) doc["trials"] = *f.trials;
  if (f.threads) doc["threads"] = *f.threads;
  return aggeq::config_from_json(doc);
}

int cmd_run(const CommonFlags& f) {
  const aggeq::ExperimentConfig cfg = load_config(f);
  const aggeq::MonteCarloSummary s = aggeq::run_monte_carlo(cfg);
  std::string script;
  if (!cfg.output_dir.empty()) script = aggeq::emit_plot_script(s);
  if (!f.quiet) {
    std::cout << "case " << aggeq::to_string(cfg.kind) << ", " << cfg.trials
              << " trials, " << s.failed << " failed, config hash " << s.hash << '\n';
    if (!s.band.mean.empty()) {
      std::cout << "mean normalized error: initial " << s.band.mean.front() << ", final "
                << s.band.mean.back() << " at iteration " << s.band.iter.back() << '\n';
    }
    std::cout << "median time per iterate: " << s.wall_ns_per_iter.median * 1e-3 << " us\n";
    for (const auto& t : s.trials) {
      if (!t.ok) std::cout << "trial " << t.trial << " failed: " << t.error << '\n';
    }
    if (!script.empty()) {
      std::cout << "wrote " << cfg.output_dir << "/summary.json and " << script << '\n';
    }
  }
  return s.all_failed() ? kAllDiverged : kOk;
}

int cmd_validate(const CommonFlags& f, int trial) {
  const aggeq::ExperimentConfig cfg = load_config(f);
  const aggeq::Instance inst =
      aggeq::generate_instance(cfg, aggeq::trial_seed(cfg.seed, trial));
  const aggeq::AssumptionReport rep = aggeq::check_assumptions(cfg, inst);
  if (!f.quiet) {
    json out = rep.detail;
    out["violations"] = rep.violations;
    out["ok"] = rep.ok();
    std::cout << out.dump(2) << '\n';
  }
  for (const auto& v : rep.violations) std::cerr << "violation: " << v << '\n';
  return rep.ok() ? kOk : kAssumptionViolation;
}

int cmd_oracle(const CommonFlags& f, int trial) {
  const aggeq::ExperimentConfig cfg = load_config(f);
  const aggeq::Instance inst =
      aggeq::generate_instance(cfg, aggeq::trial_seed(cfg.seed, trial));
  const aggeq::OracleResult o = aggeq::compute_oracle(cfg, inst);
  json out;
  out["x"] = aggeq::to_json(o.x);
  out["iterations"] = o.iterations;
  out["residual"] = o.residual;
  out["step"] = o.step;
  if (o.lambda.size() > 0) out["lambda"] = aggeq::to_json(o.lambda);
  if (o.kkt) out["kkt"] = aggeq::to_json(*o.kkt);
  if (!f.quiet) std::cout << out.dump(2) << '\n';
  return kOk;
}

int cmd_rate(const std::string& path, const std::string& column, long burn_in,
             double floor, bool quiet) {
  std::ifstream in(path);
  if (!in) throw aggeq::ConfigError("cannot open trace file " + path);
  std::string line;
  std::vector<std::string> header;
  std::vector<double> series;
  int col = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      for (std::size_t k = 0; k < header.size(); ++k) {
        if (header[k] == column) col = static_cast<int>(k);
      }
      if (col < 0) throw aggeq::ConfigError(path + ": no column \"" + column + "\"");
      continue;
    }
    if (col >= static_cast<int>(cells.size())) {
      throw aggeq::ConfigError(path + ": short row");
    }
    series.push_back(std::stod(cells[static_cast<std::size_t>(col)]));
  }
  const aggeq::RateFit fit = aggeq::fit_qlinear_rate(series, burn_in, floor);
  if (!quiet) std::cout << aggeq::to_json(fit).dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed equilibrium seeking in aggregative games"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "Run the Monte Carlo experiment of a config");
  add_common(run, run_flags);
  run->add_option("--out", run_flags.out, "Output directory for traces and summary");

  CommonFlags val_flags;
  int val_trial = 0;
  CLI::App* val = app.add_subcommand("validate", "Check standing assumptions of a generated instance");
  add_common(val, val_flags);
  val->add_option("--trial", val_trial, "Trial whose instance is checked");

  CommonFlags ora_flags;
  int ora_trial = 0;
  CLI::App* ora = app.add_subcommand("oracle", "Solve one instance centrally and print x* and KKT data");
  add_common(ora, ora_flags);
  ora->add_option("--trial", ora_trial, "Trial whose instance is solved");

  std::string csv;
  std::string column = "normalized_err";
  long burn_in = 0;
  double floor = 0.0;
  bool rate_quiet = false;
  CLI::App* rate = app.add_subcommand("rate", "Fit a linear rate to one trace column");
  rate->add_option("--csv", csv, "Trace CSV file")->required();
  rate->add_option("--column", column, "Column to fit");
  rate->add_option("--burn-in", burn_in, "Leading entries to discard");
  rate->add_option("--floor", floor, "Window ends before the first entry <= floor");
  rate->add_flag("--quiet", rate_quiet, "Print only errors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*val) return cmd_validate(val_flags, val_trial);
    if (*ora) return cmd_oracle(ora_flags, ora_trial);
    if (*rate) return cmd_rate(csv, column, burn_in, floor, rate_quiet);
  } catch (const aggeq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const aggeq::AssumptionError& e) {
    std::cerr << "assumption violated: " << e.what() << '\n';
    return kAssumptionViolation;
  } catch (const aggeq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
