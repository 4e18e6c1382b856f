/// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
/// selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aggeq/experiments.hpp"
#include "support.hpp"

namespace aggeq {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr long kBurnIn = 100;
constexpr double kRateFloor = 1e-9;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Normalized-error trace plus mean-preservation maxima of one run.
struct RunRecord {
  std::string name;
  std::vector<double> err;
  double max_sum_z = 0.0;
  double max_sum_y = 0.0;
};

RunRecord record_of(const std::string& name, const Trace& trace) {
  RunRecord r{name, trace.column(&TraceRecord::normalized_err)};
  for (const auto& rec : trace.records) {
    r.max_sum_z = std::max(r.max_sum_z, rec.mean_z_norm);
    if (trace.coupled) r.max_sum_y = std::max(r.max_sum_y, rec.mean_y_norm);
  }
  return r;
}

/// Runs shared by criteria 1 to 4.
struct SharedRuns {
  std::vector<RunRecord> ne;
  std::vector<RunRecord> vgne;
  Outcome c1;
  Outcome c2;
};

Outcome criterion1(std::vector<RunRecord>& runs) {
  Outcome out;
  double worst_err = 0.0;
  double worst_time = 0.0;
  long worst_iters = 0;
  for (int k = 0; k < 20; ++k) {
    const int N = 2 + k % 9;
    const auto inst = testing::random_quadratic_game(2000 + k, N, 4, 1 + k % 3);
    const CommNetwork net = build_erdos_renyi(N, 0.5, 300 + k);
    const double gamma = inst.mu / (inst.lipschitz * inst.lipschitz);
    const auto t0 = Clock::now();
    const NeSolution ne = solve_ne(inst.game, gamma, 1e-13);
    trades::RunOptions opts;
    opts.oracle = ne.x;
    const auto res = trades::run(trades::init(inst.game, net, inst.x0, {0.5, gamma}), inst.game,
                                 net, {50'000, 1e-13}, opts);
    const double elapsed = seconds_since(t0);
    const double err = res.trace.records.back().normalized_err;
    worst_err = std::max(worst_err, err);
    worst_time = std::max(worst_time, elapsed);
    worst_iters = std::max(worst_iters, res.trace.records.back().iter);
    if (!(err <= 1e-6) || !(elapsed < 10.0)) {
      out.pass = false;
      out.detail += " game " + std::to_string(k) + ": err " + fmt(err) + " in " + fmt(elapsed) + " s;";
    }
    runs.push_back(record_of("ne#" + std::to_string(k), res.trace));
  }
  out.detail = "20 games, worst normalized error " + fmt(worst_err) + ", worst iterations " +
               std::to_string(worst_iters) + ", worst time " + fmt(worst_time) + " s;" +
               out.detail;
  return out;
}

Outcome criterion2(std::vector<RunRecord>& runs) {
  Outcome out;
  double worst_err = 0.0;
  double worst_kkt = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int m = 1 + k % 5;
    const ExperimentConfig c = config_from_json({{"case", "coupling"}, {"coupling_rows", m}});
    const Instance inst = gen_coupling(c, trial_seed(1000, k));
    const VgneSolution ref = solve_vgne(inst.game, c.delta, c.rho, 1e-10);
    trades_c::RunOptions opts;
    opts.oracle = ref.x;
    const auto res =
        trades_c::run(trades_c::init(inst.game, inst.net, inst.x0, inst.lambda0, {c.delta, c.rho}),
                      inst.game, inst.net, {80'000, 1e-10}, opts);
    const double err = res.trace.records.back().normalized_err;
    const KktReport kkt = kkt_residual(inst.game, res.state.x,
                                       trades_c::mean_multiplier(res.state.lambda), c.rho);
    worst_err = std::max(worst_err, err);
    worst_kkt = std::max(worst_kkt, kkt.worst());
    if (!(err <= 1e-5) || !kkt.certified(1e-6)) {
      out.pass = false;
      out.detail += " instance " + std::to_string(k) + ": err " + fmt(err) + ", kkt " +
                    fmt(kkt.worst()) + ";";
    }
    runs.push_back(record_of("vgne#" + std::to_string(k) + "(m=" + std::to_string(m) + ")",
                             res.trace));
  }
  out.detail = "20 instances, worst normalized error " + fmt(worst_err) + ", worst KKT " +
               fmt(worst_kkt) + ";" + out.detail;
  return out;
}

Outcome criterion3(const SharedRuns& shared) {
  Outcome out;
  double worst = 0.0;
  std::size_t fitted = 0;
  int above_one = 0;
  for (const auto* group : {&shared.ne, &shared.vgne}) {
    for (const auto& run : *group) {
      try {
        // Traces that reach the floor early keep at least half their window.
        const auto below = std::find_if(run.err.begin(), run.err.end(),
                                        [](double e) { return e <= kRateFloor; });
        const long burn_in = std::min<long>(kBurnIn, (below - run.err.begin()) / 2);
        const RateFit fit = fit_qlinear_rate(run.err, burn_in, kRateFloor);
        ++fitted;
        worst = std::max(worst, fit.r);
        if (!(fit.r < 1.0)) {
          ++above_one;
          out.pass = false;
          out.detail += " " + run.name + ": r " + fmt(fit.r) + " (log-slope ratio " +
                        fmt(fit.fitted_ratio()) + ");";
        }
      } catch (const Error& e) {
        out.pass = false;
        out.detail += " " + run.name + ": " + e.what() + ";";
      }
    }
  }
  out.detail = std::to_string(fitted) + " traces, worst max-ratio " + fmt(worst) + ", " +
               std::to_string(above_one) + " with r >= 1;" + out.detail;
  return out;
}

Outcome criterion4(const SharedRuns& shared, const std::vector<RunRecord>& extra) {
  Outcome out;
  const std::vector<std::pair<std::string, const std::vector<RunRecord>*>> groups = {
      {"criterion 1 runs", &shared.ne}, {"criterion 2 runs", &shared.vgne}, {"criterion 5 runs", &extra}};
  for (const auto& [label, runs] : groups) {
    double z = 0.0;
    double y = 0.0;
    std::string worst_y;
    for (const auto& run : *runs) {
      z = std::max(z, run.max_sum_z);
      if (run.max_sum_y > y) {
        y = run.max_sum_y;
        worst_y = run.name;
      }
    }
    if (!(z <= 1e-10) || !(y <= 1e-10)) out.pass = false;
    out.detail += label + " (" + std::to_string(runs->size()) + "): max |1^T z|_inf " + fmt(z) +
                  ", max |1^T y|_inf " + fmt(y) + (worst_y.empty() ? "" : " at " + worst_y) + "; ";
  }
  return out;
}

Outcome criterion5(std::vector<RunRecord>& runs) {
  Outcome out;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> agents(2, 8), dims(1, 3), rows(1, 5), topo(0, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double lam_min = kInf;
  int rejected_safeguard = 0;
  for (int k = 0; k < 1000; ++k) {
    const int N = agents(rng);
    const int n = dims(rng);
    const int m = std::min(rows(rng), N * n);
    json graph;
    switch (topo(rng)) {
      case 0: graph = {{"topology", "ring"}, {"self_weight", 0.3 + 0.6 * unit(rng)}}; break;
      case 1: graph = {{"topology", "erdos_renyi"}, {"p", 0.3 + 0.5 * unit(rng)}}; break;
      default: graph = {{"topology", "complete"}}; break;
    }
    const ExperimentConfig c = config_from_json({{"case", "coupling"},
                                                 {"N", N},
                                                 {"dim", n},
                                                 {"coupling_rows", m},
                                                 {"graph", graph},
                                                 {"supports", {{"lambda0", {0.0, 5.0}}}}});
    const Instance inst = gen_coupling(c, trial_seed(5, k));
    double min_self = 1.0;
    for (int i = 0; i < N; ++i) min_self = std::min(min_self, inst.net.self_weight(i));
    const double rho = 0.05 + 0.45 * unit(rng);
    const double delta = (0.05 + 0.9 * unit(rng)) * min_self * rho;
    try {
      const auto res =
          trades_c::run(trades_c::init(inst.game, inst.net, inst.x0, inst.lambda0, {delta, rho}),
                        inst.game, inst.net, {300, kInf});
      for (const auto& rec : res.trace.records) lam_min = std::min(lam_min, rec.lambda_min);
      runs.push_back(record_of("dual#" + std::to_string(k), res.trace));
    } catch (const SafeguardViolation& e) {
      ++rejected_safeguard;
      out.pass = false;
      out.detail += std::string(" run ") + std::to_string(k) + ": " + e.what() + ";";
    }
  }
  if (!(lam_min >= trades_c::kSafeguardFloor)) out.pass = false;

  const ExperimentConfig bad_cfg = config_from_json(
      {{"case", "coupling"}, {"N", 6}, {"graph", {{"topology", "ring"}, {"self_weight", 0.4}}}});
  const Instance bad = gen_coupling(bad_cfg, 77);
  bool rejected = false;
  try {
    trades_c::init(bad.game, bad.net, bad.x0, bad.lambda0, {0.05, 0.1});
  } catch (const AssumptionError&) {
    rejected = true;
  }
  if (!rejected) out.pass = false;
  out.detail = "1000 runs, min lambda " + fmt(lam_min) + ", safeguard trips " +
               std::to_string(rejected_safeguard) + ", misconfigured run (w_ii = 0.4 <= 0.5) " +
               (rejected ? "rejected at init" : "NOT rejected") + ";" + out.detail;
  return out;
}

Outcome criterion6() {
  Outcome out;
  std::mt19937_64 rng(6);
  double worst_excess = -kInf;
  for (int g = 0; g < 10; ++g) {
    const auto inst = testing::random_quadratic_game(6000 + g, 2 + g % 5, 3, 1 + g % 3, false);
    const double bound = 2.0 * inst.mu / (inst.lipschitz * inst.lipschitz);
    for (double frac : {0.1, 0.3, 0.5, 0.7, 0.95}) {
      const double gamma = frac * bound;
      const double modulus = forward_step_modulus(inst.mu, inst.lipschitz, gamma);
      const int n = inst.game.total_dim();
      for (int k = 0; k < 1000; ++k) {
        const RaggedProfile x = inst.game.profile(testing::uniform_vector(rng, n, -5, 5));
        const RaggedProfile y = inst.game.profile(testing::uniform_vector(rng, n, -5, 5));
        const double lhs = (x.flat() - gamma * pseudo_gradient(inst.game, x) -
                            (y.flat() - gamma * pseudo_gradient(inst.game, y)))
                               .norm();
        const double factor = lhs / (x.flat() - y.flat()).norm();
        worst_excess = std::max(worst_excess, factor - modulus);
        if (!(factor <= modulus + 1e-9)) out.pass = false;
      }
    }
  }
  out.detail = "10 games x 5 step sizes x 1000 pairs, max (factor - modulus) " + fmt(worst_excess);
  return out;
}

Outcome criterion7() {
  Outcome out;
  const int N = 8;
  const auto inst = testing::random_quadratic_game(7, N, 3, 3);
  const std::vector<std::pair<std::string, CommNetwork>> nets = {
      {"ring", build_ring(N, 0.5)},
      {"erdos_renyi", build_erdos_renyi(N, 0.3, 7)},
      {"complete", build_complete(N)}};
  for (const auto& [name, net] : nets) {
    const double c = validate(net).contraction;
    trades::State s = trades::init(inst.game, net, inst.x0, {0.5, 0.01});
    const RaggedProfile frozen = s.x;
    Trace trace;
    for (int k = 0; k < 60; ++k) {
      trace.states.push_back({frozen.flat(), s.z, {}, {}});
      trades::step(s, inst.game, net);
      s.x = frozen;
    }
    const auto sp = sp_diagnostics(trace, net, inst.game);
    double worst = 0.0;
    for (std::size_t k = 1; k < sp.size(); ++k) {
      if (sp[k - 1].z_energy < 1e-24) break;
      worst = std::max(worst, sp[k].z_energy / sp[k - 1].z_energy);
    }
    if (!(worst <= c * c + 1e-9)) out.pass = false;
    out.detail += name + ": max ratio " + fmt(worst) + " vs contraction^2 " + fmt(c * c) + "; ";
  }
  return out;
}

Outcome criterion8() {
  Outcome out;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dim(2, 8);
  double worst = 0.0;
  int polys = 0;
  while (polys < 80) {
    const auto inst = testing::random_polyhedron(rng, dim(rng));
    const Eigen::VectorXd x = testing::uniform_vector(rng, inst.P.G.cols(), -3, 3);
    const auto ref = testing::qp_project(inst.P, x);
    if (!ref) {
      out.pass = false;
      out.detail += " QP oracle failed on polyhedron " + std::to_string(polys) + ";";
      ++polys;
      continue;
    }
    worst = std::max(worst, (inst.op.project(x) - *ref).norm());
    ++polys;
  }
  std::uniform_real_distribution<double> ua(0.9, 1.0), ub(0.5, 1.5), us(0.0, 10.0),
      ut(0.0, 4.0);
  int dr = 0;
  while (dr < 20) {
    DemandResponseLoad load{ua(rng), ub(rng), us(rng), 0.0, 1.0, 0.0, 10.0, ut(rng), 4};
    std::optional<ProjectionOperator> set;
    try {
      set = make_demand_response_set(load);
    } catch (const InfeasibleError&) {
      continue;
    }
    const testing::Polyhedron P = testing::demand_response_polyhedron(load);
    const Eigen::VectorXd u = testing::uniform_vector(rng, 4, -0.5, 1.5);
    const auto ref = testing::qp_project(P, u);
    if (!ref) continue;
    worst = std::max(worst, (set->project(u) - *ref).norm());
    ++dr;
  }
  if (!(worst <= 1e-5)) out.pass = false;
  out.detail = "80 random polyhedra (n <= 8) + 20 demand-response sets (T = 4), max distance " +
               fmt(worst) + ";" + out.detail;
  return out;
}

/// Mean curve monotone (non-increasing) after burn-in, final mean <= 1e-4.
Outcome check_band(const std::string& name, const MonteCarloSummary& s, double elapsed) {
  Outcome out;
  const auto& m = s.band.mean;
  long rises = 0;
  for (std::size_t k = kBurnIn + 1; k < m.size(); ++k) {
    if (m[k] > m[k - 1]) ++rises;
  }
  const double final_mean = m.empty() ? kNaN : m.back();
  out.pass = s.failed == 0 && rises == 0 && final_mean <= 1e-4;
  out.detail = name + ": " + std::to_string(s.trials.size() - s.failed) + "/" +
               std::to_string(s.trials.size()) + " trials ok, final mean " + fmt(final_mean) +
               ", increases after burn-in " + std::to_string(rises) + ", " + fmt(elapsed) + " s";
  return out;
}

Outcome criterion9(const fs::path& out_dir) {
  Outcome out;
  const auto t0 = Clock::now();
  ExperimentConfig dr = config_from_json({{"case", "demand_response"}});
  dr.output_dir = (out_dir / "demand_response").string();
  const MonteCarloSummary sdr = run_monte_carlo(dr);
  const double t_dr = seconds_since(t0);
  if (!sdr.csv_files.empty()) emit_plot_script(sdr, "TRADES (demand response)");

  const auto t1 = Clock::now();
  ExperimentConfig cp = config_from_json({{"case", "coupling"}});
  cp.output_dir = (out_dir / "coupling").string();
  const MonteCarloSummary scp = run_monte_carlo(cp);
  const double t_cp = seconds_since(t1);
  if (!scp.csv_files.empty()) emit_plot_script(scp, "TRADES-C (coupling)");

  const double total = seconds_since(t0);
  const Outcome a = check_band("demand response", sdr, t_dr);
  const Outcome b = check_band("coupling", scp, t_cp);
  out.pass = a.pass && b.pass && total < 600.0;
  out.detail = a.detail + "; " + b.detail + "; total " + fmt(total) + " s";
  return out;
}

std::string strip_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') line = line.substr(0, line.rfind(','));
    out += line + '\n';
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Runs a config twice, the second time with parallel trials and parallel
/// rounds; returns the number of CSVs that differ outside the timing column.
int compare_runs(const json& doc, const fs::path& base, int& files) {
  ExperimentConfig a = config_from_json(doc);
  ExperimentConfig b = a;
  a.output_dir = (base / "sequential").string();
  b.output_dir = (base / "parallel").string();
  b.threads = 2;
  b.round_workers = 3;
  const MonteCarloSummary sa = run_monte_carlo(a);
  const MonteCarloSummary sb = run_monte_carlo(b);
  ExperimentConfig again = a;
  again.output_dir = (base / "repeat").string();
  run_monte_carlo(again);
  int diff = sa.csv_files == sb.csv_files ? 0 : 1;
  for (const auto& f : sa.csv_files) {
    const std::string ref = strip_timing(slurp(fs::path(a.output_dir) / f));
    if (ref != strip_timing(slurp(fs::path(b.output_dir) / f))) ++diff;
    if (ref != strip_timing(slurp(fs::path(again.output_dir) / f))) ++diff;
    ++files;
  }
  return diff;
}

Outcome criterion10(const fs::path& out_dir) {
  int files = 0;
  int diff = 0;
  diff += compare_runs({{"case", "demand_response"}, {"N", 5}, {"horizon", 6}, {"trials", 3},
                        {"max_iters", 300}},
                       out_dir / "determinism_dr", files);
  diff += compare_runs({{"case", "coupling"}, {"N", 8}, {"trials", 3}, {"max_iters", 600}},
                       out_dir / "determinism_coupling", files);

  const auto inst = testing::random_quadratic_game(10, 7, 3, 2);
  const CommNetwork net = build_erdos_renyi(7, 0.4, 10);
  trades::RunOptions seq;
  seq.keep_states = true;
  trades::RunOptions par = seq;
  par.workers = 4;
  const trades::Params p{0.5, 0.5 * inst.mu / (inst.lipschitz * inst.lipschitz)};
  const auto ra = trades::run(trades::init(inst.game, net, inst.x0, p), inst.game, net, {500, kInf}, seq);
  const auto rb = trades::run(trades::init(inst.game, net, inst.x0, p), inst.game, net, {500, kInf}, par);
  bool states_equal = ra.trace.states.size() == rb.trace.states.size();
  for (std::size_t k = 0; states_equal && k < ra.trace.states.size(); ++k) {
    states_equal = ra.trace.states[k].x == rb.trace.states[k].x &&
                   ra.trace.states[k].z == rb.trace.states[k].z;
  }
  return {diff == 0 && states_equal,
          std::to_string(files) + " trace CSVs compared across repeat / parallel runs, " +
              std::to_string(diff) + " differ; sequential vs 4-worker TRADES states " +
              (states_equal ? "bit-identical" : "DIFFER")};
}

}  // namespace
}  // namespace aggeq

int main(int argc, char** argv) {
  using namespace aggeq;
  CLI::App app{"Acceptance checks, one PASS/FAIL line per criterion"};
  std::vector<int> only;
  std::string out = "acceptance_out";
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--out", out, "Directory for Monte Carlo outputs");
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty()) {
    for (int k = 1; k <= 10; ++k) selected.insert(k);
  }
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  const auto t0 = Clock::now();
  bool all_pass = true;
  auto report = [&](int k, const std::function<Outcome()>& fn) {
    if (!selected.count(k)) return;
    const auto tk = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fmt(seconds_since(tk))
              << " s) " << o.detail << std::endl;
  };

  SharedRuns shared;
  std::vector<RunRecord> dual_runs;
  const bool need_ne = selected.count(1) || selected.count(3) || selected.count(4);
  const bool need_vgne = selected.count(2) || selected.count(3) || selected.count(4);
  std::optional<Outcome> c5;
  auto ensure = [&](int k) {
    if (k == 1 && shared.ne.empty() && need_ne) shared.c1 = criterion1(shared.ne);
    if (k == 2 && shared.vgne.empty() && need_vgne) shared.c2 = criterion2(shared.vgne);
    if (k == 5 && !c5) c5 = criterion5(dual_runs);
  };
  report(1, [&] { ensure(1); return shared.c1; });
  report(2, [&] { ensure(2); return shared.c2; });
  report(3, [&] { ensure(1); ensure(2); return criterion3(shared); });
  report(4, [&] { ensure(1); ensure(2); ensure(5); return criterion4(shared, dual_runs); });
  report(5, [&] { ensure(5); return *c5; });
  report(6, criterion6);
  report(7, criterion7);
  report(8, criterion8);
  report(9, [&] { return criterion9(out_dir); });
  report(10, [&] { return criterion10(out_dir); });
  std::cout << "acceptance: " << (all_pass ? "PASS" : "FAIL") << " (" << fmt(seconds_since(t0))
            << " s total)" << std::endl;
  return all_pass ? 0 : 1;
}
