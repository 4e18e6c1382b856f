#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "aggeq/errors.hpp"
#include "aggeq/families.hpp"
#include "aggeq/game.hpp"
#include "aggeq/json_io.hpp"
#include "aggeq/network.hpp"
#include "aggeq/oracles.hpp"
#include "aggeq/projections.hpp"
#include "aggeq/ragged.hpp"
#include "aggeq/trace.hpp"
#include "aggeq/trades.hpp"
#include "aggeq/trades_c.hpp"

namespace aggeq {

inline constexpr int kTraceSchemaVersion = 1;

/// Closed interval [lo, hi] for uniform draws.
struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Uniform supports of the demand-response draws.
struct DemandResponseSupports {
  Interval u_hat{0.0, 1.0};
  Interval rho{0.5, 1.5};
  Interval price_slope{0.5, 1.5};
  Interval p0{0.0, 1.0};
  Interval a{0.9, 1.0};
  Interval b{0.5, 1.5};
  Interval s1{0.0, 10.0};
  Interval x0{0.0, 1.0};
  Interval u_bounds{0.0, 1.0};
  Interval s_bounds{0.0, 10.0};
};

/// Uniform supports of the coupled-constraint draws.
struct CouplingSupports {
  Interval target{0.0, 100.0};
  Interval weight{0.0, 1.0};
  Interval A{0.0, 1.0};
  Interval b{0.0, 100.0};
  Interval x0{0.0, 100.0};
  Interval lambda0{0.0, 0.0};
};

enum class Case { kDemandResponse, kCoupling, kCustom };

inline const char* to_string(Case c) {
  switch (c) {
    case Case::kDemandResponse: return "demand_response";
    case Case::kCoupling: return "coupling";
    case Case::kCustom: return "custom";
  }
  return "?";
}

struct OracleConfig {
  /// NE fixed-point tolerance or v-GNE KKT tolerance.
  double tol_ne = 1e-10;
  double tol_vgne = 1e-8;
  /// Oracle step sizes; unset means gamma = mu / L^2 (NE) and the run's own
  /// delta (v-GNE).
  std::optional<double> gamma;
  std::optional<double> delta;
  long max_iters = 2'000'000;
};

struct ExperimentConfig {
  Case kind = Case::kDemandResponse;
  int N = 10;
  /// Horizon T (demand response) or per-agent dimension n_i (coupling).
  int dim = 24;
  /// Coupling rows m (coupling case).
  int coupling_rows = 3;
  json graph;
  double delta = 0.5;
  double gamma = 0.001;
  double rho = 0.1;
  int trials = 25;
  std::uint64_t seed = 1;
  long max_iters = 20'000;
  /// Infinite disables the step-size stopping test.
  double tol = std::numeric_limits<double>::infinity();
  long burn_in = 100;
  /// Iterations excluded from the wall-clock statistics.
  long warmup = 10;
  /// Workers in the barrier-parallel round mode of each trial. Not part of
  /// the config identity.
  int round_workers = 1;
  int redraw_limit = 1000;
  DykstraParams dykstra{1e-12, 100'000, 1e-6};
  DemandResponseSupports dr;
  CouplingSupports cp;
  OracleConfig oracle;
  /// Custom case: game document and optional x0 / lambda0.
  json game;
  json x0;
  json lambda0;
  /// Not part of the config identity.
  std::string output_dir = "out";
  int threads = 1;
};

namespace detail {

inline Interval interval_from_json(const json& j, Interval def, const std::string& where) {
  if (j.is_null()) return def;
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(where + ": expected [lo, hi]");
  }
  Interval out{j[0].get<double>(), j[1].get<double>()};
  if (!(out.lo <= out.hi)) throw ConfigError(where + ": lo must not exceed hi");
  return out;
}

inline json interval_to_json(const Interval& i) { return json::array({i.lo, i.hi}); }

inline double tol_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (j.is_string() && j.get<std::string>() == "inf") {
    return std::numeric_limits<double>::infinity();
  }
  if (!j.is_number()) throw ConfigError("tol: expected a number, null or \"inf\"");
  return j.get<double>();
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

/// Parses and validates an experiment document. Missing fields take the
/// defaults of the chosen case.
inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig c;
  try {
    const std::string kind = j.value("case", std::string("demand_response"));
    if (kind == "demand_response") {
      c.kind = Case::kDemandResponse;
      c.graph = {{"topology", "erdos_renyi"}, {"p", 0.3}};
    } else if (kind == "coupling") {
      c.kind = Case::kCoupling;
      c.N = 20;
      c.dim = 2;
      c.delta = 0.05;
      c.max_iters = 16'000;
      c.graph = {{"topology", "ring"}, {"self_weight", 0.6}};
    } else if (kind == "custom") {
      c.kind = Case::kCustom;
      c.graph = {{"topology", "complete"}};
    } else {
      throw ConfigError("config: unknown case \"" + kind + "\"");
    }

    detail::read_opt(j, "N", c.N);
    if (c.kind == Case::kDemandResponse) detail::read_opt(j, "horizon", c.dim);
    detail::read_opt(j, "dim", c.dim);
    detail::read_opt(j, "coupling_rows", c.coupling_rows);
    if (j.contains("graph")) c.graph = j.at("graph");
    if (j.contains("algorithm")) {
      const json& a = j.at("algorithm");
      detail::read_opt(a, "delta", c.delta);
      detail::read_opt(a, "gamma", c.gamma);
      detail::read_opt(a, "rho", c.rho);
    }
    detail::read_opt(j, "trials", c.trials);
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "max_iters", c.max_iters);
    if (j.contains("tol")) c.tol = detail::tol_from_json(j.at("tol"));
    detail::read_opt(j, "burn_in", c.burn_in);
    detail::read_opt(j, "warmup", c.warmup);
    detail::read_opt(j, "round_workers", c.round_workers);
    detail::read_opt(j, "redraw_limit", c.redraw_limit);
    if (j.contains("dykstra")) c.dykstra = dykstra_params_from_json(j.at("dykstra"));
    detail::read_opt(j, "output_dir", c.output_dir);
    detail::read_opt(j, "threads", c.threads);

    const json s = j.value("supports", json::object());
    auto iv = [&s](const char* key, Interval& target) {
      target = detail::interval_from_json(s.value(key, json()), target,
                                          std::string("supports.") + key);
    };
    if (c.kind == Case::kDemandResponse) {
      iv("u_hat", c.dr.u_hat);
      iv("rho", c.dr.rho);
      iv("price_slope", c.dr.price_slope);
      iv("p0", c.dr.p0);
      iv("a", c.dr.a);
      iv("b", c.dr.b);
      iv("s1", c.dr.s1);
      iv("x0", c.dr.x0);
      iv("u_bounds", c.dr.u_bounds);
      iv("s_bounds", c.dr.s_bounds);
    } else if (c.kind == Case::kCoupling) {
      iv("target", c.cp.target);
      iv("weight", c.cp.weight);
      iv("A", c.cp.A);
      iv("b", c.cp.b);
      iv("x0", c.cp.x0);
      iv("lambda0", c.cp.lambda0);
    }

    if (j.contains("oracle")) {
      const json& o = j.at("oracle");
      detail::read_opt(o, "tol_ne", c.oracle.tol_ne);
      detail::read_opt(o, "tol_vgne", c.oracle.tol_vgne);
      detail::read_opt(o, "max_iters", c.oracle.max_iters);
      if (o.contains("gamma") && !o.at("gamma").is_null()) c.oracle.gamma = o.at("gamma").get<double>();
      if (o.contains("delta") && !o.at("delta").is_null()) c.oracle.delta = o.at("delta").get<double>();
    }
    if (c.kind == Case::kCustom) {
      if (!j.contains("game")) throw ConfigError("config: custom case needs \"game\"");
      c.game = j.at("game");
      c.x0 = j.value("x0", json());
      c.lambda0 = j.value("lambda0", json());
      c.N = static_cast<int>(c.game.at("agents").size());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (c.trials < 1) throw ConfigError("config: trials must be >= 1");
  if (c.N < 1) throw ConfigError("config: N must be >= 1");
  if (c.dim < 1) throw ConfigError("config: dim must be >= 1");
  if (c.max_iters < 0) throw ConfigError("config: max_iters must be >= 0");
  if (c.burn_in < 0 || c.warmup < 0) throw ConfigError("config: burn_in and warmup must be >= 0");
  if (c.threads < 1 || c.round_workers < 1) throw ConfigError("config: threads must be >= 1");
  if (c.kind == Case::kCoupling) {
    if (c.coupling_rows < 1) throw ConfigError("config: coupling_rows must be >= 1");
    if (c.coupling_rows > c.N * c.dim) {
      throw ConfigError("config: coupling_rows m = " + std::to_string(c.coupling_rows) +
                        " exceeds the total dimension n = " + std::to_string(c.N * c.dim) +
                        "; A cannot have full row rank");
    }
  }
  return c;
}

/// The identity of a configuration: every field that influences results,
/// with defaults filled in. Output location and worker counts are excluded.
inline json config_identity(const ExperimentConfig& c) {
  json j;
  j["case"] = to_string(c.kind);
  j["N"] = c.N;
  j["dim"] = c.dim;
  j["coupling_rows"] = c.coupling_rows;
  j["graph"] = c.graph;
  j["algorithm"] = {{"delta", c.delta}, {"gamma", c.gamma}, {"rho", c.rho}};
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  j["max_iters"] = c.max_iters;
  j["tol"] = std::isfinite(c.tol) ? json(c.tol) : json("inf");
  j["burn_in"] = c.burn_in;
  j["warmup"] = c.warmup;
  j["redraw_limit"] = c.redraw_limit;
  j["dykstra"] = {{"tol", c.dykstra.tol},
                  {"max_sweeps", c.dykstra.max_sweeps},
                  {"feas_tol", c.dykstra.feas_tol}};
  using detail::interval_to_json;
  if (c.kind == Case::kDemandResponse) {
    j["supports"] = {{"u_hat", interval_to_json(c.dr.u_hat)},
                     {"rho", interval_to_json(c.dr.rho)},
                     {"price_slope", interval_to_json(c.dr.price_slope)},
                     {"p0", interval_to_json(c.dr.p0)},
                     {"a", interval_to_json(c.dr.a)},
                     {"b", interval_to_json(c.dr.b)},
                     {"s1", interval_to_json(c.dr.s1)},
                     {"x0", interval_to_json(c.dr.x0)},
                     {"u_bounds", interval_to_json(c.dr.u_bounds)},
                     {"s_bounds", interval_to_json(c.dr.s_bounds)}};
  } else if (c.kind == Case::kCoupling) {
    j["supports"] = {{"target", interval_to_json(c.cp.target)},
                     {"weight", interval_to_json(c.cp.weight)},
                     {"A", interval_to_json(c.cp.A)},
                     {"b", interval_to_json(c.cp.b)},
                     {"x0", interval_to_json(c.cp.x0)},
                     {"lambda0", interval_to_json(c.cp.lambda0)}};
  } else {
    j["game"] = c.game;
    j["x0"] = c.x0;
    j["lambda0"] = c.lambda0;
  }
  j["oracle"] = {{"tol_ne", c.oracle.tol_ne},
                 {"tol_vgne", c.oracle.tol_vgne},
                 {"max_iters", c.oracle.max_iters},
                 {"gamma", c.oracle.gamma ? json(*c.oracle.gamma) : json()},
                 {"delta", c.oracle.delta ? json(*c.oracle.delta) : json()}};
  return j;
}

/// 64-bit FNV-1a of the compact identity document, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string text = config_identity(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent per-trial stream: depends only on (seed, trial).
inline std::uint64_t trial_seed(std::uint64_t seed, int trial) {
  return mix_seed(mix_seed(seed) ^ mix_seed(static_cast<std::uint64_t>(trial) + 1));
}

/// A generated problem instance. lambda0 is empty for uncoupled games.
struct Instance {
  AggregativeGame game;
  CommNetwork net;
  Eigen::VectorXd x0;
  Eigen::MatrixXd lambda0;
  /// Draws rejected before an acceptable instance was found.
  int redraws = 0;
};

namespace detail {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(const Interval& i) {
    if (i.lo == i.hi) return i.lo;
    return std::uniform_real_distribution<double>(i.lo, i.hi)(rng_);
  }
  Eigen::VectorXd uniform(const Interval& i, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index k = 0; k < n; ++k) v(k) = uniform(i);
    return v;
  }
  Eigen::MatrixXd uniform(const Interval& i, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = uniform(i);
    }
    return m;
  }
  std::uint64_t next_seed() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

inline bool is_feasible(const ProjectionOperator& set, const Eigen::VectorXd& probe) {
  try {
    (void)set.project(probe);
    return true;
  } catch (const InfeasibleError&) {
    return false;
  }
}

}  // namespace detail

/// Random demand-response instance: each load draws its preferred profile,
/// cost weight and dynamics until its feasible set is nonempty; the price
/// slope and base price are shared; the network is Erdos-Renyi.
inline Instance gen_demand_response(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.kind != Case::kDemandResponse) {
    throw ConfigError("gen_demand_response: config case is " + std::string(to_string(c.kind)));
  }
  detail::Sampler rng(seed);
  const int T = c.dim;
  const double price_slope = rng.uniform(c.dr.price_slope);
  const Eigen::VectorXd p0 = rng.uniform(c.dr.p0, T);
  std::vector<AgentSpec> agents;
  int redraws = 0;
  for (int i = 0; i < c.N; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > c.redraw_limit) {
        throw ConfigError("gen_demand_response: no feasible draw for load " +
                          std::to_string(i) + " after " +
                          std::to_string(c.redraw_limit) + " redraws");
      }
      DemandResponseCost cost;
      cost.rho = rng.uniform(c.dr.rho);
      cost.u_hat = rng.uniform(c.dr.u_hat, T);
      cost.price_slope = price_slope;
      cost.p0 = p0;
      DemandResponseLoad load;
      load.horizon = T;
      load.a = rng.uniform(c.dr.a);
      load.b = rng.uniform(c.dr.b);
      load.s1 = rng.uniform(c.dr.s1);
      load.u_lo = c.dr.u_bounds.lo;
      load.u_hi = c.dr.u_bounds.hi;
      load.s_lo = c.dr.s_bounds.lo;
      load.s_hi = c.dr.s_bounds.hi;
      load.total = cost.u_hat.sum();
      ProjectionOperator set;
      try {
        set = make_demand_response_set(load, c.dykstra);
      } catch (const InfeasibleError&) {
        ++redraws;
        continue;
      }
      if (!detail::is_feasible(set, cost.u_hat)) {
        ++redraws;
        continue;
      }
      AgentSpec a = demand_response_agent(cost);
      a.local_set = std::move(set);
      agents.push_back(std::move(a));
      break;
    }
  }
  const Eigen::VectorXd x0 = rng.uniform(c.dr.x0, static_cast<Eigen::Index>(c.N) * T);
  CommNetwork net = network_from_json(c.graph, c.N, rng.next_seed());
  return Instance{AggregativeGame(std::move(agents), T, 0), std::move(net), x0,
                  Eigen::MatrixXd(), redraws};
}

/// Random coupled instance: deviation-tracking costs with shared weight,
/// random A_i, b_i redrawn until A = [A_1 ... A_N] has full row rank, and a
/// ring network by default.
inline Instance gen_coupling(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.kind != Case::kCoupling) {
    throw ConfigError("gen_coupling: config case is " + std::string(to_string(c.kind)));
  }
  const int N = c.N;
  const int n = c.dim;
  const int m = c.coupling_rows;
  if (m > N * n) {
    throw ConfigError("gen_coupling: m = " + std::to_string(m) + " exceeds n = " +
                      std::to_string(N * n));
  }
  detail::Sampler rng(seed);
  const double weight = rng.uniform(c.cp.weight);
  std::vector<Eigen::VectorXd> targets;
  for (int i = 0; i < N; ++i) targets.push_back(rng.uniform(c.cp.target, n));

  int redraws = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt > c.redraw_limit) {
      throw AssumptionError("gen_coupling: no full-row-rank A after " +
                            std::to_string(c.redraw_limit) + " redraws");
    }
    std::vector<CouplingBlock> blocks;
    Eigen::MatrixXd A(m, static_cast<Eigen::Index>(N) * n);
    for (int i = 0; i < N; ++i) {
      CouplingBlock cb{rng.uniform(c.cp.A, m, n), rng.uniform(c.cp.b, m)};
      A.middleCols(static_cast<Eigen::Index>(i) * n, n) = cb.A;
      blocks.push_back(std::move(cb));
    }
    const Eigen::MatrixXd AAt = A * A.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(AAt, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 1e-9 * std::max(1.0, AAt.norm()))) {
      ++redraws;
      continue;
    }
    std::vector<AgentSpec> agents;
    for (int i = 0; i < N; ++i) {
      AgentSpec a = deviation_tracking_agent({targets[i], weight});
      a.coupling = std::move(blocks[i]);
      agents.push_back(std::move(a));
    }
    const Eigen::VectorXd x0 = rng.uniform(c.cp.x0, static_cast<Eigen::Index>(N) * n);
    const Eigen::MatrixXd lambda0 = rng.uniform(c.cp.lambda0, N, m);
    CommNetwork net = network_from_json(c.graph, N, rng.next_seed());
    return Instance{AggregativeGame(std::move(agents), n, m), std::move(net), x0,
                    lambda0, redraws};
  }
}

/// Instance for a custom game document. Seed only affects random graphs.
inline Instance gen_custom(const ExperimentConfig& c, std::uint64_t seed) {
  AggregativeGame game = game_from_json(c.game);
  CommNetwork net = network_from_json(c.graph, game.agents(), mix_seed(seed));
  Eigen::VectorXd x0 = c.x0.is_null() ? Eigen::VectorXd::Zero(game.total_dim())
                                      : vector_from_json(c.x0, "x0");
  Eigen::MatrixXd lambda0;
  if (game.coupling_rows() > 0) {
    lambda0 = c.lambda0.is_null()
                  ? Eigen::MatrixXd::Zero(game.agents(), game.coupling_rows())
                  : matrix_from_json(c.lambda0, "lambda0");
  }
  return Instance{std::move(game), std::move(net), std::move(x0), std::move(lambda0), 0};
}

inline Instance generate_instance(const ExperimentConfig& c, std::uint64_t seed) {
  switch (c.kind) {
    case Case::kDemandResponse: return gen_demand_response(c, seed);
    case Case::kCoupling: return gen_coupling(c, seed);
    case Case::kCustom: return gen_custom(c, seed);
  }
  throw ConfigError("unknown case");
}

/// Reference solution for an instance: x* and, for coupled games, lambda*.
struct OracleResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  long iterations = 0;
  double residual = 0.0;
  /// Step size actually used (gamma for NE, delta for v-GNE).
  double step = 0.0;
  std::optional<KktReport> kkt;
};

inline OracleResult compute_oracle(const ExperimentConfig& c, const Instance& inst) {
  OracleResult out;
  if (inst.game.coupling_rows() == 0) {
    double gamma = 0.0;
    if (c.oracle.gamma) {
      gamma = *c.oracle.gamma;
    } else {
      const RaggedProfile x = inst.game.profile(inst.x0);
      const MonotonicityEstimate est = linear_monotonicity(pseudo_gradient_jacobian(inst.game, x));
      if (!est.monotone()) {
        throw AssumptionError("oracle: pseudo-gradient is not strongly monotone (mu ~ " +
                              std::to_string(est.mu) + "); set oracle.gamma");
      }
      gamma = est.mu / (est.lipschitz * est.lipschitz);
    }
    const NeSolution ne = solve_ne(inst.game, gamma, c.oracle.tol_ne, c.oracle.max_iters);
    out.x = ne.x;
    out.iterations = ne.iterations;
    out.residual = ne.residual;
    out.step = gamma;
  } else {
    const double delta = c.oracle.delta.value_or(c.delta);
    const VgneSolution v =
        solve_vgne(inst.game, delta, c.rho, c.oracle.tol_vgne, c.oracle.max_iters);
    out.x = v.x;
    out.lambda = v.lambda;
    out.iterations = v.iterations;
    out.residual = v.report.worst();
    out.step = delta;
    out.kkt = v.report;
  }
  return out;
}

inline json to_json(const KktReport& r) {
  return {{"primal_res", r.primal_res},
          {"dual_res", r.dual_res},
          {"cons_violation", r.cons_violation},
          {"complementarity", r.complementarity}};
}

inline json to_json(const RateFit& f) {
  return {{"r", f.r},
          {"slope", f.slope},
          {"intercept", f.intercept},
          {"fitted_ratio", f.fitted_ratio()},
          {"t_start", f.t_start},
          {"t_end", f.t_end},
          {"residual", f.residual},
          {"q_linear", f.q_linear}};
}

/// Median, mean and sample standard deviation.
struct SampleStats {
  double median = kNaN;
  double mean = kNaN;
  double stddev = kNaN;
  std::size_t count = 0;
};

inline SampleStats sample_stats(std::vector<double> v) {
  SampleStats s;
  s.count = v.size();
  if (v.empty()) return s;
  s.mean = compensated_sum(v) / static_cast<double>(v.size());
  std::vector<double> sq;
  sq.reserve(v.size());
  for (double x : v) sq.push_back((x - s.mean) * (x - s.mean));
  s.stddev = v.size() > 1 ? std::sqrt(compensated_sum(sq) / static_cast<double>(v.size() - 1))
                          : 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  s.median = v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

inline json to_json(const SampleStats& s) {
  return {{"median", s.median}, {"mean", s.mean}, {"std", s.stddev}, {"count", s.count}};
}

/// Outcome of one Monte Carlo trial.
struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string csv_path;
  Trace trace;
  OracleResult oracle;
  std::string stop_reason;
  std::optional<RateFit> rate;
  std::string rate_error;
  /// Final-iterate KKT report (coupled) at the mean multiplier.
  std::optional<KktReport> kkt;
  SampleStats wall_ns;
  std::vector<std::string> warnings;
  int redraws = 0;
};

/// Generates, solves and runs one trial. Failures are captured in the result.
inline TrialResult run_trial(const ExperimentConfig& c, int trial, bool keep_states = false) {
  TrialResult r;
  r.trial = trial;
  r.seed = trial_seed(c.seed, trial);
  try {
    Instance inst = generate_instance(c, r.seed);
    r.redraws = inst.redraws;
    r.oracle = compute_oracle(c, inst);
    const StopCriteria stop{c.max_iters, c.tol};
    if (inst.game.coupling_rows() == 0) {
      trades::State s = trades::init(inst.game, inst.net, inst.x0, {c.delta, c.gamma});
      r.warnings = s.warnings;
      trades::RunOptions opts;
      opts.oracle = r.oracle.x;
      opts.keep_states = keep_states;
      opts.workers = c.round_workers;
      trades::RunResult run = trades::run(std::move(s), inst.game, inst.net, stop, opts);
      r.trace = std::move(run.trace);
      r.stop_reason = to_string(run.reason);
    } else {
      trades_c::State s =
          trades_c::init(inst.game, inst.net, inst.x0, inst.lambda0, {c.delta, c.rho, true});
      trades_c::RunOptions opts;
      opts.oracle = r.oracle.x;
      opts.keep_states = keep_states;
      opts.workers = c.round_workers;
      trades_c::RunResult run = trades_c::run(std::move(s), inst.game, inst.net, stop, opts);
      r.kkt = kkt_residual(inst.game, run.state.x, trades_c::mean_multiplier(run.state.lambda),
                           c.rho);
      r.trace = std::move(run.trace);
      r.stop_reason = to_string(run.reason);
    }
    r.ok = true;
  } catch (const Error& e) {
    r.ok = false;
    r.error = e.what();
    return r;
  }

  try {
    r.rate = fit_qlinear_rate(r.trace.column(&TraceRecord::normalized_err), c.burn_in);
  } catch (const Error& e) {
    r.rate_error = e.what();
  }
  std::vector<double> wall;
  for (const auto& rec : r.trace.records) {
    if (rec.iter > c.warmup) wall.push_back(static_cast<double>(rec.wall_ns));
  }
  r.wall_ns = sample_stats(std::move(wall));
  return r;
}

/// Per-iteration mean and sample standard deviation of the normalized error
/// over the successful trials that reached that iteration.
struct ErrorBand {
  std::vector<long> iter;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<int> count;
};

inline ErrorBand error_band(const std::vector<TrialResult>& trials) {
  ErrorBand band;
  std::size_t len = 0;
  for (const auto& t : trials) {
    if (t.ok) len = std::max(len, t.trace.records.size());
  }
  for (std::size_t k = 0; k < len; ++k) {
    std::vector<double> vals;
    long it = static_cast<long>(k);
    for (const auto& t : trials) {
      if (t.ok && k < t.trace.records.size()) {
        vals.push_back(t.trace.records[k].normalized_err);
        it = t.trace.records[k].iter;
      }
    }
    const SampleStats s = sample_stats(vals);
    band.iter.push_back(it);
    band.mean.push_back(s.mean);
    band.stddev.push_back(s.stddev);
    band.count.push_back(static_cast<int>(s.count));
  }
  return band;
}

struct MonteCarloSummary {
  ExperimentConfig config;
  std::string hash;
  std::vector<TrialResult> trials;
  ErrorBand band;
  int failed = 0;
  /// Across successful trials: statistics of the per-trial median iterate time.
  SampleStats wall_ns_per_iter;
  std::vector<std::string> csv_files;

  bool all_failed() const { return failed == static_cast<int>(trials.size()); }
};

inline std::string trace_comment(const ExperimentConfig& c, const std::string& hash,
                                 int trial, std::uint64_t seed) {
  return "schema=" + std::to_string(kTraceSchemaVersion) + " config_hash=" + hash +
         " case=" + to_string(c.kind) + " trial=" + std::to_string(trial) +
         " trial_seed=" + std::to_string(seed);
}

inline std::string trace_file_name(int trial) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trace_trial_%03d.csv", trial);
  return buf;
}

inline json summary_to_json(const MonteCarloSummary& s) {
  json j;
  j["schema"] = kTraceSchemaVersion;
  j["config_hash"] = s.hash;
  j["config"] = config_identity(s.config);
  j["trials"] = s.config.trials;
  j["failed_trials"] = s.failed;
  j["normalized_err"] = {{"iter", s.band.iter},
                         {"mean", s.band.mean},
                         {"std", s.band.stddev},
                         {"count", s.band.count}};
  j["wall_ns_per_iter"] = to_json(s.wall_ns_per_iter);
  json per = json::array();
  for (const auto& t : s.trials) {
    json tj;
    tj["trial"] = t.trial;
    tj["seed"] = t.seed;
    tj["status"] = t.ok ? "ok" : "failed";
    if (!t.ok) {
      tj["error"] = t.error;
      per.push_back(tj);
      continue;
    }
    tj["csv"] = t.csv_path;
    tj["stop_reason"] = t.stop_reason;
    tj["iterations"] = t.trace.records.empty() ? 0 : t.trace.records.back().iter;
    tj["initial_normalized_err"] = t.trace.records.front().normalized_err;
    tj["final_normalized_err"] = t.trace.records.back().normalized_err;
    tj["rate"] = t.rate ? to_json(*t.rate) : json();
    if (!t.rate_error.empty()) tj["rate_error"] = t.rate_error;
    tj["kkt"] = t.kkt ? to_json(*t.kkt) : json();
    tj["oracle"] = {{"iterations", t.oracle.iterations},
                    {"residual", t.oracle.residual},
                    {"step", t.oracle.step},
                    {"x_norm", t.oracle.x.norm()}};
    if (t.oracle.kkt) tj["oracle"]["kkt"] = to_json(*t.oracle.kkt);
    tj["wall_ns_per_iter"] = to_json(t.wall_ns);
    tj["redraws"] = t.redraws;
    tj["warnings"] = t.warnings;
    per.push_back(tj);
  }
  j["per_trial"] = per;
  return j;
}

/// Runs every trial, writes one trace CSV per successful trial plus
/// summary.json into config.output_dir (skipped when it is empty), and
/// returns the summary. Trials run on config.threads workers; every trial
/// depends only on (seed, trial), so the schedule does not affect results.
inline MonteCarloSummary run_monte_carlo(const ExperimentConfig& c) {
  MonteCarloSummary s;
  s.config = c;
  s.hash = config_hash(c);
  s.trials.resize(static_cast<std::size_t>(c.trials));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next.fetch_add(1); k < c.trials; k = next.fetch_add(1)) {
      s.trials[static_cast<std::size_t>(k)] = run_trial(c, k);
    }
  };
  const int threads = std::min(c.threads, c.trials);
  std::vector<std::thread> pool;
  for (int w = 1; w < threads; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const bool write = !c.output_dir.empty();
  const std::filesystem::path dir(c.output_dir);
  if (write) std::filesystem::create_directories(dir);

  std::vector<double> medians;
  for (auto& t : s.trials) {
    if (!t.ok) {
      ++s.failed;
      continue;
    }
    if (std::isfinite(t.wall_ns.median)) medians.push_back(t.wall_ns.median);
    if (write) {
      t.csv_path = trace_file_name(t.trial);
      std::ofstream f(dir / t.csv_path, std::ios::binary);
      if (!f) throw ConfigError("cannot write " + (dir / t.csv_path).string());
      write_trace_csv(f, t.trace, t.trial, trace_comment(c, s.hash, t.trial, t.seed));
      s.csv_files.push_back(t.csv_path);
    }
  }
  s.band = error_band(s.trials);
  s.wall_ns_per_iter = sample_stats(std::move(medians));
  if (write) {
    std::ofstream f(dir / "summary.json", std::ios::binary);
    if (!f) throw ConfigError("cannot write " + (dir / "summary.json").string());
    f << summary_to_json(s).dump(2) << '\n';
  }
  return s;
}

/// Standing-assumption checks for one instance under the configured
/// algorithm parameters.
struct AssumptionReport {
  json detail;
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

inline AssumptionReport check_assumptions(const ExperimentConfig& c, const Instance& inst) {
  AssumptionReport rep;
  const AggregativeGame& game = inst.game;
  const NetworkReport nr = validate(inst.net);
  rep.detail["network"] = {{"agents", inst.net.agents()},
                           {"max_row_sum_error", nr.max_row_sum_error},
                           {"max_col_sum_error", nr.max_col_sum_error},
                           {"min_weight", nr.min_weight},
                           {"scc_count", nr.scc_count},
                           {"contraction", nr.contraction}};
  for (const auto& v : nr.violations) rep.violations.push_back("network: " + v);
  if (inst.net.agents() != game.agents()) {
    rep.violations.push_back("network has " + std::to_string(inst.net.agents()) +
                             " agents, game has " + std::to_string(game.agents()));
    return rep;
  }

  const RaggedProfile x = game.profile(inst.x0);
  const MonotonicityEstimate est = linear_monotonicity(pseudo_gradient_jacobian(game, x));
  rep.detail["game"] = {{"agents", game.agents()},
                        {"total_dim", game.total_dim()},
                        {"agg_dim", game.agg_dim()},
                        {"coupling_rows", game.coupling_rows()},
                        {"mu", est.mu},
                        {"lipschitz", est.lipschitz},
                        {"gamma_bound", est.gamma_bound()}};
  if (!est.monotone()) {
    rep.violations.push_back("pseudo-gradient is not strongly monotone (mu = " +
                             std::to_string(est.mu) + ")");
  }

  if (game.coupling_rows() == 0) {
    if (!(c.delta > 0.0 && c.delta < 1.0)) {
      rep.violations.push_back("delta = " + std::to_string(c.delta) + " is outside (0, 1)");
    }
    if (est.monotone() && !(c.gamma < est.gamma_bound())) {
      rep.violations.push_back("gamma = " + std::to_string(c.gamma) +
                               " is not below 2 mu / L^2 = " +
                               std::to_string(est.gamma_bound()));
    }
    return rep;
  }

  const double margin = coupling_rank_margin(game);
  const double ratio = c.delta / c.rho;
  double min_self = std::numeric_limits<double>::infinity();
  for (int i = 0; i < inst.net.agents(); ++i) min_self = std::min(min_self, inst.net.self_weight(i));
  rep.detail["coupling"] = {{"rank_margin", margin},
                            {"delta_over_rho", ratio},
                            {"min_self_weight", min_self},
                            {"lambda0_min", inst.lambda0.size() > 0 ? inst.lambda0.minCoeff() : 0.0}};
  if (!(margin > 1e-12)) {
    rep.violations.push_back("coupling matrix is not of full row rank (lambda_min(A A^T) = " +
                             std::to_string(margin) + ")");
  }
  if (!(min_self > ratio)) {
    rep.violations.push_back("self weight " + std::to_string(min_self) +
                             " does not exceed delta/rho = " + std::to_string(ratio));
  }
  if (inst.lambda0.size() > 0 && inst.lambda0.minCoeff() < 0.0) {
    rep.violations.push_back("initial multipliers must be nonnegative");
  }
  if (game.has_local_constraints()) {
    rep.violations.push_back("local feasible sets are not supported with coupling constraints");
  }
  return rep;
}

/// One curve of a plot: a label and the trace CSVs whose normalized error is
/// averaged.
struct PlotSeries {
  std::string label;
  std::vector<std::string> csv_files;
};

/// Python/matplotlib script that reads the listed CSVs, and draws the mean
/// normalized error with a one-standard-deviation band per series on semilog
/// axes. Paths are written relative to `base_dir` when it is given, and
/// every file must exist.
inline std::string plot_script(const std::vector<PlotSeries>& series,
                               const std::string& base_dir = {},
                               const std::string& image = "normalized_error.png") {
  json spec = json::array();
  std::size_t files = 0;
  for (const auto& s : series) {
    for (const auto& f : s.csv_files) {
      const std::filesystem::path p = base_dir.empty()
                                          ? std::filesystem::path(f)
                                          : std::filesystem::path(base_dir) / f;
      if (!std::filesystem::exists(p)) {
        throw ConfigError("emit_plot_script: missing CSV file " + p.string());
      }
    }
    files += s.csv_files.size();
    spec.push_back({{"label", s.label}, {"files", s.csv_files}});
  }
  std::ostringstream os;
  os << "#!/usr/bin/env python3\n"
        "\"\"\"Mean normalized error with a 1-std band, one curve per series.\"\"\"\n";
  if (files == 0) os << "# WARNING: no trial traces were available; the plot is empty.\n";
  os << "import csv\n"
        "import os\n"
        "import numpy as np\n"
        "import matplotlib\n"
        "matplotlib.use(\"Agg\")\n"
        "import matplotlib.pyplot as plt\n\n"
        "HERE = os.path.dirname(os.path.abspath(__file__))\n"
        "SERIES = " << spec.dump() << "\n"
        "IMAGE = " << json(image).dump() << "\n\n"
        "def load(path):\n"
        "    with open(os.path.join(HERE, path)) as f:\n"
        "        rows = csv.DictReader(line for line in f if not line.startswith(\"#\"))\n"
        "        data = [(int(r[\"iter\"]), float(r[\"normalized_err\"])) for r in rows]\n"
        "    return dict(data)\n\n"
        "fig, ax = plt.subplots(figsize=(6, 4))\n"
        "for s in SERIES:\n"
        "    traces = [load(p) for p in s[\"files\"]]\n"
        "    if not traces:\n"
        "        continue\n"
        "    iters = sorted(set().union(*traces))\n"
        "    mean, lo, hi = [], [], []\n"
        "    for t in iters:\n"
        "        vals = np.array([tr[t] for tr in traces if t in tr])\n"
        "        m = vals.mean()\n"
        "        sd = vals.std(ddof=1) if len(vals) > 1 else 0.0\n"
        "        mean.append(m)\n"
        "        lo.append(max(m - sd, m * 1e-3))\n"
        "        hi.append(m + sd)\n"
        "    line, = ax.semilogy(iters, mean, label=s[\"label\"])\n"
        "    ax.fill_between(iters, lo, hi, color=line.get_color(), alpha=0.25)\n"
        "ax.set_xlabel(\"iteration\")\n"
        "ax.set_ylabel(\"normalized distance to equilibrium\")\n"
        "ax.grid(True, which=\"both\", alpha=0.3)\n"
        "if any(s[\"files\"] for s in SERIES):\n"
        "    ax.legend()\n"
        "fig.tight_layout()\n"
        "fig.savefig(os.path.join(HERE, IMAGE), dpi=150)\n";
  return os.str();
}

/// Writes plot.py next to the summary's CSVs and returns its path.
inline std::string emit_plot_script(const MonteCarloSummary& s,
                                    const std::string& label = {}) {
  if (s.config.output_dir.empty()) {
    throw ConfigError("emit_plot_script: summary was not written to disk");
  }
  const std::string name =
      label.empty() ? std::string(to_string(s.config.kind)) : label;
  const std::string text = plot_script({{name, s.csv_files}}, s.config.output_dir);
  const std::filesystem::path out = std::filesystem::path(s.config.output_dir) / "plot.py";
  std::ofstream f(out, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + out.string());
  f << text;
  return out.string();
}

}  // namespace aggeq
