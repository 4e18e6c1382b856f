#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "aggeq/errors.hpp"
#include "aggeq/game.hpp"
#include "aggeq/network.hpp"
#include "aggeq/projections.hpp"
#include "aggeq/ragged.hpp"
#include "aggeq/rounds.hpp"
#include "aggeq/trace.hpp"

namespace aggeq::trades {

struct Params {
  double delta = 0.5;
  double gamma = 0.001;
};

/// Strategies x (ragged), trackers z (N x d, row i = z_i) and the per-agent
/// Dykstra warm starts.
struct State {
  RaggedProfile x;
  Eigen::MatrixXd z;
  /// Low-order part of z lost to rounding, carried between rounds.
  Eigen::MatrixXd z_carry;
  long t = 0;
  Params params;
  /// |x0 - P_X(x0)| when init had to project an infeasible start.
  double init_projection_distance = 0.0;
  std::vector<std::string> warnings;
  std::vector<ProjectionWorkspace> workspaces;
};

struct StepOptions {
  RoundExecutor* executor = nullptr;
  LocalityGuard* guard = nullptr;
};

inline void check_compatible(const AggregativeGame& game,
                             const CommNetwork& net) {
  if (game.agents() != net.agents()) {
    throw DimensionError("game has " + std::to_string(game.agents()) +
                         " agents, network has " +
                         std::to_string(net.agents()));
  }
}

/// Step bound 2 mu / L^2 from the linearization of F at x. Exact when
/// F is affine.
inline MonotonicityEstimate local_monotonicity(const AggregativeGame& game,
                                               const RaggedProfile& x) {
  return linear_monotonicity(pseudo_gradient_jacobian(game, x));
}

inline State init(const AggregativeGame& game, const CommNetwork& net,
                  const Eigen::VectorXd& x0, const Params& params) {
  check_compatible(game, net);
  if (!(params.delta > 0.0 && params.delta < 1.0)) {
    throw ConfigError("trades: delta must lie in (0, 1)");
  }
  if (!(params.gamma > 0.0)) throw ConfigError("trades: gamma must be positive");

  State s;
  s.x = game.profile(x0);
  s.params = params;
  s.workspaces.resize(game.agents());
  for (int i = 0; i < game.agents(); ++i) {
    const auto& set = game.agent(i).local_set;
    if (set.is_free()) continue;
    const Eigen::VectorXd xi = s.x.block(i);
    s.x.block(i) = set.project(xi, s.workspaces[i]);
  }
  s.init_projection_distance = (s.x.flat() - x0).norm();
  if (s.init_projection_distance > 0.0) {
    s.warnings.push_back("x0 was infeasible and has been projected (distance " +
                         std::to_string(s.init_projection_distance) + ")");
  }
  s.z = Eigen::MatrixXd::Zero(game.agents(), game.agg_dim());
  s.z_carry = s.z;

  const MonotonicityEstimate est = local_monotonicity(game, s.x);
  const double bound = est.gamma_bound();
  if (!est.monotone()) {
    s.warnings.push_back("pseudo-gradient does not look strongly monotone (mu ~ " +
                         std::to_string(est.mu) + ")");
  } else if (params.gamma >= bound * (1.0 - 1e-6)) {
    s.warnings.push_back("gamma = " + std::to_string(params.gamma) +
                         " is not below the contraction bound 2 mu / L^2 ~ " +
                         std::to_string(bound));
  }
  return s;
}

/// One synchronous round. Every agent publishes (z_i, phi_i(x_i)); then each
/// agent updates from its own state and its in-neighbours' messages only:
///   x_i+ = x_i + delta (P_Xi[x_i - gamma Ftilde_i(x_i, phi_i + z_i)] - x_i)
///   z_i+ = sum_j w_ij z_j + sum_j w_ij phi_j - phi_i,
/// the latter evaluated as z_i + sum_{j != i} w_ij ((z_j + phi_j) - (z_i + phi_i)).
inline void step(State& s, const AggregativeGame& game, const CommNetwork& net,
                 const StepOptions& opts = {}) {
  const int N = game.agents();
  const int d = game.agg_dim();
  const double delta = s.params.delta;
  const double gamma = s.params.gamma;

  Mailbox mail;
  mail.channels = {s.z, Eigen::MatrixXd(N, d)};
  enum : std::size_t { kZ = 0, kPhi = 1 };

  RoundExecutor inline_exec(1);
  RoundExecutor& exec = opts.executor != nullptr ? *opts.executor : inline_exec;

  exec.for_each_agent(N, [&](int i) {
    mail.channels[kPhi].row(i) = game.agent(i).phi(s.x.block(i)).transpose();
  });

  Eigen::MatrixXd z_carry = s.z_carry;
  if (z_carry.rows() != N || z_carry.cols() != d) z_carry = Eigen::MatrixXd::Zero(N, d);
  RaggedProfile x_next = s.x;
  Eigen::MatrixXd z_next(N, d);
  exec.for_each_agent(N, [&](int i) {
    const AgentSpec& agent = game.agent(i);
    const Eigen::VectorXd xi = s.x.block(i);
    const Eigen::VectorXd phi_i = mail.channels[kPhi].row(i).transpose();
    const Eigen::VectorXd zi = s.z.row(i).transpose();

    const Eigen::VectorXd g = f_tilde(game, i, xi, phi_i + zi);
    Eigen::VectorXd target = xi - gamma * g;
    if (!agent.local_set.is_free()) {
      target = agent.local_set.project(target, s.workspaces[i]);
    }
    x_next.block(i) = xi + delta * (target - xi);

    const Inbox inbox(net, mail, i, opts.guard);
    z_next.row(i) = inbox.tracker_update(kZ, kPhi, z_carry).transpose();
  });

  s.x = std::move(x_next);
  s.z = std::move(z_next);
  s.z_carry = std::move(z_carry);
  ++s.t;
}

/// Centralized reduced iteration x+ = x + delta (P_X[x - gamma F(x)] - x).
/// Its fixed points are exactly the Nash equilibria.
inline Eigen::VectorXd reduced_step(
    const AggregativeGame& game, const RaggedProfile& x, double delta,
    double gamma, std::vector<ProjectionWorkspace>* workspaces = nullptr) {
  const Eigen::VectorXd F = pseudo_gradient(game, x);
  Eigen::VectorXd out(x.size());
  for (int i = 0; i < game.agents(); ++i) {
    const auto& set = game.agent(i).local_set;
    const Eigen::VectorXd xi = x.block(i);
    Eigen::VectorXd target = xi - gamma * F.segment(x.offset(i), x.dim(i));
    if (!set.is_free()) {
      target = workspaces != nullptr ? set.project(target, (*workspaces)[i])
                                     : set.project(target);
    }
    out.segment(x.offset(i), x.dim(i)) = xi + delta * (target - xi);
  }
  return out;
}

struct RunOptions {
  /// Reference equilibrium; enables the err_to_oracle columns.
  std::optional<Eigen::VectorXd> oracle;
  bool keep_states = false;
  /// Workers for the barrier-parallel round mode; 1 runs inline.
  int workers = 1;
  LocalityGuard* guard = nullptr;
  /// Any entry of x above this magnitude counts as divergence.
  double blowup = 1e100;
};

struct RunResult {
  State state;
  Trace trace;
  StopReason reason = StopReason::kMaxIters;
};

inline double max_tracking_error(const AggregativeGame& game,
                                 const RaggedProfile& x,
                                 const Eigen::MatrixXd& z) {
  const Eigen::VectorXd sig = sigma(game, x);
  double worst = 0.0;
  for (int i = 0; i < game.agents(); ++i) {
    const Eigen::VectorXd est = game.agent(i).phi(x.block(i)) + z.row(i).transpose();
    worst = std::max(worst, (est - sig).norm());
  }
  return worst;
}

inline TraceRecord make_record(const AggregativeGame& game, const State& s,
                               const RunOptions& opts, double step_norm) {
  TraceRecord r;
  r.iter = s.t;
  r.step_norm = step_norm;
  r.tracking_err_max = max_tracking_error(game, s.x, s.z);
  r.mean_z_norm = column_sum_norm(s.z);
  if (opts.oracle) {
    r.err_to_oracle = (s.x.flat() - *opts.oracle).norm();
    r.normalized_err = r.err_to_oracle / opts.oracle->norm();
  }
  return r;
}

inline RunResult run(State state, const AggregativeGame& game,
                     const CommNetwork& net, const StopCriteria& stop,
                     const RunOptions& opts = {}) {
  check_compatible(game, net);
  if (stop.max_iters < 0) throw ConfigError("max_iters must be nonnegative");
  if (!(stop.tol >= 0.0) && !std::isnan(stop.tol)) {
    throw ConfigError("tol must be nonnegative");
  }
  RunResult out;
  RoundExecutor exec(opts.workers);
  StepOptions step_opts{&exec, opts.guard};

  out.trace.records.push_back(make_record(game, state, opts, kNaN));
  if (opts.keep_states) out.trace.states.push_back({state.x.flat(), state.z, {}, {}});

  const bool use_tol = std::isfinite(stop.tol);
  for (long k = 0; k < stop.max_iters; ++k) {
    const Eigen::VectorXd previous = state.x.flat();
    const auto t0 = std::chrono::steady_clock::now();
    step(state, game, net, step_opts);
    const auto t1 = std::chrono::steady_clock::now();

    if (!state.x.flat().allFinite() || !state.z.allFinite() ||
        state.x.flat().lpNorm<Eigen::Infinity>() > opts.blowup) {
      throw DivergenceError("trades: iterate diverged at t = " +
                                std::to_string(state.t),
                            previous, state.t);
    }
    const double step_norm = (state.x.flat() - previous).norm() / state.params.delta;
    TraceRecord rec = make_record(game, state, opts, step_norm);
    rec.wall_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    out.trace.records.push_back(rec);
    if (opts.keep_states) out.trace.states.push_back({state.x.flat(), state.z, {}, {}});

    if (use_tol && step_norm <= stop.tol) {
      out.reason = StopReason::kTolerance;
      break;
    }
  }
  out.state = std::move(state);
  return out;
}

}  // namespace aggeq::trades
