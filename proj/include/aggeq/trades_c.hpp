#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "aggeq/errors.hpp"
#include "aggeq/game.hpp"
#include "aggeq/network.hpp"
#include "aggeq/ragged.hpp"
#include "aggeq/rounds.hpp"
#include "aggeq/trace.hpp"

namespace aggeq::trades_c {

/// Augmented penalty sum_l H_l(a_l, lambda_l) with
/// H_l = a lambda + rho/2 a^2 when rho a + lambda >= 0, else -lambda^2/(2 rho).
inline double h_penalty(const Eigen::VectorXd& a, const Eigen::VectorXd& lambda,
                        double rho) {
  double total = 0.0;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (rho * a(l) + lambda(l) >= 0.0) {
      total += a(l) * lambda(l) + 0.5 * rho * a(l) * a(l);
    } else {
      total += -lambda(l) * lambda(l) / (2.0 * rho);
    }
  }
  return total;
}

struct PenaltyGradient {
  Eigen::VectorXd d_a;
  Eigen::VectorXd d_lambda;
};

/// Gradients of h_penalty: d_a = max(rho a + lambda, 0) and
/// d_lambda = (max(rho a + lambda, 0) - lambda) / rho. The kink resolves to 0.
inline PenaltyGradient grad_h(const Eigen::VectorXd& a,
                              const Eigen::VectorXd& lambda, double rho) {
  const Eigen::VectorXd active = (rho * a + lambda).cwiseMax(0.0);
  return {active, (active - lambda) / rho};
}

/// Agent i's share of grad_x H evaluated at its local estimates:
/// sum_l max(rho [s1]_l + [s2]_l, 0) [A_i]_l^T.
inline Eigen::VectorXd g_x(const Eigen::MatrixXd& A_i, const Eigen::VectorXd& s1,
                           const Eigen::VectorXd& s2, double rho) {
  return A_i.transpose() * (rho * s1 + s2).cwiseMax(0.0);
}

/// Agent i's estimate of grad_lambda H:
/// (1/rho) sum_l (max(rho [s1]_l + [s2]_l, 0) - [s2]_l) e_l.
inline Eigen::VectorXd g_lambda(const Eigen::VectorXd& s1,
                                const Eigen::VectorXd& s2, double rho) {
  return ((rho * s1 + s2).cwiseMax(0.0) - s2) / rho;
}

struct Params {
  double delta = 0.05;
  double rho = 0.1;
  /// Raise SafeguardViolation if a multiplier goes below -1e-12.
  bool check_safeguard = true;
};

/// x (ragged), local multipliers lambda (N x m), aggregate trackers z (N x d)
/// and constraint trackers y (N x m); row i belongs to agent i.
struct State {
  RaggedProfile x;
  Eigen::MatrixXd lambda;
  Eigen::MatrixXd z;
  Eigen::MatrixXd y;
  /// Low-order parts of z and y lost to rounding, carried between rounds.
  Eigen::MatrixXd z_carry;
  Eigen::MatrixXd y_carry;
  long t = 0;
  Params params;
};

struct StepOptions {
  RoundExecutor* executor = nullptr;
  LocalityGuard* guard = nullptr;
};

inline constexpr double kSafeguardFloor = -1e-12;

/// Rejects configurations outside the algorithm's assumptions: no coupling
/// rows, local constraint sets, w_ii <= delta / rho, or negative lambda0.
inline State init(const AggregativeGame& game, const CommNetwork& net,
                  const Eigen::VectorXd& x0, const Eigen::MatrixXd& lambda0,
                  const Params& params) {
  const int N = game.agents();
  if (N != net.agents()) {
    throw DimensionError("game has " + std::to_string(N) +
                         " agents, network has " + std::to_string(net.agents()));
  }
  game.require_coupling("trades_c::init");
  if (game.has_local_constraints()) {
    throw ConfigError(
        "trades_c: local feasible sets are not supported together with coupling "
        "constraints; the x-update has no projection");
  }
  if (!(params.delta > 0.0) || !(params.rho > 0.0)) {
    throw ConfigError("trades_c: delta and rho must be positive");
  }
  const double ratio = params.delta / params.rho;
  for (int i = 0; i < N; ++i) {
    if (!(net.self_weight(i) > ratio)) {
      throw AssumptionError("trades_c: w_ii = " +
                            std::to_string(net.self_weight(i)) + " at agent " +
                            std::to_string(i) + " must exceed delta/rho = " +
                            std::to_string(ratio));
    }
  }
  const int m = game.coupling_rows();
  if (lambda0.rows() != N || lambda0.cols() != m) {
    throw DimensionError("lambda0 must be " + std::to_string(N) + " x " +
                         std::to_string(m));
  }
  if (lambda0.size() > 0 && lambda0.minCoeff() < 0.0) {
    throw ConfigError("trades_c: initial multipliers must be nonnegative");
  }
  State s;
  s.x = game.profile(x0);
  s.lambda = lambda0;
  s.z = Eigen::MatrixXd::Zero(N, game.agg_dim());
  s.y = Eigen::MatrixXd::Zero(N, m);
  s.z_carry = s.z;
  s.y_carry = s.y;
  s.params = params;
  return s;
}

/// One synchronous round. Agent i broadcasts (lambda_i, z_i, y_i, phi_i(x_i),
/// N (A_i x_i - b_i)) and updates from in-neighbour messages only. The
/// trackers use the same difference form as trades::step.
inline void step(State& s, const AggregativeGame& game, const CommNetwork& net,
                 const StepOptions& opts = {}) {
  const int N = game.agents();
  const int d = game.agg_dim();
  const int m = game.coupling_rows();
  const double delta = s.params.delta;
  const double rho = s.params.rho;

  Mailbox mail;
  mail.channels = {s.lambda, s.z, s.y, Eigen::MatrixXd(N, d),
                   Eigen::MatrixXd(N, m)};
  enum : std::size_t { kLambda = 0, kZ = 1, kY = 2, kPhi = 3, kLocal = 4 };

  RoundExecutor inline_exec(1);
  RoundExecutor& exec = opts.executor != nullptr ? *opts.executor : inline_exec;

  exec.for_each_agent(N, [&](int i) {
    const AgentSpec& a = game.agent(i);
    const Eigen::VectorXd xi = s.x.block(i);
    mail.channels[kPhi].row(i) = a.phi(xi).transpose();
    mail.channels[kLocal].row(i) =
        (static_cast<double>(N) * (a.coupling->A * xi - a.coupling->b)).transpose();
  });

  Eigen::MatrixXd z_carry = s.z_carry;
  Eigen::MatrixXd y_carry = s.y_carry;
  if (z_carry.rows() != N || z_carry.cols() != d) z_carry = Eigen::MatrixXd::Zero(N, d);
  if (y_carry.rows() != N || y_carry.cols() != m) y_carry = Eigen::MatrixXd::Zero(N, m);
  RaggedProfile x_next = s.x;
  Eigen::MatrixXd lambda_next(N, m), z_next(N, d), y_next(N, m);
  exec.for_each_agent(N, [&](int i) {
    const AgentSpec& a = game.agent(i);
    const Eigen::VectorXd xi = s.x.block(i);
    const Eigen::VectorXd phi_i = mail.channels[kPhi].row(i).transpose();
    const Eigen::VectorXd local_i = mail.channels[kLocal].row(i).transpose();
    const Eigen::VectorXd zi = s.z.row(i).transpose();
    const Eigen::VectorXd yi = s.y.row(i).transpose();
    const Eigen::VectorXd lambda_i = s.lambda.row(i).transpose();

    const Eigen::VectorXd s1 = local_i + yi;
    x_next.block(i) = xi - delta * f_tilde(game, i, xi, phi_i + zi) -
                      delta * g_x(a.coupling->A, s1, lambda_i, rho);

    const Inbox inbox(net, mail, i, opts.guard);
    lambda_next.row(i) =
        (inbox.weighted_sum(kLambda) + delta * g_lambda(s1, lambda_i, rho))
            .transpose();
    z_next.row(i) = inbox.tracker_update(kZ, kPhi, z_carry).transpose();
    y_next.row(i) = inbox.tracker_update(kY, kLocal, y_carry).transpose();
  });

  if (s.params.check_safeguard && m > 0 && lambda_next.minCoeff() < kSafeguardFloor) {
    throw SafeguardViolation("trades_c: multiplier dropped to " +
                             std::to_string(lambda_next.minCoeff()) + " at t = " +
                             std::to_string(s.t + 1) +
                             "; check that w_ii > delta / rho");
  }
  s.x = std::move(x_next);
  s.lambda = std::move(lambda_next);
  s.z = std::move(z_next);
  s.y = std::move(y_next);
  s.z_carry = std::move(z_carry);
  s.y_carry = std::move(y_carry);
  ++s.t;
}

struct PrimalDual {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
};

/// Centralized augmented primal-dual step
///   x+ = x - delta F(x) - delta grad_x H(Ax - b, lambda)
///   lambda+ = lambda + delta grad_lambda H(Ax - b, lambda).
/// Written block by block in the same operation order as step() so that a
/// single-agent network reproduces it bit for bit.
inline PrimalDual centralized_pd_step(const AggregativeGame& game,
                                      const RaggedProfile& x,
                                      const Eigen::VectorXd& lambda,
                                      double delta, double rho) {
  const Eigen::VectorXd c = coupling_residual(game, x);
  const Eigen::VectorXd s = sigma(game, x);
  PrimalDual out{Eigen::VectorXd(x.size()), {}};
  for (int i = 0; i < game.agents(); ++i) {
    const Eigen::VectorXd xi = x.block(i);
    out.x.segment(x.offset(i), x.dim(i)) =
        xi - delta * f_tilde(game, i, xi, s) -
        delta * g_x(game.agent(i).coupling->A, c, lambda, rho);
  }
  out.lambda = lambda + delta * g_lambda(c, lambda, rho);
  return out;
}

struct RunOptions {
  std::optional<Eigen::VectorXd> oracle;
  bool keep_states = false;
  int workers = 1;
  LocalityGuard* guard = nullptr;
  double blowup = 1e100;
};

struct RunResult {
  State state;
  Trace trace;
  StopReason reason = StopReason::kMaxIters;
};

inline Eigen::VectorXd mean_multiplier(const Eigen::MatrixXd& lambda) {
  return lambda.colwise().mean().transpose();
}

inline TraceRecord make_record(const AggregativeGame& game, const State& s,
                               const RunOptions& opts, double step_norm) {
  TraceRecord r;
  r.iter = s.t;
  r.step_norm = step_norm;
  const Eigen::VectorXd sig = sigma(game, s.x);
  const Eigen::VectorXd c = coupling_residual(game, s.x);
  const int N = game.agents();
  double track = 0.0;
  for (int i = 0; i < N; ++i) {
    const Eigen::VectorXd est =
        game.agent(i).phi(s.x.block(i)) + s.z.row(i).transpose();
    track = std::max(track, (est - sig).norm());
  }
  r.tracking_err_max = track;
  r.mean_z_norm = column_sum_norm(s.z);
  r.mean_y_norm = column_sum_norm(s.y);
  r.cons_violation_inf =
      c.size() > 0 ? c.cwiseMax(0.0).lpNorm<Eigen::Infinity>() : 0.0;
  const Eigen::VectorXd lbar = mean_multiplier(s.lambda);
  r.dual_consensus_err = (s.lambda.rowwise() - lbar.transpose()).norm();
  const PenaltyGradient gh = grad_h(c, lbar, s.params.rho);
  Eigen::VectorXd primal = pseudo_gradient(game, s.x);
  for (int i = 0; i < N; ++i) {
    primal.segment(s.x.offset(i), s.x.dim(i)) +=
        game.agent(i).coupling->A.transpose() * gh.d_a;
  }
  r.kkt_primal_res = primal.norm();
  r.kkt_dual_res = gh.d_lambda.norm();
  r.lambda_min = s.lambda.size() > 0 ? s.lambda.minCoeff() : 0.0;
  if (opts.oracle) {
    r.err_to_oracle = (s.x.flat() - *opts.oracle).norm();
    r.normalized_err = r.err_to_oracle / opts.oracle->norm();
  }
  return r;
}

inline RunResult run(State state, const AggregativeGame& game,
                     const CommNetwork& net, const StopCriteria& stop,
                     const RunOptions& opts = {}) {
  if (stop.max_iters < 0) throw ConfigError("max_iters must be nonnegative");
  RunResult out;
  out.trace.coupled = true;
  RoundExecutor exec(opts.workers);
  StepOptions step_opts{&exec, opts.guard};

  auto snapshot = [&] {
    if (opts.keep_states) {
      out.trace.states.push_back({state.x.flat(), state.z, state.y, state.lambda});
    }
  };
  out.trace.records.push_back(make_record(game, state, opts, kNaN));
  snapshot();

  const bool use_tol = std::isfinite(stop.tol);
  for (long k = 0; k < stop.max_iters; ++k) {
    const Eigen::VectorXd previous = state.x.flat();
    const auto t0 = std::chrono::steady_clock::now();
    step(state, game, net, step_opts);
    const auto t1 = std::chrono::steady_clock::now();
    if (!state.x.flat().allFinite() || !state.lambda.allFinite() ||
        !state.z.allFinite() || !state.y.allFinite() ||
        state.x.flat().lpNorm<Eigen::Infinity>() > opts.blowup) {
      throw DivergenceError("trades_c: iterate diverged at t = " +
                                std::to_string(state.t),
                            previous, state.t);
    }
    const double step_norm = (state.x.flat() - previous).norm() / state.params.delta;
    TraceRecord rec = make_record(game, state, opts, step_norm);
    rec.wall_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    out.trace.records.push_back(rec);
    snapshot();
    if (use_tol && step_norm <= stop.tol) {
      out.reason = StopReason::kTolerance;
      break;
    }
  }
  out.state = std::move(state);
  return out;
}

}  // namespace aggeq::trades_c
