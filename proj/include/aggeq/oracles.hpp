#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "aggeq/errors.hpp"
#include "aggeq/game.hpp"
#include "aggeq/network.hpp"
#include "aggeq/trace.hpp"
#include "aggeq/trades.hpp"
#include "aggeq/trades_c.hpp"

namespace aggeq {

struct NeSolution {
  Eigen::VectorXd x;
  /// |x - P_X[x - gamma F(x)]| at return.
  double residual = 0.0;
  long iterations = 0;
};

/// Nash equilibrium of a game with local constraints only, as the fixed
/// point of the projected pseudo-gradient map x -> P_X[x - gamma F(x)].
/// gamma must lie in (0, 2 mu / L^2) for the map to contract.
inline NeSolution solve_ne(const AggregativeGame& game, double gamma,
                           double tol = 1e-10, long max_iters = 1'000'000,
                           std::optional<Eigen::VectorXd> x0 = std::nullopt) {
  if (game.coupling_rows() > 0) {
    throw UnsupportedError("solve_ne: game has coupling constraints; use solve_vgne");
  }
  if (!(gamma > 0.0)) throw ConfigError("solve_ne: gamma must be positive");
  RaggedProfile x = x0 ? game.profile(*x0) : game.profile();
  std::vector<ProjectionWorkspace> ws(game.agents());
  NeSolution sol;
  double residual = std::numeric_limits<double>::infinity();
  for (long k = 0; k < max_iters; ++k) {
    const Eigen::VectorXd next = trades::reduced_step(game, x, 1.0, gamma, &ws);
    if (!next.allFinite()) {
      throw NoConvergenceError("solve_ne: iterate became non-finite; gamma too large?",
                               residual);
    }
    residual = (next - x.flat()).norm();
    x.flat() = next;
    sol.iterations = k + 1;
    if (residual <= tol) {
      // Confirm with a cold projection so the residual does not rely on the
      // warm-start state.
      const Eigen::VectorXd check = trades::reduced_step(game, x, 1.0, gamma);
      sol.residual = (check - x.flat()).norm();
      if (sol.residual <= tol) {
        sol.x = x.flat();
        return sol;
      }
    }
  }
  throw NoConvergenceError("solve_ne: no convergence after " +
                               std::to_string(max_iters) + " iterations",
                           residual);
}

/// First-order optimality measures of a primal-dual pair for the coupled
/// game.
struct KktReport {
  /// |F(x) + grad_x H(Ax - b, lambda)|
  double primal_res = 0.0;
  /// |grad_lambda H(Ax - b, lambda)|
  double dual_res = 0.0;
  /// |max(0, Ax - b)|_inf
  double cons_violation = 0.0;
  /// sum_l |lambda_l (Ax - b)_l|
  double complementarity = 0.0;

  bool certified(double tol) const {
    return primal_res <= tol && dual_res <= tol && cons_violation <= tol &&
           complementarity <= tol;
  }
  double worst() const {
    return std::max({primal_res, dual_res, cons_violation, complementarity});
  }
};

inline KktReport kkt_residual(const AggregativeGame& game,
                              const RaggedProfile& x,
                              const Eigen::VectorXd& lambda, double rho) {
  game.require_coupling("kkt_residual");
  const Eigen::VectorXd c = coupling_residual(game, x);
  const auto gh = trades_c::grad_h(c, lambda, rho);
  Eigen::VectorXd primal = pseudo_gradient(game, x);
  for (int i = 0; i < game.agents(); ++i) {
    primal.segment(x.offset(i), x.dim(i)) +=
        game.agent(i).coupling->A.transpose() * gh.d_a;
  }
  KktReport r;
  r.primal_res = primal.norm();
  r.dual_res = gh.d_lambda.norm();
  r.cons_violation = c.cwiseMax(0.0).lpNorm<Eigen::Infinity>();
  r.complementarity = lambda.cwiseProduct(c).cwiseAbs().sum();
  return r;
}

/// Smallest eigenvalue of A A^T; positive iff A has full row rank.
inline double coupling_rank_margin(const AggregativeGame& game) {
  const Eigen::MatrixXd A = game.coupling_matrix();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A * A.transpose(),
                                                     Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

struct VgneSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  KktReport report;
  long iterations = 0;
};

/// Variational GNE and its multiplier, as the fixed point of the centralized
/// augmented primal-dual iteration. Stops once every KKT residual is <= tol.
inline VgneSolution solve_vgne(const AggregativeGame& game, double delta,
                               double rho, double tol = 1e-8,
                               long max_iters = 2'000'000,
                               std::optional<Eigen::VectorXd> x0 = std::nullopt,
                               std::optional<Eigen::VectorXd> lambda0 = std::nullopt) {
  game.require_coupling("solve_vgne");
  if (game.has_local_constraints()) {
    throw UnsupportedError("solve_vgne: local feasible sets are not supported");
  }
  const Eigen::MatrixXd A = game.coupling_matrix();
  const double margin = coupling_rank_margin(game);
  if (!(margin > 1e-12 * std::max(1.0, (A * A.transpose()).norm()))) {
    throw AssumptionError("solve_vgne: coupling matrix is not of full row rank "
                          "(lambda_min(A A^T) = " + std::to_string(margin) + ")");
  }
  RaggedProfile x = x0 ? game.profile(*x0) : game.profile();
  Eigen::VectorXd lambda =
      lambda0 ? *lambda0 : Eigen::VectorXd::Zero(game.coupling_rows());
  std::deque<double> history;
  VgneSolution sol;
  for (long k = 0; k < max_iters; ++k) {
    auto next = trades_c::centralized_pd_step(game, x, lambda, delta, rho);
    if (!next.x.allFinite() || !next.lambda.allFinite()) {
      throw NoConvergenceError("solve_vgne: iterate became non-finite; delta too large?",
                               history.empty() ? kNaN : history.back());
    }
    x.flat() = std::move(next.x);
    lambda = std::move(next.lambda);
    if ((k + 1) % 16 == 0) {
      const KktReport rep = kkt_residual(game, x, lambda, rho);
      history.push_back(rep.worst());
      if (history.size() > 8) history.pop_front();
      if (rep.certified(tol)) {
        sol.x = x.flat();
        sol.lambda = lambda;
        sol.report = rep;
        sol.iterations = k + 1;
        return sol;
      }
    }
  }
  std::string hist;
  for (double h : history) hist += " " + std::to_string(h);
  throw NoConvergenceError("solve_vgne: KKT residual did not reach " +
                               std::to_string(tol) + "; recent residuals:" + hist,
                           history.empty() ? kNaN : history.back());
}

/// Linear-rate summary of an error sequence e_t.
struct RateFit {
  /// max over the window of e_{t+1} / e_t.
  double r = kNaN;
  /// Least-squares fit log e_t ~ intercept + slope * t over the window.
  double slope = kNaN;
  double intercept = kNaN;
  long t_start = 0;
  long t_end = 0;
  /// RMS of the log-linear fit residuals.
  double residual = kNaN;
  /// r < 1 and the decay has not slowed markedly across the window.
  bool q_linear = false;

  double fitted_ratio() const { return std::exp(slope); }
};

namespace detail {

inline double log_slope(const std::vector<double>& e, long from, long to) {
  if (to <= from) return kNaN;
  return (std::log(e[to]) - std::log(e[from])) / static_cast<double>(to - from);
}

}  // namespace detail

/// Fits a Q-linear rate to e_t after discarding the first burn_in entries.
/// The window ends just before the first entry <= floor (0 by default).
/// Both the max-ratio and the log-slope are reported.
inline RateFit fit_qlinear_rate(const std::vector<double>& e, long burn_in,
                                double floor = 0.0) {
  if (burn_in < 0) throw ConfigError("fit_qlinear_rate: burn_in must be nonnegative");
  RateFit fit;
  fit.t_start = burn_in;
  long end = static_cast<long>(e.size()) - 1;
  for (long t = burn_in; t < static_cast<long>(e.size()); ++t) {
    if (!(e[t] > floor)) {
      if (e[t] < 0.0) throw ConfigError("fit_qlinear_rate: error series must be positive");
      end = t - 1;
      break;
    }
  }
  fit.t_end = end;
  if (end - burn_in < 1) {
    throw ConfigError("fit_qlinear_rate: fewer than two usable points after burn-in");
  }
  double r = 0.0;
  for (long t = burn_in; t < end; ++t) r = std::max(r, e[t + 1] / e[t]);
  fit.r = r;

  const long n = end - burn_in + 1;
  double mean_t = 0.0, mean_y = 0.0;
  for (long t = burn_in; t <= end; ++t) {
    mean_t += static_cast<double>(t);
    mean_y += std::log(e[t]);
  }
  mean_t /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double stt = 0.0, sty = 0.0;
  for (long t = burn_in; t <= end; ++t) {
    const double dt = static_cast<double>(t) - mean_t;
    stt += dt * dt;
    sty += dt * (std::log(e[t]) - mean_y);
  }
  fit.slope = sty / stt;
  fit.intercept = mean_y - fit.slope * mean_t;
  double ss = 0.0;
  for (long t = burn_in; t <= end; ++t) {
    const double res = std::log(e[t]) - (fit.intercept + fit.slope * static_cast<double>(t));
    ss += res * res;
  }
  fit.residual = std::sqrt(ss / static_cast<double>(n));

  // A sublinear sequence such as 1/t has every ratio below one on a finite
  // window, but its log-rate keeps shrinking; require the second half of the
  // window to decay at least half as fast as the first.
  const long mid = burn_in + (end - burn_in) / 2;
  const double early = detail::log_slope(e, burn_in, mid);
  const double late = detail::log_slope(e, mid, end);
  const bool sustained = std::isnan(late) || std::isnan(early) ||
                         (early < 0.0 && late <= 0.5 * early);
  fit.q_linear = r < 1.0 && sustained;
  return fit;
}

/// Fast-subsystem energies at one iteration.
struct SpRecord {
  long iter = 0;
  /// sum_i |z_i + phi_i(x_i) - sigma(x)|^2, the squared distance of the
  /// aggregate trackers from their equilibrium manifold.
  double z_energy = 0.0;
  /// sum_i |y_i + N (A_i x_i - b_i) - (Ax - b)|^2 (coupled runs only).
  double y_energy = kNaN;
  /// |lambda - 1 lambda_bar|^2 (coupled runs only).
  double dual_consensus = kNaN;
};

inline std::vector<SpRecord> sp_diagnostics(const Trace& trace,
                                            const CommNetwork& net,
                                            const AggregativeGame& game) {
  if (trace.states.empty()) {
    throw UnsupportedError("sp_diagnostics: trace was recorded without full states");
  }
  if (net.agents() != game.agents()) {
    throw DimensionError("sp_diagnostics: network and game disagree on N");
  }
  const int N = game.agents();
  std::vector<SpRecord> out;
  out.reserve(trace.states.size());
  for (std::size_t k = 0; k < trace.states.size(); ++k) {
    const StateSnapshot& st = trace.states[k];
    const RaggedProfile x = game.profile(st.x);
    SpRecord rec;
    rec.iter = k < trace.records.size() ? trace.records[k].iter : static_cast<long>(k);
    const Eigen::VectorXd sig = sigma(game, x);
    for (int i = 0; i < N; ++i) {
      const Eigen::VectorXd e =
          st.z.row(i).transpose() + game.agent(i).phi(x.block(i)) - sig;
      rec.z_energy += e.squaredNorm();
    }
    if (st.y.size() > 0) {
      const Eigen::VectorXd c = coupling_residual(game, x);
      rec.y_energy = 0.0;
      for (int i = 0; i < N; ++i) {
        const auto& cb = *game.agent(i).coupling;
        const Eigen::VectorXd e = st.y.row(i).transpose() +
                                  static_cast<double>(N) * (cb.A * x.block(i) - cb.b) - c;
        rec.y_energy += e.squaredNorm();
      }
    }
    if (st.lambda.size() > 0) {
      const Eigen::RowVectorXd lbar = st.lambda.colwise().mean();
      rec.dual_consensus = (st.lambda.rowwise() - lbar).squaredNorm();
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace aggeq
