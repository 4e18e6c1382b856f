#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "aggeq/errors.hpp"
#include "aggeq/projections.hpp"
#include "aggeq/ragged.hpp"

namespace aggeq {

using CostFn = std::function<double(const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& s)>;
using VecFn2 = std::function<Eigen::VectorXd(const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& s)>;
using VecFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x)>;
using MatFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& x)>;

/// Agent i's share of the affine coupling constraint sum_i (A_i x_i - b_i) <= 0.
struct CouplingBlock {
  Eigen::MatrixXd A;  // m x n_i
  Eigen::VectorXd b;  // m
};

/// One player: cost J_i(x_i, s) in terms of its strategy and the aggregate,
/// its aggregation rule phi_i, and optional constraints.
struct AgentSpec {
  int dim = 0;
  CostFn cost;
  /// Gradient of J_i in its first argument (R^{n_i}).
  VecFn2 grad1;
  /// Gradient of J_i in the aggregate argument (R^d).
  VecFn2 grad2;
  VecFn phi;
  /// n_i x d matrix whose columns are the gradients of the components of phi_i.
  MatFn phi_jacobian;
  ProjectionOperator local_set;
  std::optional<CouplingBlock> coupling;
};

/// Finite-difference self-check run on every agent when a game is built.
struct GradientCheck {
  int probes = 8;
  double step = 1e-6;
  double rel_tol = 1e-5;
  /// Probe points are drawn uniformly from [-radius, radius] per coordinate.
  double radius = 1.0;
  std::uint64_t seed = 0x5eed;
  bool enabled = true;
};

namespace detail {

inline Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& at, double step) {
  Eigen::VectorXd g(at.size());
  Eigen::VectorXd probe = at;
  for (Eigen::Index k = 0; k < at.size(); ++k) {
    const double h = step * std::max(1.0, std::abs(at(k)));
    probe(k) = at(k) + h;
    const double up = f(probe);
    probe(k) = at(k) - h;
    const double down = f(probe);
    probe(k) = at(k);
    g(k) = (up - down) / (2.0 * h);
  }
  return g;
}

inline bool close(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd,
                  double rel_tol) {
  const double scale = std::max(1.0, fd.lpNorm<Eigen::Infinity>());
  return (analytic - fd).lpNorm<Eigen::Infinity>() <= rel_tol * scale;
}

}  // namespace detail

/// Compares an agent's analytic derivatives against central differences at
/// random probes. Throws GradientMismatchError naming the failing piece.
inline void check_agent_gradients(const AgentSpec& agent, int agg_dim,
                                  const GradientCheck& opts,
                                  const std::string& label = "agent") {
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-opts.radius, opts.radius);
  Eigen::VectorXd x(agent.dim);
  Eigen::VectorXd s(agg_dim);
  for (int p = 0; p < opts.probes; ++p) {
    for (auto& v : x) v = unit(rng);
    for (auto& v : s) v = unit(rng);

    const auto fd1 = detail::central_difference(
        [&](const Eigen::VectorXd& xp) { return agent.cost(xp, s); }, x,
        opts.step);
    if (!detail::close(agent.grad1(x, s), fd1, opts.rel_tol)) {
      throw GradientMismatchError(label +
                                  ": grad1 disagrees with finite differences");
    }
    const auto fd2 = detail::central_difference(
        [&](const Eigen::VectorXd& sp) { return agent.cost(x, sp); }, s,
        opts.step);
    if (!detail::close(agent.grad2(x, s), fd2, opts.rel_tol)) {
      throw GradientMismatchError(label +
                                  ": grad2 disagrees with finite differences");
    }
    const Eigen::MatrixXd jac = agent.phi_jacobian(x);
    for (int k = 0; k < agg_dim; ++k) {
      const auto fdk = detail::central_difference(
          [&](const Eigen::VectorXd& xp) { return agent.phi(xp)(k); }, x,
          opts.step);
      if (!detail::close(jac.col(k), fdk, opts.rel_tol)) {
        throw GradientMismatchError(
            label + ": phi_jacobian disagrees with finite differences");
      }
    }
  }
}

/// N agents sharing an aggregate of dimension d and, optionally, m affine
/// coupling rows. Immutable once constructed.
class AggregativeGame {
 public:
  AggregativeGame(std::vector<AgentSpec> agents, int agg_dim,
                  int coupling_rows = 0, const GradientCheck& check = {})
      : agents_(std::move(agents)), agg_dim_(agg_dim), m_(coupling_rows) {
    if (agents_.empty()) throw DimensionError("game needs at least one agent");
    if (agg_dim_ <= 0) throw DimensionError("aggregate dimension must be positive");
    if (m_ < 0) throw DimensionError("coupling row count must be nonnegative");
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      validate_agent(static_cast<int>(i), check);
      dims_.push_back(agents_[i].dim);
    }
  }

  int agents() const { return static_cast<int>(agents_.size()); }
  int agg_dim() const { return agg_dim_; }
  int coupling_rows() const { return m_; }
  const AgentSpec& agent(int i) const { return agents_[i]; }
  const std::vector<int>& dims() const { return dims_; }
  int total_dim() const {
    int n = 0;
    for (int d : dims_) n += d;
    return n;
  }

  bool has_local_constraints() const {
    for (const auto& a : agents_) {
      if (!a.local_set.is_free()) return true;
    }
    return false;
  }

  RaggedProfile profile() const { return RaggedProfile(dims_); }
  RaggedProfile profile(const Eigen::VectorXd& flat) const {
    return RaggedProfile(dims_, flat);
  }

  /// Stacked coupling matrix A = [A_1 ... A_N] and b = sum_i b_i.
  Eigen::MatrixXd coupling_matrix() const {
    require_coupling("coupling_matrix");
    Eigen::MatrixXd A(m_, total_dim());
    int off = 0;
    for (const auto& a : agents_) {
      A.middleCols(off, a.dim) = a.coupling->A;
      off += a.dim;
    }
    return A;
  }

  Eigen::VectorXd coupling_rhs() const {
    require_coupling("coupling_rhs");
    std::vector<Eigen::VectorXd> parts;
    for (const auto& a : agents_) parts.push_back(a.coupling->b);
    return compensated_sum(parts, m_);
  }

  void require_coupling(const char* op) const {
    if (m_ == 0) {
      throw UnsupportedError(std::string(op) +
                             ": game has no coupling constraints");
    }
  }

  void check_profile(const RaggedProfile& x) const {
    if (x.agents() != agents()) {
      throw DimensionError("profile has " + std::to_string(x.agents()) +
                           " blocks, game has " + std::to_string(agents()) +
                           " agents");
    }
    for (int i = 0; i < agents(); ++i) {
      if (x.dim(i) != dims_[i]) {
        throw DimensionError("agent " + std::to_string(i) + ": block has " +
                             std::to_string(x.dim(i)) + " entries, expected " +
                             std::to_string(dims_[i]));
      }
    }
  }

 private:
  void validate_agent(int i, const GradientCheck& check) {
    const AgentSpec& a = agents_[i];
    const std::string label = "agent " + std::to_string(i);
    if (a.dim <= 0) throw DimensionError(label + ": dimension must be positive");
    if (!a.cost || !a.grad1 || !a.grad2 || !a.phi || !a.phi_jacobian) {
      throw ConfigError(label + ": cost, gradients and aggregation rule are required");
    }
    const int set_dim = a.local_set.dim();
    if (set_dim >= 0 && set_dim != a.dim) {
      throw DimensionError(label + ": local set lives in R^" +
                           std::to_string(set_dim));
    }
    if (m_ > 0) {
      if (!a.coupling) {
        throw ConfigError(label + ": game has coupling rows but agent has no (A_i, b_i)");
      }
      if (a.coupling->A.rows() != m_ || a.coupling->A.cols() != a.dim ||
          a.coupling->b.size() != m_) {
        throw DimensionError(label + ": coupling block must be " +
                             std::to_string(m_) + " x " + std::to_string(a.dim));
      }
    }
    const Eigen::VectorXd probe = Eigen::VectorXd::Zero(a.dim);
    if (a.phi(probe).size() != agg_dim_) {
      throw DimensionError(label + ": phi must map into R^" +
                           std::to_string(agg_dim_));
    }
    if (check.enabled) check_agent_gradients(a, agg_dim_, check, label);
  }

  std::vector<AgentSpec> agents_;
  int agg_dim_;
  int m_;
  std::vector<int> dims_;
};

/// sigma(x) = (1/N) sum_i phi_i(x_i).
inline Eigen::VectorXd sigma(const AggregativeGame& game,
                             const RaggedProfile& x) {
  game.check_profile(x);
  std::vector<Eigen::VectorXd> parts;
  parts.reserve(game.agents());
  for (int i = 0; i < game.agents(); ++i) {
    parts.push_back(game.agent(i).phi(x.block(i)));
  }
  return compensated_sum(parts, game.agg_dim()) / game.agents();
}

/// grad_1 J_i(x_i, s) + (grad phi_i(x_i) / N) grad_2 J_i(x_i, s): agent i's
/// partial gradient with its own estimate s standing in for sigma(x).
inline Eigen::VectorXd f_tilde(const AggregativeGame& game, int i,
                               const Eigen::VectorXd& x_i,
                               const Eigen::VectorXd& s) {
  const AgentSpec& a = game.agent(i);
  return a.grad1(x_i, s) +
         (a.phi_jacobian(x_i) * a.grad2(x_i, s)) / game.agents();
}

/// Pseudo-gradient F(x), block i = f_tilde(i, x_i, sigma(x)).
inline Eigen::VectorXd pseudo_gradient(const AggregativeGame& game,
                                       const RaggedProfile& x) {
  const Eigen::VectorXd s = sigma(game, x);
  Eigen::VectorXd out(x.size());
  for (int i = 0; i < game.agents(); ++i) {
    out.segment(x.offset(i), x.dim(i)) = f_tilde(game, i, x.block(i), s);
  }
  return out;
}

/// c(x) = sum_i (A_i x_i - b_i).
inline Eigen::VectorXd coupling_residual(const AggregativeGame& game,
                                         const RaggedProfile& x) {
  game.require_coupling("coupling_residual");
  game.check_profile(x);
  std::vector<Eigen::VectorXd> parts;
  for (int i = 0; i < game.agents(); ++i) {
    const auto& c = *game.agent(i).coupling;
    parts.push_back(c.A * x.block(i) - c.b);
  }
  return compensated_sum(parts, game.coupling_rows());
}

struct MonotonicityEstimate {
  /// Smallest sampled (F(x)-F(y))^T(x-y)/|x-y|^2. Upper bound on the true mu.
  double mu = 0.0;
  /// Largest sampled |F(x)-F(y)|/|x-y|. Lower bound on the true Lipschitz
  /// constant.
  double lipschitz = 0.0;
  bool monotone() const { return mu > 0.0; }
  /// Step bound 2 mu / L^2 of the forward map (0 when not monotone).
  double gamma_bound() const {
    return monotone() && lipschitz > 0.0 ? 2.0 * mu / (lipschitz * lipschitz)
                                         : 0.0;
  }
};

/// Contraction modulus 1 - mu_bar = sqrt(1 - gamma (2 mu - gamma L^2)) of
/// x -> x - gamma F(x) for a mu-strongly monotone, L-Lipschitz F. Requires
/// gamma in (0, 2 mu / L^2).
inline double forward_step_modulus(double mu, double lipschitz, double gamma) {
  const double gap = gamma * (2.0 * mu - gamma * lipschitz * lipschitz);
  if (!(gamma > 0.0) || !(gap > 0.0)) {
    throw ConfigError("forward_step_modulus: gamma must lie in (0, 2 mu / L^2)");
  }
  return std::sqrt(std::max(0.0, 1.0 - gap));
}

/// Sampling-based advisory estimate of the strong-monotonicity modulus and
/// Lipschitz constant of F over the box [lo, hi]. Never a certificate.
inline MonotonicityEstimate estimate_monotonicity(const AggregativeGame& game,
                                                  int sample_count,
                                                  const Eigen::VectorXd& lo,
                                                  const Eigen::VectorXd& hi,
                                                  std::uint64_t seed = 1) {
  const int n = game.total_dim();
  if (sample_count < 2) throw ConfigError("estimate_monotonicity needs at least 2 samples");
  if (lo.size() != n || hi.size() != n) {
    throw DimensionError("sampling box must live in R^" + std::to_string(n));
  }
  if (!((hi - lo).array() > 0.0).all()) {
    throw ConfigError("estimate_monotonicity: sampling region has zero volume");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&] {
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v(k) = lo(k) + (hi(k) - lo(k)) * unit(rng);
    return game.profile(v);
  };
  MonotonicityEstimate est;
  est.mu = std::numeric_limits<double>::infinity();
  for (int p = 0; p < sample_count; ++p) {
    const RaggedProfile x = draw();
    const RaggedProfile y = draw();
    const Eigen::VectorXd dx = x.flat() - y.flat();
    const double dist2 = dx.squaredNorm();
    if (dist2 == 0.0) continue;
    const Eigen::VectorXd dF = pseudo_gradient(game, x) - pseudo_gradient(game, y);
    est.mu = std::min(est.mu, dF.dot(dx) / dist2);
    est.lipschitz = std::max(est.lipschitz, dF.norm() / std::sqrt(dist2));
  }
  return est;
}

/// Central-difference Jacobian of F at x. Exact up to rounding for the
/// affine pseudo-gradients of the built-in families.
inline Eigen::MatrixXd pseudo_gradient_jacobian(const AggregativeGame& game,
                                                const RaggedProfile& x,
                                                double step = 1e-4) {
  const int n = x.size();
  Eigen::MatrixXd J(n, n);
  RaggedProfile probe = x;
  for (int k = 0; k < n; ++k) {
    const double h = step * std::max(1.0, std::abs(x.flat()(k)));
    probe.flat()(k) = x.flat()(k) + h;
    const Eigen::VectorXd up = pseudo_gradient(game, probe);
    probe.flat()(k) = x.flat()(k) - h;
    const Eigen::VectorXd down = pseudo_gradient(game, probe);
    probe.flat()(k) = x.flat()(k);
    J.col(k) = (up - down) / (2.0 * h);
  }
  return J;
}

/// mu = lambda_min of the symmetric part of J and L = |J|_2; for an affine F
/// with Jacobian J these are the exact strong-monotonicity and Lipschitz
/// constants.
inline MonotonicityEstimate linear_monotonicity(const Eigen::MatrixXd& J) {
  const Eigen::MatrixXd sym = 0.5 * (J + J.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
  return {eig.eigenvalues().minCoeff(), svd.singularValues()(0)};
}

}  // namespace aggeq
