#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "aggeq/families.hpp"
#include "aggeq/game.hpp"
#include "aggeq/projections.hpp"

namespace aggeq::testing {

inline Eigen::VectorXd uniform_vector(std::mt19937_64& rng, Eigen::Index n, double lo,
                                      double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Eigen::MatrixXd uniform_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                                      double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  }
  return m;
}

/// Closed-form Jacobian of the pseudo-gradient of a quadratic game:
/// dF_i/dx_j = C_i Phi_j / N + [i == j] (Q_i + Phi_i^T C_i^T / N).
inline Eigen::MatrixXd exact_jacobian(const std::vector<QuadraticAgentParams>& ps, int N) {
  int n = 0;
  for (const auto& p : ps) n += static_cast<int>(p.Q.rows());
  Eigen::MatrixXd J(n, n);
  const double inv = 1.0 / static_cast<double>(N);
  int r = 0;
  for (const auto& pi : ps) {
    int c = 0;
    for (const auto& pj : ps) {
      J.block(r, c, pi.Q.rows(), pj.Q.rows()) = inv * pi.C * pj.Phi;
      c += static_cast<int>(pj.Q.rows());
    }
    J.block(r, r, pi.Q.rows(), pi.Q.rows()) +=
        0.5 * (pi.Q + pi.Q.transpose()) + inv * pi.Phi.transpose() * pi.C.transpose();
    r += static_cast<int>(pi.Q.rows());
  }
  return J;
}

/// Random strongly monotone quadratic aggregative game with box sets.
struct QuadraticInstance {
  AggregativeGame game;
  Eigen::VectorXd x0;
  /// Exact constants of the affine pseudo-gradient.
  double mu = 0.0;
  double lipschitz = 0.0;
};

inline QuadraticInstance random_quadratic_game(std::uint64_t seed, int N, int n_max, int d,
                                               bool boxes = true) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim_dist(1, n_max);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<AgentSpec> agents;
    std::vector<int> dims;
    std::vector<QuadraticAgentParams> params;
    for (int i = 0; i < N; ++i) {
      const int n = dim_dist(rng);
      dims.push_back(n);
      QuadraticAgentParams p;
      const Eigen::MatrixXd M = uniform_matrix(rng, n, n, -1.0, 1.0);
      p.Q = M * M.transpose() + Eigen::MatrixXd::Identity(n, n);
      p.C = uniform_matrix(rng, n, d, -0.3, 0.3);
      p.q = uniform_vector(rng, n, -2.0, 2.0);
      p.Phi = uniform_matrix(rng, d, n, -1.0, 1.0);
      params.push_back(p);
      AgentSpec a = quadratic_agent(p);
      if (boxes) {
        const Eigen::VectorXd lo = uniform_vector(rng, n, -1.5, -0.2);
        const Eigen::VectorXd hi = uniform_vector(rng, n, 0.2, 1.5);
        a.local_set = Box{lo, hi};
      }
      agents.push_back(std::move(a));
    }
    AggregativeGame game(std::move(agents), d);
    const MonotonicityEstimate est = linear_monotonicity(exact_jacobian(params, N));
    if (est.mu > 0.05) {
      Eigen::VectorXd x0 = uniform_vector(rng, game.total_dim(), -1.0, 1.0);
      return {std::move(game), std::move(x0), est.mu, est.lipschitz};
    }
  }
  throw Error("random_quadratic_game: no monotone draw");
}

/// { y : E y = e, G y <= h }.
struct Polyhedron {
  Eigen::MatrixXd E;
  Eigen::VectorXd e;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
};

/// Exact Euclidean projection onto a small polyhedron by enumerating active
/// sets in order of size and returning the first KKT point. Returns nullopt
/// when no active set certifies, which for a nonempty polyhedron only happens
/// under degeneracy beyond the tolerances.
inline std::optional<Eigen::VectorXd> qp_project(const Polyhedron& P, const Eigen::VectorXd& x,
                                                 double tol = 1e-9) {
  const auto n = x.size();
  const auto me = P.E.rows();
  const auto mi = P.G.rows();
  std::vector<int> active;
  std::optional<Eigen::VectorXd> found;

  auto try_set = [&]() -> bool {
    const auto k = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd M(me + k, n);
    Eigen::VectorXd r(me + k);
    if (me > 0) {
      M.topRows(me) = P.E;
      r.head(me) = P.e;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      M.row(me + j) = P.G.row(active[j]);
      r(me + j) = P.h(active[j]);
    }
    Eigen::VectorXd y = x;
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(me + k);
    if (me + k > 0) {
      const Eigen::MatrixXd MMt = M * M.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(MMt);
      if (lu.rank() < me + k) return false;
      nu = lu.solve(M * x - r);
      y = x - M.transpose() * nu;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (nu(me + j) < -tol) return false;
    }
    for (Eigen::Index j = 0; j < mi; ++j) {
      if (P.G.row(j).dot(y) > P.h(j) + tol * (1.0 + std::abs(P.h(j)))) return false;
    }
    if (me > 0 && (P.E * y - P.e).lpNorm<Eigen::Infinity>() > 1e-8) return false;
    found = y;
    return true;
  };

  std::function<bool(int, int)> rec = [&](int start, int remaining) -> bool {
    if (remaining == 0) return try_set();
    for (int j = start; j < static_cast<int>(mi); ++j) {
      active.push_back(j);
      if (rec(j + 1, remaining - 1)) return true;
      active.pop_back();
    }
    return false;
  };
  const int max_k = static_cast<int>(std::min<Eigen::Index>(mi, n - std::min<Eigen::Index>(me, n)));
  for (int size = 0; size <= max_k; ++size) {
    active.clear();
    if (rec(0, size)) return found;
  }
  return std::nullopt;
}

struct RandomPolyInstance {
  Polyhedron P;
  ProjectionOperator op;
};

/// Random polyhedron with a known interior point, expressed both as plain
/// matrices and as an Intersection of elementary sets.
inline RandomPolyInstance random_polyhedron(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> count(0, 3);
  const Eigen::VectorXd y0 = uniform_vector(rng, n, -1, 1);
  const int n_half = count(rng);
  const int n_eq = std::min(count(rng) % 3, n - 1);
  RandomPolyInstance out;
  Intersection s;
  const Eigen::VectorXd lo = y0 - uniform_vector(rng, n, 0.1, 1.0);
  const Eigen::VectorXd hi = y0 + uniform_vector(rng, n, 0.1, 1.0);
  s.sets.emplace_back(Box{lo, hi});
  out.P.G.resize(2 * n + n_half, n);
  out.P.h.resize(2 * n + n_half);
  out.P.G.topRows(n) = Eigen::MatrixXd::Identity(n, n);
  out.P.G.middleRows(n, n) = -Eigen::MatrixXd::Identity(n, n);
  out.P.h.head(n) = hi;
  out.P.h.segment(n, n) = -lo;
  for (int k = 0; k < n_half; ++k) {
    const Eigen::VectorXd a = uniform_vector(rng, n, -1, 1);
    const double beta = a.dot(y0) + std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    s.sets.emplace_back(Halfspace{a, beta});
    out.P.G.row(2 * n + k) = a.transpose();
    out.P.h(2 * n + k) = beta;
  }
  out.P.E.resize(n_eq, n);
  out.P.e.resize(n_eq);
  if (n_eq > 0) {
    const Eigen::MatrixXd C = uniform_matrix(rng, n_eq, n, -1, 1);
    s.sets.emplace_back(make_affine_equality(C, C * y0));
    out.P.E = C;
    out.P.e = C * y0;
  }
  s.params = {1e-12, 200000, 1e-6};
  out.op = ProjectionOperator(std::move(s));
  return out;
}

/// Polyhedral description of a demand-response feasible set, built by
/// simulating the load dynamics on unit inputs.
inline Polyhedron demand_response_polyhedron(const DemandResponseLoad& p) {
  const int T = p.horizon;
  Eigen::MatrixXd coeff(T, T);
  Eigen::VectorXd free_response(T);
  auto simulate = [&](const Eigen::VectorXd& u, double s1) {
    Eigen::VectorXd states(T);
    double s = s1;
    for (int tau = 0; tau < T; ++tau) {
      s = p.a * s + p.b * u(tau);
      states(tau) = s;
    }
    return states;
  };
  free_response = simulate(Eigen::VectorXd::Zero(T), p.s1);
  for (int j = 0; j < T; ++j) {
    coeff.col(j) = simulate(Eigen::VectorXd::Unit(T, j), 0.0);
  }
  Polyhedron P;
  P.E = Eigen::MatrixXd::Ones(1, T);
  P.e = Eigen::VectorXd::Constant(1, p.total);
  P.G.resize(4 * T, T);
  P.h.resize(4 * T);
  P.G << Eigen::MatrixXd::Identity(T, T), -Eigen::MatrixXd::Identity(T, T), coeff, -coeff;
  P.h << Eigen::VectorXd::Constant(T, p.u_hi), Eigen::VectorXd::Constant(T, -p.u_lo),
      Eigen::VectorXd::Constant(T, p.s_hi) - free_response,
      free_response - Eigen::VectorXd::Constant(T, p.s_lo);
  return P;
}

/// Orthonormal basis of the complement of span(1) in R^N, via QR.
inline Eigen::MatrixXd consensus_complement_basis(int N) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(N, N);
  M.col(0).setOnes();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(N, N);
  return Q.rightCols(N - 1);
}

}  // namespace aggeq::testing
