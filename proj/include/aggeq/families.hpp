#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "aggeq/game.hpp"

namespace aggeq {

/// J_i(x_i, s) = 1/2 x_i^T Q x_i + x_i^T C s + q^T x_i with the linear
/// aggregation phi_i(x_i) = Phi x_i.
struct QuadraticAgentParams {
  Eigen::MatrixXd Q;    // n_i x n_i
  Eigen::MatrixXd C;    // n_i x d
  Eigen::VectorXd q;    // n_i
  Eigen::MatrixXd Phi;  // d x n_i
};

inline AgentSpec quadratic_agent(const QuadraticAgentParams& p) {
  const auto n = p.Q.rows();
  if (p.Q.cols() != n || p.C.rows() != n || p.q.size() != n ||
      p.Phi.cols() != n || p.Phi.rows() != p.C.cols()) {
    throw DimensionError("quadratic agent: inconsistent parameter shapes");
  }
  const Eigen::MatrixXd Qs = 0.5 * (p.Q + p.Q.transpose());
  AgentSpec a;
  a.dim = static_cast<int>(n);
  a.cost = [Qs, C = p.C, q = p.q](const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& s) {
    return 0.5 * x.dot(Qs * x) + x.dot(C * s) + q.dot(x);
  };
  a.grad1 = [Qs, C = p.C, q = p.q](const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& s) {
    return Eigen::VectorXd(Qs * x + C * s + q);
  };
  a.grad2 = [C = p.C](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return Eigen::VectorXd(C.transpose() * x);
  };
  a.phi = [Phi = p.Phi](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(Phi * x);
  };
  a.phi_jacobian = [Phi = p.Phi](const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Phi.transpose());
  };
  return a;
}

/// J_i(x_i, s) = rho_i |x_i - u_hat_i|^2 + (lambda s + p0)^T x_i with
/// phi_i = identity: energy cost under a price affine in the mean demand.
struct DemandResponseCost {
  double rho = 1.0;
  Eigen::VectorXd u_hat;
  double price_slope = 1.0;  // lambda
  Eigen::VectorXd p0;
};

inline AgentSpec demand_response_agent(const DemandResponseCost& c) {
  const auto T = c.u_hat.size();
  if (c.p0.size() != T) throw DimensionError("demand response: p0 must match horizon");
  AgentSpec a;
  a.dim = static_cast<int>(T);
  a.cost = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
    return c.rho * (x - c.u_hat).squaredNorm() +
           (c.price_slope * s + c.p0).dot(x);
  };
  a.grad1 = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
    return Eigen::VectorXd(2.0 * c.rho * (x - c.u_hat) + c.price_slope * s +
                           c.p0);
  };
  a.grad2 = [lam = c.price_slope](const Eigen::VectorXd& x,
                                  const Eigen::VectorXd&) {
    return Eigen::VectorXd(lam * x);
  };
  a.phi = [](const Eigen::VectorXd& x) { return x; };
  a.phi_jacobian = [](const Eigen::VectorXd& x) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(x.size(), x.size()));
  };
  return a;
}

/// J_i(x_i, s) = 1/2 |x_i - p_i|^2 + (w/2) |x_i - s|^2 with phi_i = identity.
/// The deviation term is squared so that J_i is continuously differentiable.
struct DeviationTrackingCost {
  Eigen::VectorXd target;  // p_i
  double weight = 0.5;     // w
};

inline AgentSpec deviation_tracking_agent(const DeviationTrackingCost& c) {
  AgentSpec a;
  a.dim = static_cast<int>(c.target.size());
  a.cost = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
    return 0.5 * (x - c.target).squaredNorm() +
           0.5 * c.weight * (x - s).squaredNorm();
  };
  a.grad1 = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
    return Eigen::VectorXd((x - c.target) + c.weight * (x - s));
  };
  a.grad2 = [w = c.weight](const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
    return Eigen::VectorXd(-w * (x - s));
  };
  a.phi = [](const Eigen::VectorXd& x) { return x; };
  a.phi_jacobian = [](const Eigen::VectorXd& x) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(x.size(), x.size()));
  };
  return a;
}

}  // namespace aggeq
