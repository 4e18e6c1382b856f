#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace aggeq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A vector or matrix does not have the size its role requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// The requested operation is not defined for this game or object.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A projection onto an intersection failed to reach a feasible point.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}

  /// Largest distance from the final Dykstra iterate to any component set.
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// A user-supplied gradient disagrees with finite differences of its cost.
class GradientMismatchError : public Error {
 public:
  using Error::Error;
};

/// A standing assumption (strong connectivity, full row rank, dual
/// safeguard, ...) is violated by the supplied data.
class AssumptionError : public Error {
 public:
  using Error::Error;
};

/// An iteration produced non-finite values.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, Eigen::VectorXd last_finite,
                  long iteration)
      : Error(what),
        last_finite_(std::move(last_finite)),
        iteration_(iteration) {}

  /// Flat strategy profile of the last iterate whose entries were all finite.
  const Eigen::VectorXd& last_finite() const { return last_finite_; }
  long iteration() const { return iteration_; }

 private:
  Eigen::VectorXd last_finite_;
  long iteration_;
};

/// A local multiplier dropped below zero, which can only happen when the
/// step size and penalty violate w_ii > delta / rho.
class SafeguardViolation : public Error {
 public:
  using Error::Error;
};

/// An oracle solver exhausted its iteration budget.
class NoConvergenceError : public Error {
 public:
  NoConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Malformed or out-of-range configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace aggeq
