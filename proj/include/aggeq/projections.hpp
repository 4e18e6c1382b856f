#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "aggeq/errors.hpp"

namespace aggeq {

class ProjectionOperator;

/// Stopping rule for Dykstra's alternating projections.
struct DykstraParams {
  /// Sweep stops once the Euclidean change of the iterate over one full
  /// sweep drops below this value.
  double tol = 1e-10;
  int max_sweeps = 10'000;
  /// Final iterate must lie within feas_tol * (1 + |y|_inf) of every set.
  double feas_tol = 1e-6;
};

struct Box {
  Eigen::VectorXd lo, hi;
};

/// { y : a^T y <= beta }
struct Halfspace {
  Eigen::VectorXd a;
  double beta = 0.0;
};

/// { y : C y = e }, with C of full row rank.
struct AffineEquality {
  Eigen::MatrixXd C;
  Eigen::VectorXd e;
  /// C^T (C C^T)^{-1}, filled by make_affine_equality.
  Eigen::MatrixXd C_pinv;
};

/// { y : lo <= a^T y <= hi }
struct Slab {
  Eigen::VectorXd a;
  double lo = 0.0;
  double hi = 0.0;
};

/// { y : lo <= y <= hi, 1^T y = total }, projected exactly by a search over
/// the breakpoints of the shift theta in clamp(x - theta, lo, hi).
struct CappedSum {
  Eigen::VectorXd lo, hi;
  double total = 0.0;
};

struct Ball {
  Eigen::VectorXd center;
  double radius = 1.0;
};

struct NonnegativeOrthant {};

struct Free {};

struct Intersection {
  std::vector<ProjectionOperator> sets;
  DykstraParams params;
};

/// Dykstra correction terms kept between calls. Dykstra's iteration is block
/// coordinate descent on the dual of the projection problem, so it converges
/// to the exact projection from any stored set of corrections; reusing the
/// previous call's corrections cuts the sweep count when successive inputs
/// are close. Owned by the caller, one per projected block.
struct ProjectionWorkspace {
  Eigen::MatrixXd increments;
  int last_sweeps = 0;
};

inline AffineEquality make_affine_equality(Eigen::MatrixXd C,
                                           Eigen::VectorXd e) {
  if (C.rows() != e.size()) {
    throw DimensionError("affine equality: C has " + std::to_string(C.rows()) +
                         " rows but e has " + std::to_string(e.size()));
  }
  const Eigen::MatrixXd gram = C * C.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, gram.norm())) {
    throw AssumptionError("affine equality: C must have full row rank");
  }
  AffineEquality out{std::move(C), std::move(e), {}};
  out.C_pinv = ldlt.solve(out.C).transpose();
  return out;
}

inline CappedSum make_capped_sum(Eigen::VectorXd lo, Eigen::VectorXd hi, double total) {
  if (lo.size() != hi.size()) throw DimensionError("capped sum: lo and hi differ in length");
  if ((lo.array() > hi.array()).any()) {
    throw InfeasibleError("capped sum: lo exceeds hi", (lo - hi).maxCoeff());
  }
  const double slack = 1e-12 * (1.0 + std::abs(total));
  if (total < lo.sum() - slack || total > hi.sum() + slack) {
    throw InfeasibleError("capped sum: total " + std::to_string(total) +
                              " is outside [" + std::to_string(lo.sum()) + ", " +
                              std::to_string(hi.sum()) + "]",
                          std::max(lo.sum() - total, total - hi.sum()));
  }
  return CappedSum{std::move(lo), std::move(hi), total};
}

/// Euclidean projector onto a closed convex set.
class ProjectionOperator {
 public:
  using Variant = std::variant<Free, Box, Halfspace, Slab, CappedSum,
                               AffineEquality, Ball, NonnegativeOrthant,
                               Intersection>;

  ProjectionOperator() : set_(Free{}) {}
  ProjectionOperator(Free s) : set_(std::move(s)) {}
  ProjectionOperator(Box s) : set_(std::move(s)) {}
  ProjectionOperator(Halfspace s) : set_(std::move(s)) {}
  ProjectionOperator(AffineEquality s) : set_(std::move(s)) {}
  ProjectionOperator(Slab s) : set_(std::move(s)) {}
  ProjectionOperator(CappedSum s) : set_(std::move(s)) {}
  ProjectionOperator(Ball s) : set_(std::move(s)) {}
  ProjectionOperator(NonnegativeOrthant s) : set_(std::move(s)) {}
  ProjectionOperator(Intersection s) : set_(std::move(s)) {}

  const Variant& set() const { return set_; }

  bool is_free() const { return std::holds_alternative<Free>(set_); }

  /// Dimension the set lives in, or -1 for dimension-agnostic sets.
  int dim() const {
    return std::visit(
        [](const auto& s) -> int {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) {
            return static_cast<int>(s.lo.size());
          } else if constexpr (std::is_same_v<T, Halfspace> ||
                               std::is_same_v<T, Slab>) {
            return static_cast<int>(s.a.size());
          } else if constexpr (std::is_same_v<T, CappedSum>) {
            return static_cast<int>(s.lo.size());
          } else if constexpr (std::is_same_v<T, AffineEquality>) {
            return static_cast<int>(s.C.cols());
          } else if constexpr (std::is_same_v<T, Ball>) {
            return static_cast<int>(s.center.size());
          } else if constexpr (std::is_same_v<T, Intersection>) {
            for (const auto& op : s.sets) {
              if (op.dim() >= 0) return op.dim();
            }
            return -1;
          } else {
            return -1;
          }
        },
        set_);
  }

  /// argmin_{y in X} |y - x|.
  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    check_dim(x);
    Eigen::VectorXd y = x;
    std::visit([&](const auto& s) { apply(s, y); }, set_);
    return y;
  }

  /// Same result as project(x) up to the Dykstra tolerance; intersections
  /// start from the corrections stored in `ws` and leave theirs behind.
  Eigen::VectorXd project(const Eigen::VectorXd& x,
                          ProjectionWorkspace& ws) const {
    check_dim(x);
    Eigen::VectorXd y = x;
    if (const auto* s = std::get_if<Intersection>(&set_)) {
      dykstra(*s, y, &ws);
    } else {
      std::visit([&](const auto& s) { apply(s, y); }, set_);
    }
    return y;
  }

  /// Projects y onto the set, overwriting it. Skips the dimension check.
  void project_in_place(Eigen::Ref<Eigen::VectorXd> y) const {
    std::visit([&](const auto& s) { apply(s, y); }, set_);
  }

  /// Euclidean distance from x to the set.
  double distance(const Eigen::VectorXd& x) const {
    return (project(x) - x).norm();
  }

 private:
  void check_dim(const Eigen::VectorXd& x) const {
    const int d = dim();
    if (d >= 0 && d != x.size()) {
      throw DimensionError("projection: set lives in R^" + std::to_string(d) +
                           ", point has " + std::to_string(x.size()) +
                           " entries");
    }
  }

  using Out = Eigen::Ref<Eigen::VectorXd>;

  static void apply(const Free&, Out) {}

  static void apply(const Box& s, Out y) { y = y.cwiseMax(s.lo).cwiseMin(s.hi); }

  static void apply(const Halfspace& s, Out y) {
    const double excess = s.a.dot(y) - s.beta;
    if (excess > 0.0) y -= (excess / s.a.squaredNorm()) * s.a;
  }

  static void apply(const Slab& s, Out y) {
    const double n2 = s.a.squaredNorm();
    if (n2 == 0.0) return;
    const double v = s.a.dot(y);
    if (v > s.hi) {
      y -= ((v - s.hi) / n2) * s.a;
    } else if (v < s.lo) {
      y += ((s.lo - v) / n2) * s.a;
    }
  }

  static void apply(const CappedSum& s, Out y) {
    const Eigen::Index n = y.size();
    if (n == 0) return;
    auto total_at = [&](double theta) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        acc += std::clamp(y(k) - theta, s.lo(k), s.hi(k));
      }
      return acc;
    };
    // The clamped sum is piecewise linear and nonincreasing in theta with
    // kinks at y_k - hi_k and y_k - lo_k; find the piece that hits total.
    std::vector<double> kinks;
    kinks.reserve(2 * static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
      kinks.push_back(y(k) - s.hi(k));
      kinks.push_back(y(k) - s.lo(k));
    }
    std::sort(kinks.begin(), kinks.end());
    std::size_t lo = 0;
    std::size_t hi = kinks.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (total_at(kinks[mid]) >= s.total) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double g_lo = total_at(kinks[lo]);
    const double g_hi = total_at(kinks[hi]);
    double theta = kinks[lo];
    if (g_lo > g_hi) {
      theta += (g_lo - s.total) / (g_lo - g_hi) * (kinks[hi] - kinks[lo]);
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      y(k) = std::clamp(y(k) - theta, s.lo(k), s.hi(k));
    }
  }

  static void apply(const AffineEquality& s, Out y) {
    y -= s.C_pinv * (s.C * y - s.e);
  }

  static void apply(const Ball& s, Out y) {
    const double r = (y - s.center).norm();
    if (r > s.radius) y = s.center + (s.radius / r) * (y - s.center);
  }

  static void apply(const NonnegativeOrthant&, Out y) { y = y.cwiseMax(0.0); }

  static void apply(const Intersection& s, Out y) { dykstra(s, y, nullptr); }

  static void dykstra(const Intersection& s, Out y, ProjectionWorkspace* ws);

  Variant set_;
};

/// Dykstra's algorithm. Unlike plain alternating projections it converges to
/// the projection of x onto the intersection, not just to some feasible point.
inline void ProjectionOperator::dykstra(const Intersection& s, Out y,
                                        ProjectionWorkspace* ws) {
  if (s.sets.empty()) return;
  if (s.sets.size() == 1) {
    s.sets.front().project_in_place(y);
    return;
  }

  const auto k = static_cast<Eigen::Index>(s.sets.size());
  const Eigen::Index n = y.size();
  Eigen::MatrixXd local;
  Eigen::MatrixXd& increments = ws != nullptr ? ws->increments : local;
  if (increments.rows() != n || increments.cols() != k) {
    increments = Eigen::MatrixXd::Zero(n, k);
  } else {
    // The dual point p corresponds to the primal point x - sum_j p_j.
    y -= increments.rowwise().sum();
  }
  Eigen::VectorXd y_sweep_start(n);
  Eigen::VectorXd shifted(n);

  // A sweep can return y to where it started while the corrections are still
  // moving, so convergence is judged on both.
  int sweep = 0;
  while (sweep < s.params.max_sweeps) {
    ++sweep;
    y_sweep_start = y;
    double inc_change = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      auto inc = increments.col(j);
      shifted = y + inc;
      y = shifted;
      s.sets[static_cast<std::size_t>(j)].project_in_place(y);
      inc_change += (shifted - y - inc).squaredNorm();
      inc = shifted - y;
    }
    if ((y - y_sweep_start).norm() < s.params.tol &&
        std::sqrt(inc_change) < s.params.tol) {
      break;
    }
  }
  if (ws != nullptr) ws->last_sweeps = sweep;

  double residual = 0.0;
  for (const auto& op : s.sets) {
    shifted = y;
    op.project_in_place(shifted);
    residual = std::max(residual, (shifted - y).norm());
  }
  const double scale = 1.0 + y.lpNorm<Eigen::Infinity>();
  if (!(residual <= s.params.feas_tol * scale)) {
    throw InfeasibleError(
        "intersection projection: Dykstra residual " + std::to_string(residual) +
            " did not vanish; the intersection is likely empty",
        residual);
  }
}

inline Eigen::VectorXd project(const ProjectionOperator& op,
                               const Eigen::VectorXd& x) {
  return op.project(x);
}

/// Parameters of one controllable load: the scalar state follows
/// s_{tau+1} = a s_tau + b u_tau from s_1, must stay in [s_lo, s_hi], and the
/// consumption profile must stay in [u_lo, u_hi]^T with a prescribed total.
struct DemandResponseLoad {
  double a = 1.0;
  double b = 1.0;
  double s1 = 0.0;
  double u_lo = 0.0, u_hi = 1.0;
  double s_lo = 0.0, s_hi = 10.0;
  /// Total consumption sum_tau u_tau must equal this value.
  double total = 0.0;
  int horizon = 24;
};

/// Row tau of the returned matrix holds the coefficients of u in s_{tau+2}
/// (tau = 0..T-1), i.e. entry (tau, j) = b a^{tau-j} for j <= tau. The
/// constant part a^{tau+1} s_1 is returned in `offset`.
inline Eigen::MatrixXd demand_response_state_map(const DemandResponseLoad& p,
                                                 Eigen::VectorXd& offset) {
  const int T = p.horizon;
  Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(T, T);
  offset.resize(T);
  double a_pow = 1.0;
  for (int tau = 0; tau < T; ++tau) {
    a_pow *= p.a;
    offset(tau) = a_pow * p.s1;
    double c = p.b;
    for (int j = tau; j >= 0; --j) {
      coeff(tau, j) = c;
      c *= p.a;
    }
  }
  return coeff;
}

/// Feasible set of one load as an intersection: the box on u together with
/// the sum equality, and one slab per state s_2..s_{T+1}.
inline ProjectionOperator make_demand_response_set(
    const DemandResponseLoad& p, const DykstraParams& params = {}) {
  const int T = p.horizon;
  if (T <= 0) throw DimensionError("demand response: horizon must be positive");
  Eigen::VectorXd offset;
  const Eigen::MatrixXd coeff = demand_response_state_map(p, offset);

  Intersection sets;
  sets.params = params;
  sets.sets.reserve(T + 1);
  sets.sets.emplace_back(make_capped_sum(Eigen::VectorXd::Constant(T, p.u_lo),
                                         Eigen::VectorXd::Constant(T, p.u_hi), p.total));
  for (int tau = 0; tau < T; ++tau) {
    const Eigen::VectorXd row = coeff.row(tau).transpose();
    const double lo = p.s_lo - offset(tau);
    const double hi = p.s_hi - offset(tau);
    if (row.squaredNorm() == 0.0) {
      // The state does not depend on u; it is either always or never valid.
      if (lo > 0.0 || hi < 0.0) {
        throw InfeasibleError("demand response: state " + std::to_string(tau + 2) +
                                  " leaves [s_lo, s_hi] for every input",
                              std::max(lo, -hi));
      }
      continue;
    }
    sets.sets.emplace_back(Slab{row, lo, hi});
  }
  return ProjectionOperator(std::move(sets));
}

inline Eigen::VectorXd project_feasible_demand_response(
    const DemandResponseLoad& p, const Eigen::VectorXd& u,
    const DykstraParams& params = {}) {
  if (u.size() != p.horizon) {
    throw DimensionError("demand response: profile has " +
                         std::to_string(u.size()) + " entries, horizon is " +
                         std::to_string(p.horizon));
  }
  return make_demand_response_set(p, params).project(u);
}

}  // namespace aggeq
