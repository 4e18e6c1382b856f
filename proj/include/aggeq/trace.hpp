#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "aggeq/network.hpp"
#include "aggeq/ragged.hpp"

namespace aggeq {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One row of a run trace. Columns that do not apply to the engine that
/// produced the row stay NaN and are not written.
struct TraceRecord {
  long iter = 0;
  double normalized_err = kNaN;
  double err_to_oracle = kNaN;
  double step_norm = kNaN;
  double tracking_err_max = kNaN;
  double mean_z_norm = kNaN;
  // Coupled engine only.
  double mean_y_norm = kNaN;
  double cons_violation_inf = kNaN;
  double dual_consensus_err = kNaN;
  double kkt_primal_res = kNaN;
  double kkt_dual_res = kNaN;
  double lambda_min = kNaN;
  std::int64_t wall_ns = 0;
};

/// Full engine state at one iteration, kept when a run asks for it.
struct StateSnapshot {
  Eigen::VectorXd x;
  Eigen::MatrixXd z;
  Eigen::MatrixXd y;       // empty for the uncoupled engine
  Eigen::MatrixXd lambda;  // empty for the uncoupled engine
};

struct Trace {
  bool coupled = false;
  std::vector<TraceRecord> records;
  std::vector<StateSnapshot> states;

  std::vector<double> column(double TraceRecord::*field) const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.*field);
    return out;
  }
};

/// Records every read one agent makes of another agent's published message.
/// Each agent only appends to its own slot, so concurrent rounds are safe.
class LocalityGuard {
 public:
  struct Read {
    int reader;
    int source;
  };

  LocalityGuard() = default;
  explicit LocalityGuard(int agents) : reads_(agents), violations_(agents) {}

  bool enabled() const { return !reads_.empty(); }

  void record(const CommNetwork& net, int reader, int source) {
    if (!enabled()) return;
    reads_[reader].push_back({reader, source});
    if (!net.is_neighbor(reader, source)) {
      violations_[reader].push_back({reader, source});
    }
  }

  std::vector<Read> reads() const { return flatten(reads_); }
  std::vector<Read> violations() const { return flatten(violations_); }

 private:
  static std::vector<Read> flatten(const std::vector<std::vector<Read>>& v) {
    std::vector<Read> out;
    for (const auto& part : v) out.insert(out.end(), part.begin(), part.end());
    return out;
  }

  std::vector<std::vector<Read>> reads_;
  std::vector<std::vector<Read>> violations_;
};

/// Row-per-agent view of what every agent broadcast this round. Agent i can
/// only reach other rows through an Inbox.
struct Mailbox {
  std::vector<Eigen::MatrixXd> channels;  // each N x c
};

/// Agent i's access to its in-neighbours' messages for one round.
class Inbox {
 public:
  Inbox(const CommNetwork& net, const Mailbox& mail, int agent,
        LocalityGuard* guard)
      : net_(net), mail_(mail), agent_(agent), guard_(guard) {}

  /// sum_j w_ij * channel(j), over j with w_ij != 0, in ascending j.
  Eigen::VectorXd weighted_sum(std::size_t channel) const {
    const Eigen::MatrixXd& c = mail_.channels[channel];
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(c.cols());
    for (const auto& e : net_.row(agent_)) {
      if (guard_ != nullptr) guard_->record(net_, agent_, e.j);
      acc += e.w * c.row(e.j).transpose();
    }
    return acc;
  }

  /// sum_{j != i} w_ij ((a_j + b_j) - (a_i + b_i)) over two channels a, b.
  /// For row-stochastic W, own + this increment equals
  /// sum_j w_ij (a_j + b_j) - b_i. With symmetric W each pair contributes
  /// exactly opposite terms to agents i and j, so the network-wide sum of the
  /// exact increments is zero. The sum is returned as hi + lo, where lo holds
  /// the rounding error of accumulating hi.
  void consensus_increment(std::size_t a, std::size_t b, Eigen::VectorXd& hi,
                           Eigen::VectorXd& lo) const {
    const Eigen::MatrixXd& ca = mail_.channels[a];
    const Eigen::MatrixXd& cb = mail_.channels[b];
    const Eigen::VectorXd own = (ca.row(agent_) + cb.row(agent_)).transpose();
    hi = Eigen::VectorXd::Zero(ca.cols());
    lo = Eigen::VectorXd::Zero(ca.cols());
    for (const auto& e : net_.row(agent_)) {
      if (guard_ != nullptr) guard_->record(net_, agent_, e.j);
      if (e.j == agent_) continue;
      const Eigen::VectorXd other = (ca.row(e.j) + cb.row(e.j)).transpose();
      for (Eigen::Index k = 0; k < hi.size(); ++k) {
        const double term = e.w * (other(k) - own(k));
        const double s = hi(k) + term;
        const double v = s - hi(k);
        lo(k) += (hi(k) - (s - v)) + (term - v);
        hi(k) = s;
      }
    }
  }

  /// The increment above, rounded to one vector.
  Eigen::VectorXd consensus_increment(std::size_t a, std::size_t b) const {
    Eigen::VectorXd hi, lo;
    consensus_increment(a, b, hi, lo);
    return hi + lo;
  }

  /// own + increment of channels (a, b), with the rounding error of the sum
  /// and of the addition carried in `carry` (one row per agent) instead of
  /// being dropped. Network-wide tracker sums then stay at rounding level
  /// however long the run is.
  Eigen::VectorXd tracker_update(std::size_t a, std::size_t b, Eigen::MatrixXd& carry) const {
    Eigen::VectorXd hi, lo;
    consensus_increment(a, b, hi, lo);
    const Eigen::VectorXd own = mail_.channels[a].row(agent_).transpose();
    Eigen::VectorXd out(own.size());
    for (Eigen::Index k = 0; k < own.size(); ++k) {
      const double s = own(k) + hi(k);
      const double v = s - own(k);
      const double err = (own(k) - (s - v)) + (hi(k) - v);
      const double low = err + lo(k) + carry(agent_, k);
      out(k) = s + low;
      carry(agent_, k) = low - (out(k) - s);
    }
    return out;
  }

  /// Direct read of agent j's message; only legal for in-neighbours.
  Eigen::VectorXd read(std::size_t channel, int j) const {
    if (guard_ != nullptr) guard_->record(net_, agent_, j);
    return mail_.channels[channel].row(j).transpose();
  }

 private:
  const CommNetwork& net_;
  const Mailbox& mail_;
  int agent_;
  LocalityGuard* guard_;
};

struct StopCriteria {
  long max_iters = 10'000;
  /// Stop once |x^{t+1} - x^t| / delta <= tol. A non-finite tol disables the
  /// test so the run lasts exactly max_iters steps.
  double tol = 1e-10;
};

enum class StopReason { kTolerance, kMaxIters };

inline const char* to_string(StopReason r) {
  return r == StopReason::kTolerance ? "tolerance" : "max_iters";
}

namespace detail {

inline void put(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace detail

/// Writes the trace as CSV. The optional comment line goes first, prefixed
/// with '#'. Values are printed with 17 significant digits so they read back
/// bit-exactly.
inline void write_trace_csv(std::ostream& os, const Trace& trace, int trial,
                            const std::string& comment = {}) {
  if (!comment.empty()) os << "# " << comment << '\n';
  os << "trial,iter,normalized_err,err_to_oracle,step_norm,tracking_err_max,"
        "mean_z_norm";
  if (trace.coupled) {
    os << ",mean_y_norm,cons_violation_inf,dual_consensus_err,kkt_primal_res,"
          "kkt_dual_res,lambda_min";
  }
  os << ",wall_ns\n";
  for (const auto& r : trace.records) {
    os << trial << ',' << r.iter;
    for (double v : {r.normalized_err, r.err_to_oracle, r.step_norm,
                     r.tracking_err_max, r.mean_z_norm}) {
      os << ',';
      detail::put(os, v);
    }
    if (trace.coupled) {
      for (double v : {r.mean_y_norm, r.cons_violation_inf,
                       r.dual_consensus_err, r.kkt_primal_res, r.kkt_dual_res,
                       r.lambda_min}) {
        os << ',';
        detail::put(os, v);
      }
    }
    os << ',' << r.wall_ns << '\n';
  }
}

/// |sum_i row_i|_inf with compensated summation: how far the tracker mean
/// has drifted from zero.
inline double column_sum_norm(const Eigen::MatrixXd& m) {
  double worst = 0.0;
  std::vector<double> col(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) col[i] = m(i, k);
    worst = std::max(worst, std::abs(compensated_sum(col)));
  }
  return worst;
}

}  // namespace aggeq
