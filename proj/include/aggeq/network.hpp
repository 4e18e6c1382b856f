#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "aggeq/errors.hpp"

namespace aggeq {

using Edge = std::pair<int, int>;

/// Communication graph with its weight matrix. Row i lists the agents whose
/// messages agent i mixes (its in-neighbours, self included when w_ii > 0).
class CommNetwork {
 public:
  struct Entry {
    int j;
    double w;
  };

  CommNetwork() = default;

  /// Takes W as given; use validate() to check the standing assumptions.
  explicit CommNetwork(Eigen::MatrixXd W) : W_(std::move(W)) {
    if (W_.rows() != W_.cols() || W_.rows() == 0) {
      throw DimensionError("weight matrix must be square and nonempty");
    }
    rows_.resize(W_.rows());
    for (Eigen::Index i = 0; i < W_.rows(); ++i) {
      for (Eigen::Index j = 0; j < W_.cols(); ++j) {
        if (W_(i, j) != 0.0) {
          rows_[i].push_back({static_cast<int>(j), W_(i, j)});
        }
      }
    }
  }

  int agents() const { return static_cast<int>(W_.rows()); }
  const Eigen::MatrixXd& weights() const { return W_; }
  double weight(int i, int j) const { return W_(i, j); }
  double self_weight(int i) const { return W_(i, i); }
  const std::vector<Entry>& row(int i) const { return rows_[i]; }

  bool is_neighbor(int i, int j) const { return W_(i, j) != 0.0; }

  /// out.row(i) = sum_j w_ij in.row(j): W applied channel by channel to an
  /// N x c matrix, identical to (W kron I_c) on the stacked vector.
  Eigen::MatrixXd mix(const Eigen::MatrixXd& in) const {
    if (in.rows() != agents()) {
      throw DimensionError("mix: input has " + std::to_string(in.rows()) +
                           " rows, network has " + std::to_string(agents()) +
                           " agents");
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(in.rows(), in.cols());
    for (int i = 0; i < agents(); ++i) {
      for (const auto& e : rows_[i]) out.row(i) += e.w * in.row(e.j);
    }
    return out;
  }

 private:
  Eigen::MatrixXd W_;
  std::vector<std::vector<Entry>> rows_;
};

namespace detail {

/// Tarjan's strongly connected components on the graph with an arc j -> i
/// whenever w_ij != 0 (information flows from j to i).
inline std::vector<std::vector<int>> strongly_connected_components(
    const Eigen::MatrixXd& W) {
  const int n = static_cast<int>(W.rows());
  std::vector<std::vector<int>> succ(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && W(i, j) != 0.0) succ[j].push_back(i);
    }
  }
  std::vector<int> index(n, -1), low(n, 0), stack;
  std::vector<bool> on_stack(n, false);
  std::vector<std::vector<int>> components;
  int counter = 0;

  std::function<void(int)> visit = [&](int v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (int w : succ[v]) {
      if (index[w] < 0) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<int> comp;
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp.push_back(w);
      } while (w != v);
      std::sort(comp.begin(), comp.end());
      components.push_back(std::move(comp));
    }
  };
  for (int v = 0; v < n; ++v) {
    if (index[v] < 0) visit(v);
  }
  std::sort(components.begin(), components.end());
  return components;
}

inline std::string describe_components(
    const std::vector<std::vector<int>>& comps) {
  std::string out;
  for (const auto& c : comps) {
    out += " {";
    for (std::size_t k = 0; k < c.size(); ++k) {
      out += (k ? "," : "") + std::to_string(c[k]);
    }
    out += "}";
  }
  return out;
}

}  // namespace detail

/// Outcome of validate(). Violations are reported, never thrown.
struct NetworkReport {
  double max_row_sum_error = 0.0;
  double max_col_sum_error = 0.0;
  double min_weight = 0.0;
  int scc_count = 0;
  /// |W - 11^T/N|_2: the worst-case contraction of W on the subspace
  /// orthogonal to consensus.
  double contraction = 1.0;
  std::vector<std::string> violations;

  bool valid() const { return violations.empty(); }
};

inline NetworkReport validate(const CommNetwork& net, double tol = 1e-12) {
  const Eigen::MatrixXd& W = net.weights();
  const auto n = W.rows();
  NetworkReport r;
  r.max_row_sum_error = (W.rowwise().sum().array() - 1.0).abs().maxCoeff();
  r.max_col_sum_error = (W.colwise().sum().array() - 1.0).abs().maxCoeff();
  r.min_weight = W.minCoeff();
  if (r.max_row_sum_error > tol) {
    r.violations.push_back("row sums deviate from 1 by " +
                           std::to_string(r.max_row_sum_error));
  }
  if (r.max_col_sum_error > tol) {
    r.violations.push_back("column sums deviate from 1 by " +
                           std::to_string(r.max_col_sum_error));
  }
  if (r.min_weight < 0.0) {
    r.violations.push_back("negative weight " + std::to_string(r.min_weight));
  }
  const auto comps = detail::strongly_connected_components(W);
  r.scc_count = static_cast<int>(comps.size());
  if (r.scc_count != 1) {
    r.violations.push_back("graph is not strongly connected; components:" +
                           detail::describe_components(comps));
  }
  const Eigen::MatrixXd centered =
      W - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  r.contraction = svd.singularValues()(0);
  return r;
}

/// Metropolis weights w_ij = 1/(1 + max(deg_i, deg_j)) on an undirected graph.
inline CommNetwork build_metropolis(const std::vector<Edge>& edges, int n) {
  if (n <= 0) throw DimensionError("network needs at least one agent");
  std::vector<std::set<int>> adj(n);
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw DimensionError("edge (" + std::to_string(a) + "," +
                           std::to_string(b) + ") out of range");
    }
    if (a == b) continue;
    adj[a].insert(b);
    adj[b].insert(a);
  }
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : adj[i]) {
      const auto deg = std::max(adj[i].size(), adj[j].size());
      W(i, j) = 1.0 / (1.0 + static_cast<double>(deg));
    }
  }
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j : adj[i]) off += W(i, j);
    W(i, i) = 1.0 - off;
  }
  const auto comps = detail::strongly_connected_components(W);
  if (comps.size() != 1) {
    throw AssumptionError("graph is disconnected; components:" +
                          detail::describe_components(comps));
  }
  return CommNetwork(std::move(W));
}

inline CommNetwork build_complete(int n) {
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  }
  return build_metropolis(edges, n);
}

/// Cycle with arcs in both directions: w_ii = self_weight and each of the two
/// ring neighbours gets (1 - self_weight)/2. Circulant, hence doubly
/// stochastic.
inline CommNetwork build_ring(int n, double self_weight) {
  if (n < 2) throw DimensionError("ring needs at least 2 agents");
  if (!(self_weight > 0.0 && self_weight < 1.0)) {
    throw ConfigError("ring self weight must lie in (0, 1)");
  }
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
  const double side = 0.5 * (1.0 - self_weight);
  for (int i = 0; i < n; ++i) {
    W(i, i) = self_weight;
    W(i, (i + 1) % n) += side;
    W(i, (i + n - 1) % n) += side;
  }
  return CommNetwork(std::move(W));
}

/// Undirected G(n, p) graph with Metropolis weights, resampled until
/// connected.
inline CommNetwork build_erdos_renyi(int n, double p, std::uint64_t seed,
                                     int max_retries = 1000) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("edge probability must lie in (0, 1]");
  if (n <= 0) throw DimensionError("network needs at least one agent");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (unit(rng) < p) edges.emplace_back(i, j);
      }
    }
    try {
      return build_metropolis(edges, n);
    } catch (const AssumptionError&) {
    }
  }
  throw AssumptionError("no connected Erdos-Renyi graph after " +
                        std::to_string(max_retries) +
                        " draws; increase the edge probability");
}

}  // namespace aggeq
