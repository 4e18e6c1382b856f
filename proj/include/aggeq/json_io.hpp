#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "aggeq/errors.hpp"
#include "aggeq/families.hpp"
#include "aggeq/game.hpp"
#include "aggeq/network.hpp"
#include "aggeq/projections.hpp"

namespace aggeq {

using json = nlohmann::json;

namespace detail {

inline const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError(where + ": missing \"" + key + "\"");
  }
  return j.at(key);
}

}  // namespace detail

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ConfigError(where + ": expected numbers");
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

/// Row-major nested arrays.
inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ConfigError(where + ": expected a nonempty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(where + ": ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

inline json to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (double x : v) out.push_back(x);
  return out;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out.push_back(to_json(Eigen::VectorXd(m.row(r).transpose())));
  }
  return out;
}

inline DykstraParams dykstra_params_from_json(const json& j) {
  DykstraParams p;
  if (j.contains("tol")) p.tol = j.at("tol").get<double>();
  if (j.contains("max_sweeps")) p.max_sweeps = j.at("max_sweeps").get<int>();
  if (j.contains("feas_tol")) p.feas_tol = j.at("feas_tol").get<double>();
  return p;
}

/// {"type": "box" | "halfspace" | "slab" | "capped_sum" | "affine" | "ball" |
///  "orthant" | "free" | "intersection", ...}
inline ProjectionOperator projection_from_json(const json& j,
                                               const std::string& where = "local_set") {
  const std::string type = detail::require(j, "type", where).get<std::string>();
  if (type == "free") return Free{};
  if (type == "orthant") return NonnegativeOrthant{};
  if (type == "box") {
    Box b{vector_from_json(detail::require(j, "lo", where), where + ".lo"),
          vector_from_json(detail::require(j, "hi", where), where + ".hi")};
    if (b.lo.size() != b.hi.size() || (b.lo.array() > b.hi.array()).any()) {
      throw ConfigError(where + ": box needs lo <= hi of equal length");
    }
    return b;
  }
  if (type == "halfspace") {
    return Halfspace{vector_from_json(detail::require(j, "a", where), where + ".a"),
                     detail::require(j, "beta", where).get<double>()};
  }
  if (type == "slab") {
    return Slab{vector_from_json(detail::require(j, "a", where), where + ".a"),
                detail::require(j, "lo", where).get<double>(),
                detail::require(j, "hi", where).get<double>()};
  }
  if (type == "capped_sum") {
    return make_capped_sum(vector_from_json(detail::require(j, "lo", where), where + ".lo"),
                           vector_from_json(detail::require(j, "hi", where), where + ".hi"),
                           detail::require(j, "total", where).get<double>());
  }
  if (type == "affine") {
    return make_affine_equality(
        matrix_from_json(detail::require(j, "C", where), where + ".C"),
        vector_from_json(detail::require(j, "e", where), where + ".e"));
  }
  if (type == "ball") {
    return Ball{vector_from_json(detail::require(j, "center", where), where + ".center"),
                detail::require(j, "radius", where).get<double>()};
  }
  if (type == "intersection") {
    Intersection s;
    s.params = dykstra_params_from_json(j);
    const json& sets = detail::require(j, "sets", where);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      s.sets.push_back(projection_from_json(sets[k], where + ".sets[" + std::to_string(k) + "]"));
    }
    return s;
  }
  throw ConfigError(where + ": unknown set type \"" + type + "\"");
}

/// {"topology": "ring" | "erdos_renyi" | "complete" | "explicit", "N": ...,
///  "self_weight": ..., "p": ..., "seed": ..., "weights": [[...]]}.
/// `seed_override` replaces the document's seed (per-trial graphs).
inline CommNetwork network_from_json(const json& j, int n_default = 0,
                                     std::optional<std::uint64_t> seed_override = {}) {
  const std::string where = "graph";
  const std::string topo = detail::require(j, "topology", where).get<std::string>();
  const int n = j.contains("N") ? j.at("N").get<int>() : n_default;
  if (topo == "explicit") {
    return CommNetwork(matrix_from_json(detail::require(j, "weights", where), "graph.weights"));
  }
  if (n <= 0) throw ConfigError("graph: agent count N must be positive");
  if (topo == "ring") return build_ring(n, j.value("self_weight", 0.5));
  if (topo == "complete") return build_complete(n);
  if (topo == "erdos_renyi") {
    const std::uint64_t seed =
        seed_override ? *seed_override : j.value("seed", std::uint64_t{1});
    return build_erdos_renyi(n, j.value("p", 0.3), seed, j.value("max_retries", 1000));
  }
  throw ConfigError("graph: unknown topology \"" + topo + "\"");
}

namespace detail {

inline void attach_constraints(AgentSpec& a, const json& j, int m, const std::string& where) {
  if (j.contains("local_set")) a.local_set = projection_from_json(j.at("local_set"), where + ".local_set");
  if (m > 0) {
    a.coupling = CouplingBlock{matrix_from_json(require(j, "A", where), where + ".A"),
                               vector_from_json(require(j, "b", where), where + ".b")};
  }
}

}  // namespace detail

/// Builds a game from one of the built-in cost families:
///   {"family": "quadratic-aggregative" | "demand-response" | "deviation-tracking",
///    "agg_dim": d, "coupling_rows": m, "shared": {...}, "agents": [...]}
inline AggregativeGame game_from_json(const json& j, const GradientCheck& check = {}) {
  const std::string family = detail::require(j, "family", "game").get<std::string>();
  const json& agents_json = detail::require(j, "agents", "game");
  if (!agents_json.is_array() || agents_json.empty()) {
    throw ConfigError("game: \"agents\" must be a nonempty array");
  }
  const int m = j.value("coupling_rows", 0);
  const json shared = j.value("shared", json::object());
  std::vector<AgentSpec> agents;
  int agg_dim = j.value("agg_dim", 0);

  for (std::size_t i = 0; i < agents_json.size(); ++i) {
    const json& aj = agents_json[i];
    const std::string where = "game.agents[" + std::to_string(i) + "]";
    AgentSpec a;
    if (family == "quadratic-aggregative") {
      QuadraticAgentParams p;
      p.Q = matrix_from_json(detail::require(aj, "Q", where), where + ".Q");
      const auto n = p.Q.rows();
      p.C = matrix_from_json(detail::require(aj, "C", where), where + ".C");
      p.q = aj.contains("q") ? vector_from_json(aj.at("q"), where + ".q")
                             : Eigen::VectorXd::Zero(n);
      p.Phi = aj.contains("Phi") ? matrix_from_json(aj.at("Phi"), where + ".Phi")
                                 : Eigen::MatrixXd::Identity(p.C.cols(), n);
      a = quadratic_agent(p);
      if (agg_dim == 0) agg_dim = static_cast<int>(p.C.cols());
    } else if (family == "demand-response") {
      DemandResponseCost c;
      c.rho = aj.value("rho", 1.0);
      c.u_hat = vector_from_json(detail::require(aj, "u_hat", where), where + ".u_hat");
      c.price_slope = aj.value("price_slope", shared.value("price_slope", 1.0));
      const json& p0 = aj.contains("p0") ? aj.at("p0") : detail::require(shared, "p0", "game.shared");
      c.p0 = vector_from_json(p0, where + ".p0");
      a = demand_response_agent(c);
      if (aj.contains("load")) {
        const json& lj = aj.at("load");
        DemandResponseLoad load;
        load.horizon = static_cast<int>(c.u_hat.size());
        load.a = lj.value("a", 1.0);
        load.b = lj.value("b", 1.0);
        load.s1 = lj.value("s1", 0.0);
        load.u_lo = lj.value("u_lo", 0.0);
        load.u_hi = lj.value("u_hi", 1.0);
        load.s_lo = lj.value("s_lo", 0.0);
        load.s_hi = lj.value("s_hi", 10.0);
        load.total = c.u_hat.sum();
        a.local_set = make_demand_response_set(load);
      }
      agg_dim = static_cast<int>(c.u_hat.size());
    } else if (family == "deviation-tracking") {
      DeviationTrackingCost c;
      c.target = vector_from_json(detail::require(aj, "target", where), where + ".target");
      c.weight = aj.value("weight", shared.value("weight", 0.5));
      a = deviation_tracking_agent(c);
      agg_dim = static_cast<int>(c.target.size());
    } else {
      throw ConfigError("game: unknown family \"" + family + "\"");
    }
    detail::attach_constraints(a, aj, m, where);
    agents.push_back(std::move(a));
  }
  return AggregativeGame(std::move(agents), agg_dim, m, check);
}

}  // namespace aggeq
