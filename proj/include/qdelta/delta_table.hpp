#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdelta/error.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"

namespace qdelta {

/// Ladder of time scales z = 0..Z: discount, bootstrap steps, trace
/// parameter and learning rate per scale.
struct TimescaleSchedule {
  std::vector<double> gammas;
  std::vector<std::size_t> k;
  std::vector<double> lambdas;
  std::vector<double> alphas;

  std::size_t size() const { return gammas.size(); }
  std::size_t top() const { return gammas.size() - 1; }
  std::size_t max_k() const {
    std::size_t m = 0;
    for (auto v : k) m = std::max(m, v);
    return m;
  }

  /// Ladder with k = 1, lambda = 0 and a shared learning rate.
  static TimescaleSchedule from_gammas(std::vector<double> gammas, double alpha = 0.1) {
    TimescaleSchedule s;
    const auto n = gammas.size();
    s.gammas = std::move(gammas);
    s.k.assign(n, 1);
    s.lambdas.assign(n, 0.0);
    s.alphas.assign(n, alpha);
    return s;
  }

  /// Every violated constraint, one message each.
  std::vector<std::string> violations(bool require_monotone_k = false) const {
    std::vector<std::string> errs;
    if (gammas.empty()) errs.emplace_back("schedule needs at least one gamma");
    const auto n = gammas.size();
    if (k.size() != n || lambdas.size() != n || alphas.size() != n)
      errs.emplace_back("gammas, k, lambdas and alphas must have equal length");
    for (std::size_t z = 0; z < n; ++z) {
      if (!(gammas[z] >= 0.0 && gammas[z] < 1.0)) errs.emplace_back("gammas must lie in [0, 1)");
      if (z > 0 && gammas[z] < gammas[z - 1]) errs.emplace_back("gammas must be nondecreasing");
    }
    for (std::size_t z = 0; z < k.size(); ++z) {
      if (k[z] < 1) errs.emplace_back("k must be >= 1");
      if (require_monotone_k && z > 0 && k[z] < k[z - 1]) errs.emplace_back("k must be nondecreasing");
    }
    for (std::size_t z = 0; z < lambdas.size() && z < n; ++z) {
      if (!(lambdas[z] >= 0.0)) errs.emplace_back("lambdas must be >= 0");
      if (!(lambdas[z] * gammas[z] < 1.0)) errs.emplace_back("lambda_z * gamma_z must be < 1");
    }
    for (double a : alphas)
      if (!(a >= 0.0 && a <= 1.0)) errs.emplace_back("alphas must lie in [0, 1]");
    // One message per kind of violation is enough.
    std::vector<std::string> unique;
    for (auto& e : errs)
      if (std::find(unique.begin(), unique.end(), e) == unique.end()) unique.push_back(std::move(e));
    return unique;
  }

  void validate(bool require_monotone_k = false) const {
    auto errs = violations(require_monotone_k);
    if (!errs.empty()) throw ConfigError(errs.front());
  }

  friend bool operator==(const TimescaleSchedule&, const TimescaleSchedule&) = default;
};

/// Per-scale tables W_z(s, a). Partial sums over z' <= z estimate Q_{gamma_z}.
class DeltaTable {
 public:
  DeltaTable() = default;
  DeltaTable(const TimescaleSchedule& schedule, std::size_t n_states, std::size_t n_actions)
      : schedule_(schedule), n_states_(n_states), n_actions_(n_actions),
        w_(schedule.size() * n_states * n_actions, 0.0) {}

  static DeltaTable zeros(const TimescaleSchedule& schedule, const MdpSpec& mdp) {
    return DeltaTable(schedule, mdp.n_states, mdp.n_actions);
  }

  /// Table holding the given components (e.g. the exact oracle ladder).
  static DeltaTable from_components(const TimescaleSchedule& schedule,
                                    const std::vector<QTable>& components) {
    detail::require(components.size() == schedule.size(), "one component per scale required");
    DeltaTable t(schedule, components[0].n_states, components[0].n_actions);
    for (std::size_t z = 0; z < components.size(); ++z)
      for (StateId s = 0; s < t.n_states_; ++s)
        for (ActionId a = 0; a < t.n_actions_; ++a) t.at(z, s, a) = components[z].at(s, a);
    return t;
  }

  const TimescaleSchedule& schedule() const { return schedule_; }
  std::size_t scales() const { return schedule_.size(); }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  const std::vector<double>& raw() const { return w_; }

  double& at(std::size_t z, StateId s, ActionId a) { return w_[index(z, s, a)]; }
  double at(std::size_t z, StateId s, ActionId a) const { return w_[index(z, s, a)]; }

  std::span<const double> component_row(std::size_t z, StateId s) const {
    return {w_.data() + index(z, s, 0), n_actions_};
  }

  double component_max(std::size_t z, StateId s) const { return max_value(component_row(z, s)); }

  double partial_sum(std::size_t z, StateId s, ActionId a) const {
    double q = 0.0;
    for (std::size_t u = 0; u <= z; ++u) q += at(u, s, a);
    return q;
  }

  std::vector<double> partial_sum_row(std::size_t z, StateId s) const {
    std::vector<double> row(n_actions_);
    for (ActionId a = 0; a < n_actions_; ++a) row[a] = partial_sum(z, s, a);
    return row;
  }

  double partial_sum_max(std::size_t z, StateId s) const { return max_value(partial_sum_row(z, s)); }

  /// Estimate of Q_{gamma_z} as a table.
  QTable reconstruct(std::size_t z) const {
    QTable q(n_states_, n_actions_, schedule_.gammas[z]);
    for (StateId s = 0; s < n_states_; ++s)
      for (ActionId a = 0; a < n_actions_; ++a) q.at(s, a) = partial_sum(z, s, a);
    return q;
  }
  QTable reconstruct() const { return reconstruct(schedule_.top()); }

  QTable component(std::size_t z) const {
    QTable q(n_states_, n_actions_, schedule_.gammas[z]);
    for (StateId s = 0; s < n_states_; ++s)
      for (ActionId a = 0; a < n_actions_; ++a) q.at(s, a) = at(z, s, a);
    return q;
  }

  bool all_finite() const {
    for (double x : w_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const DeltaTable&, const DeltaTable&) = default;

 private:
  std::size_t index(std::size_t z, StateId s, ActionId a) const {
    return (z * n_states_ + s) * n_actions_ + a;
  }

  TimescaleSchedule schedule_;
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<double> w_;
};

inline nlohmann::json to_json(const TimescaleSchedule& s) {
  return {{"gammas", s.gammas}, {"k", s.k}, {"lambdas", s.lambdas}, {"alphas", s.alphas}};
}

inline nlohmann::json to_json(const DeltaTable& t) {
  nlohmann::json w = nlohmann::json::array();
  for (std::size_t z = 0; z < t.scales(); ++z) {
    nlohmann::json rows = nlohmann::json::array();
    for (StateId s = 0; s < t.n_states(); ++s) {
      auto r = t.component_row(z, s);
      rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    w.push_back(std::move(rows));
  }
  return {{"schedule", to_json(t.schedule())}, {"w", std::move(w)}};
}

inline DeltaTable delta_table_from_json(const nlohmann::json& j) {
  try {
    TimescaleSchedule s;
    const auto& js = j.at("schedule");
    s.gammas = js.at("gammas").get<std::vector<double>>();
    s.k = js.at("k").get<std::vector<std::size_t>>();
    s.lambdas = js.at("lambdas").get<std::vector<double>>();
    s.alphas = js.at("alphas").get<std::vector<double>>();
    s.validate();
    const auto w = j.at("w").get<std::vector<std::vector<std::vector<double>>>>();
    detail::require(w.size() == s.size() && !w[0].empty(), "w must have one table per scale");
    DeltaTable t(s, w[0].size(), w[0][0].size());
    for (std::size_t z = 0; z < w.size(); ++z) {
      detail::require(w[z].size() == t.n_states(), "w tables must share a shape");
      for (StateId st = 0; st < t.n_states(); ++st) {
        detail::require(w[z][st].size() == t.n_actions(), "w tables must share a shape");
        for (ActionId a = 0; a < t.n_actions(); ++a) t.at(z, st, a) = w[z][st][a];
      }
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed DeltaTable document: ") + e.what());
  }
}

}  // namespace qdelta
