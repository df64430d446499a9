#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdelta/error.hpp"
#include "qdelta/mdp.hpp"

namespace qdelta {

/// Action-value table Q[s][a] for a fixed discount.
struct QTable {
  double gamma = 0.0;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> values;

  QTable() = default;
  QTable(std::size_t states, std::size_t actions, double discount, double fill = 0.0)
      : gamma(discount), n_states(states), n_actions(actions), values(states * actions, fill) {}

  static QTable zeros_like(const MdpSpec& mdp, double discount) {
    return QTable(mdp.n_states, mdp.n_actions, discount);
  }

  double& at(StateId s, ActionId a) { return values[s * n_actions + a]; }
  double at(StateId s, ActionId a) const { return values[s * n_actions + a]; }
  std::span<const double> row(StateId s) const { return {values.data() + s * n_actions, n_actions}; }
  double max_at(StateId s) const { return max_value(row(s)); }
  ActionId greedy(StateId s) const { return argmax(row(s)); }

  friend bool operator==(const QTable&, const QTable&) = default;
};

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double sup_distance(const QTable& a, const QTable& b) { return sup_distance(a.values, b.values); }

using DeterministicPolicy = std::vector<ActionId>;

inline DeterministicPolicy greedy_policy(const QTable& q) {
  DeterministicPolicy pi(q.n_states);
  for (StateId s = 0; s < q.n_states; ++s) pi[s] = q.greedy(s);
  return pi;
}

enum class BackupKind {
  optimality,        ///< r + gamma * P max_a' Q
  reference_policy,  ///< r + gamma * P Q(., pi(.)) for the supplied policy
};

/// One application of the Bellman backup at discount q.gamma.
inline QTable bellman_backup(const MdpSpec& mdp, const QTable& q,
                             BackupKind kind = BackupKind::optimality,
                             const DeterministicPolicy* policy = nullptr) {
  QTable out(mdp.n_states, mdp.n_actions, q.gamma);
  std::vector<double> next_value(mdp.n_states);
  for (StateId s = 0; s < mdp.n_states; ++s)
    next_value[s] = kind == BackupKind::optimality ? q.max_at(s) : q.at(s, (*policy)[s]);
  for (StateId s = 0; s < mdp.n_states; ++s) {
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      double ev = 0.0;
      const auto row = mdp.row(s, a);
      for (StateId n = 0; n < mdp.n_states; ++n) ev += row[n] * next_value[n];
      out.at(s, a) = mdp.expected_reward(s, a) + q.gamma * ev;
    }
  }
  return out;
}

/// Optimal action values at discount `gamma`. Stops once successive iterates
/// differ by at most tol * (1 - gamma) / gamma, which guarantees both the
/// Bellman residual and the distance to the fixed point are within `tol`.
inline QTable value_iteration(const MdpSpec& mdp, double gamma, double tol = 1e-12,
                              std::size_t max_iters = 1'000'000) {
  detail::require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  detail::require(tol > 0.0, "tolerance must be positive");
  QTable q = QTable::zeros_like(mdp, gamma);
  if (gamma == 0.0) return bellman_backup(mdp, q);
  const double stop = tol * (1.0 - gamma) / gamma;
  double diff = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    QTable next = bellman_backup(mdp, q);
    diff = sup_distance(next, q);
    q = std::move(next);
    if (diff <= stop) return q;
  }
  throw NumericError("value iteration did not converge: gamma=" + std::to_string(gamma) +
                     " last change=" + std::to_string(diff));
}

/// Exact delta component Q_{gamma_hi} - Q_{gamma_lo}. Without gamma_lo this is
/// the base component Q_{gamma_hi} itself.
inline QTable exact_delta(const MdpSpec& mdp, double gamma_hi, std::optional<double> gamma_lo,
                          double tol = 1e-12) {
  QTable hi = value_iteration(mdp, gamma_hi, tol);
  if (!gamma_lo) return hi;
  detail::require(*gamma_lo >= 0.0 && *gamma_lo <= gamma_hi,
                  "exact_delta needs 0 <= gamma_lo <= gamma_hi");
  const QTable lo = value_iteration(mdp, *gamma_lo, tol);
  for (std::size_t i = 0; i < hi.values.size(); ++i) hi.values[i] -= lo.values[i];
  return hi;
}

/// Exact components W_0..W_Z for a nondecreasing discount ladder.
inline std::vector<QTable> exact_delta_ladder(const MdpSpec& mdp, std::span<const double> gammas,
                                              double tol = 1e-12) {
  std::vector<QTable> q;
  q.reserve(gammas.size());
  for (double g : gammas) q.push_back(value_iteration(mdp, g, tol));
  std::vector<QTable> w = q;
  for (std::size_t z = 1; z < q.size(); ++z)
    for (std::size_t i = 0; i < w[z].values.size(); ++i) w[z].values[i] -= q[z - 1].values[i];
  return w;
}

/// State-action transition matrix induced by following `policy` at the next state.
inline Eigen::MatrixXd state_action_transition(const MdpSpec& mdp, const DeterministicPolicy& policy) {
  const auto n = static_cast<Eigen::Index>(mdp.n_pairs());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (StateId s = 0; s < mdp.n_states; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      const auto r = static_cast<Eigen::Index>(mdp.pair_index(s, a));
      for (StateId next = 0; next < mdp.n_states; ++next)
        p(r, static_cast<Eigen::Index>(mdp.pair_index(next, policy[next]))) += mdp.p(s, a, next);
    }
  return p;
}

/// T_lambda q = q + (I - lambda*gamma*P_ref)^{-1} (T q - q), where P_ref is
/// induced by `reference_policy` and T is the backup selected by `backup`.
inline QTable apply_t_lambda(const MdpSpec& mdp, const QTable& q, double lambda,
                             const DeterministicPolicy& reference_policy,
                             BackupKind backup = BackupKind::optimality) {
  const double lg = lambda * q.gamma;
  detail::require(lambda >= 0.0, "lambda must be >= 0");
  detail::require(lg < 1.0, "T_lambda needs lambda * gamma < 1");
  detail::require(reference_policy.size() == mdp.n_states, "reference policy must cover every state");

  const QTable tq = bellman_backup(mdp, q, backup, &reference_policy);
  const auto n = static_cast<Eigen::Index>(mdp.n_pairs());
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) rhs(i) = tq.values[i] - q.values[i];

  const Eigen::MatrixXd m =
      Eigen::MatrixXd::Identity(n, n) - lg * state_action_transition(mdp, reference_policy);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  Eigen::VectorXd x = lu.solve(rhs);
  x += lu.solve(rhs - m * x);  // one refinement step
  const double residual = (m * x - rhs).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-10)) throw NumericError("T_lambda linear solve residual " + std::to_string(residual));

  QTable out = q;
  for (Eigen::Index i = 0; i < n; ++i) out.values[i] += x(i);
  return out;
}

inline nlohmann::json to_json(const QTable& q) {
  nlohmann::json rows = nlohmann::json::array();
  for (StateId s = 0; s < q.n_states; ++s) {
    auto r = q.row(s);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"gamma", q.gamma}, {"values", std::move(rows)}};
}

inline QTable qtable_from_json(const nlohmann::json& j) {
  try {
    const auto rows = j.at("values").get<std::vector<std::vector<double>>>();
    detail::require(!rows.empty() && !rows[0].empty(), "QTable must be non-empty");
    QTable q(rows.size(), rows[0].size(), j.at("gamma").get<double>());
    for (StateId s = 0; s < rows.size(); ++s) {
      detail::require(rows[s].size() == q.n_actions, "QTable rows must have equal length");
      for (ActionId a = 0; a < q.n_actions; ++a) q.at(s, a) = rows[s][a];
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed QTable document: ") + e.what());
  }
}

}  // namespace qdelta
