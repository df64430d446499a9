#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qdelta/delta_table.hpp"
#include "qdelta/error.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/rng.hpp"

namespace qdelta {

/// delta[z][t] for a trajectory of length T.
struct TdErrorSeries {
  std::vector<std::vector<double>> delta;

  std::size_t scales() const { return delta.size(); }
  std::size_t horizon() const { return delta.empty() ? 0 : delta[0].size(); }
};

/// Which estimate the per-scale TD error subtracts.
enum class TdSubtrahend {
  current_pair,  ///< W_z(s_t, a_t), matching the baseline one-step TD error
  next_pair,     ///< W_z(s_{t+1}, a_{t+1}) as literally printed
};

/// r + gamma * max_a Q(s', a) - Q(s, a).
inline double td_error(const QTable& q, const Transition& tr) {
  return tr.reward + q.gamma * q.max_at(tr.next_state) - q.at(tr.state, tr.action);
}

inline std::vector<double> td_errors_q(const QTable& q, const Trajectory& traj) {
  std::vector<double> d(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) d[t] = td_error(q, traj[t]);
  return d;
}

inline TdErrorSeries td_errors_delta(const DeltaTable& table, const Trajectory& traj,
                                     TdSubtrahend subtrahend = TdSubtrahend::current_pair) {
  detail::require(!traj.empty(), "td_errors_delta needs a non-empty trajectory");
  const auto& g = table.schedule().gammas;
  const std::size_t T = traj.size();
  TdErrorSeries out;
  out.delta.assign(table.scales(), std::vector<double>(T));
  for (std::size_t t = 0; t < T; ++t) {
    const auto& tr = traj[t];
    StateId sub_s = tr.state;
    ActionId sub_a = tr.action;
    if (subtrahend == TdSubtrahend::next_pair) {
      sub_s = tr.next_state;
      sub_a = t + 1 < T ? traj[t + 1].action : argmax(table.partial_sum_row(table.scales() - 1, sub_s));
    }
    out.delta[0][t] = tr.reward + g[0] * table.component_max(0, tr.next_state) - table.at(0, sub_s, sub_a);
    for (std::size_t z = 1; z < table.scales(); ++z)
      out.delta[z][t] = (g[z] - g[z - 1]) * table.partial_sum_max(z - 1, tr.next_state) +
                        g[z] * table.component_max(z, tr.next_state) - table.at(z, sub_s, sub_a);
  }
  return out;
}

/// True when one action attains the maximum of every partial sum and every
/// component at `s`; under this condition the per-scale TD errors telescope
/// to the baseline TD error at gamma_Z.
inline bool shared_greedy_action(const DeltaTable& table, StateId s) {
  const std::size_t top = table.scales() - 1;
  const ActionId a = argmax(table.partial_sum_row(top, s));
  for (std::size_t z = 0; z <= top; ++z) {
    if (table.partial_sum(z, s, a) != table.partial_sum_max(z, s)) return false;
    if (table.at(z, s, a) != table.component_max(z, s)) return false;
  }
  return true;
}

/// G_t = estimate(s_t, a_t) + sum_{k<T} (lambda*gamma)^k delta_{t+k}, with the
/// sum cut at the end of the series.
inline std::vector<double> truncated_lambda_sum(std::span<const double> estimate,
                                                std::span<const double> deltas, double decay,
                                                std::size_t truncation) {
  const std::size_t n = deltas.size();
  std::vector<double> g(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t stop = std::min(n, t + truncation);
    double acc = 0.0;
    double w = 1.0;
    for (std::size_t k = t; k < stop; ++k) {
      acc += w * deltas[k];
      w *= decay;
    }
    g[t] = estimate[t] + acc;
  }
  return g;
}

inline std::vector<double> lambda_return_q(const QTable& q, const Trajectory& traj, double lambda,
                                           std::size_t truncation) {
  detail::require(lambda >= 0.0 && lambda * q.gamma < 1.0, "lambda_return_q needs lambda * gamma < 1");
  std::vector<double> est(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) est[t] = q.at(traj[t].state, traj[t].action);
  const auto deltas = td_errors_q(q, traj);
  return truncated_lambda_sum(est, deltas, lambda * q.gamma, truncation);
}

/// Per-scale lambda-returns G[z][t] with decay lambda_z * gamma_z.
inline std::vector<std::vector<double>> lambda_return_delta(const TdErrorSeries& series,
                                                            const DeltaTable& table,
                                                            const Trajectory& traj,
                                                            std::size_t truncation) {
  const auto& sched = table.schedule();
  detail::require(series.scales() == table.scales() && series.horizon() == traj.size(),
                  "TD error series does not match table / trajectory");
  std::vector<std::vector<double>> g(table.scales());
  std::vector<double> est(traj.size());
  for (std::size_t z = 0; z < table.scales(); ++z) {
    detail::require(sched.lambdas[z] * sched.gammas[z] < 1.0, "lambda_z * gamma_z must be < 1");
    for (std::size_t t = 0; t < traj.size(); ++t) est[t] = table.at(z, traj[t].state, traj[t].action);
    g[z] = truncated_lambda_sum(est, series.delta[z], sched.lambdas[z] * sched.gammas[z], truncation);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Contraction of T_lambda

/// gamma * |1 - lambda| / (1 - lambda * gamma), the coefficient derived for T_lambda.
inline double contraction_coefficient(double gamma, double lambda) {
  detail::require(lambda * gamma < 1.0, "contraction coefficient needs lambda * gamma < 1");
  return gamma * std::abs(1.0 - lambda) / (1.0 - lambda * gamma);
}

/// gamma / |1 - lambda * gamma|, the coefficient as stated in the theorem.
inline double contraction_coefficient_statement(double gamma, double lambda) {
  detail::require(lambda * gamma < 1.0, "contraction coefficient needs lambda * gamma < 1");
  return gamma / std::abs(1.0 - lambda * gamma);
}

/// Largest lambda for which T_lambda contracts at discount gamma (exclusive).
inline double contraction_lambda_limit(double gamma) {
  return gamma > 0.0 ? (1.0 + gamma) / (2.0 * gamma) : std::numeric_limits<double>::infinity();
}

enum class AuditMode {
  fixed_policy,  ///< P and T both induced by one reference policy (linear operator)
  nonlinear,     ///< P greedy w.r.t. each argument, T the optimality backup
};

struct ContractionReport {
  double gamma = 0.0;
  double lambda = 0.0;
  double coefficient = 0.0;            ///< proof form
  double coefficient_statement = 0.0;  ///< statement form
  double max_observed_ratio = 0.0;
  std::size_t pairs_used = 0;
  std::size_t pairs_skipped = 0;
  bool within_bound = false;
};

/// Applies T_lambda to random table pairs and records the largest
/// ||T q1 - T q2|| / ||q1 - q2|| ratio.
inline ContractionReport audit_contraction(const MdpSpec& mdp, double gamma, double lambda,
                                           const DeterministicPolicy& reference_policy,
                                           std::size_t n_pairs, std::uint64_t seed,
                                           AuditMode mode = AuditMode::fixed_policy) {
  detail::require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  detail::require(lambda >= 0.0 && lambda < contraction_lambda_limit(gamma),
                  "lambda must lie in [0, (1 + gamma) / (2 gamma))");
  ContractionReport rep;
  rep.gamma = gamma;
  rep.lambda = lambda;
  rep.coefficient = contraction_coefficient(gamma, lambda);
  rep.coefficient_statement = contraction_coefficient_statement(gamma, lambda);
  const double scale = 1.0 / (1.0 - gamma);

  auto apply = [&](const QTable& q) {
    if (mode == AuditMode::fixed_policy)
      return apply_t_lambda(mdp, q, lambda, reference_policy, BackupKind::reference_policy);
    return apply_t_lambda(mdp, q, lambda, greedy_policy(q), BackupKind::optimality);
  };

  for (std::size_t i = 0; i < n_pairs; ++i) {
    Rng rng = make_rng(derive_seed(seed, "contraction-pair", i));
    QTable q1 = QTable::zeros_like(mdp, gamma);
    QTable q2 = q1;
    for (auto& v : q1.values) v = uniform_real(rng, -scale, scale);
    // Every fourth pair is a pure shift, the extremal direction for the fixed-policy operator.
    if (i % 4 == 3) {
      const double c = uniform_real(rng, -scale, scale);
      for (std::size_t j = 0; j < q2.values.size(); ++j) q2.values[j] = q1.values[j] + c;
    } else {
      for (auto& v : q2.values) v = uniform_real(rng, -scale, scale);
    }
    const double denom = sup_distance(q1, q2);
    if (denom < 1e-12) {
      ++rep.pairs_skipped;
      continue;
    }
    const double ratio = sup_distance(apply(q1), apply(q2)) / denom;
    rep.max_observed_ratio = std::max(rep.max_observed_ratio, ratio);
    ++rep.pairs_used;
  }
  rep.within_bound = rep.max_observed_ratio <= rep.coefficient + 1e-10;
  return rep;
}

}  // namespace qdelta
