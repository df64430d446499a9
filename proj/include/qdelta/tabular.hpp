#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdelta/delta_table.hpp"
#include "qdelta/error.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/rng.hpp"

namespace qdelta {

/// How the lower-scale bootstrap max_a Q_{gamma_{z-1}}(s', a) is formed.
enum class MaxMode {
  aggregate,  ///< max over the partial sum of W_0..W_{z-1}
  component,  ///< sum of per-component maxes (literal pseudocode form)
};

inline const char* to_string(MaxMode m) { return m == MaxMode::aggregate ? "aggregate" : "component"; }

/// M_{z-1}(s) for z >= 1.
inline double lower_scale_max(const DeltaTable& t, std::size_t z, StateId s, MaxMode mode) {
  if (mode == MaxMode::aggregate) return t.partial_sum_max(z - 1, s);
  double m = 0.0;
  for (std::size_t u = 0; u < z; ++u) m += t.component_max(u, s);
  return m;
}

/// Standard Q-learning: Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).
inline void q_learning_update(QTable& q, const Transition& tr, double alpha) {
  double& cell = q.at(tr.state, tr.action);
  const double target = tr.reward + q.gamma * q.max_at(tr.next_state);
  cell += alpha * (target - cell);
}

inline QTable q_learning_step(QTable q, const Transition& tr, double alpha) {
  detail::require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  q_learning_update(q, tr, alpha);
  return q;
}

/// One-step targets for every scale from the current table.
inline std::vector<double> single_step_targets(const DeltaTable& t, const Transition& tr,
                                               MaxMode mode = MaxMode::aggregate) {
  const auto& g = t.schedule().gammas;
  std::vector<double> targets(t.scales());
  targets[0] = tr.reward + g[0] * t.component_max(0, tr.next_state);
  for (std::size_t z = 1; z < t.scales(); ++z)
    targets[z] = (g[z] - g[z - 1]) * lower_scale_max(t, z, tr.next_state, mode) +
                 g[z] * t.component_max(z, tr.next_state);
  return targets;
}

/// W_z(s,a) += alpha_z * (G^z - W_z(s,a)) for all z, from pre-update values.
inline void apply_targets_inplace(DeltaTable& t, StateId s, ActionId a,
                                  std::span<const double> targets) {
  if (targets.size() != t.scales())
    throw ConfigError("target vector has length " + std::to_string(targets.size()) + ", expected " +
                      std::to_string(t.scales()));
  const auto& alphas = t.schedule().alphas;
  for (std::size_t z = 0; z < t.scales(); ++z) {
    double& cell = t.at(z, s, a);
    cell += alphas[z] * (targets[z] - cell);
  }
}

inline DeltaTable apply_targets(DeltaTable t, StateId s, ActionId a, std::span<const double> targets) {
  apply_targets_inplace(t, s, a, targets);
  return t;
}

inline void single_step_w_update_inplace(DeltaTable& t, const Transition& tr,
                                         MaxMode mode = MaxMode::aggregate) {
  const auto targets = single_step_targets(t, tr, mode);
  apply_targets_inplace(t, tr.state, tr.action, targets);
}

inline DeltaTable single_step_w_update(DeltaTable t, const Transition& tr,
                                       MaxMode mode = MaxMode::aggregate) {
  single_step_w_update_inplace(t, tr, mode);
  return t;
}

/// k_z-step targets G^z for the transition at `offset` in `window`.
/// With `truncate`, scales whose k_z overruns the window use the remaining
/// steps and bootstrap at the window's last successor state; otherwise a
/// short window is an error.
inline std::vector<double> multistep_targets(const DeltaTable& t, std::span<const Transition> window,
                                             std::size_t offset, MaxMode mode = MaxMode::aggregate,
                                             bool truncate = false) {
  const auto& sched = t.schedule();
  const auto& g = sched.gammas;
  detail::require(offset < window.size(), "window offset out of range");
  const std::size_t available = window.size() - offset;
  std::vector<double> targets(t.scales());
  for (std::size_t z = 0; z < t.scales(); ++z) {
    std::size_t k = sched.k[z];
    if (k > available) {
      if (!truncate)
        throw ConfigError("window too short for scale " + std::to_string(z) + ": needs " +
                          std::to_string(k) + " steps, has " + std::to_string(available));
      k = available;
    }
    const StateId boot = window[offset + k - 1].next_state;
    double acc = 0.0;
    double pw = 1.0;  // gamma_z^j
    if (z == 0) {
      for (std::size_t j = 0; j < k; ++j) {
        acc += pw * window[offset + j].reward;
        pw *= g[0];
      }
      targets[0] = acc + pw * t.component_max(0, boot);
      continue;
    }
    double pw_lo = 1.0;  // gamma_{z-1}^j
    for (std::size_t j = 0; j < k; ++j) {
      acc += (pw - pw_lo) * window[offset + j].reward;
      pw *= g[z];
      pw_lo *= g[z - 1];
    }
    targets[z] = acc + (pw - pw_lo) * lower_scale_max(t, z, boot, mode) + pw * t.component_max(z, boot);
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Episodic drivers

/// Linear annealing from `start` to `end` over `anneal_steps` environment steps.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  std::size_t anneal_steps = 0;

  double at(std::size_t step) const {
    if (anneal_steps == 0 || step >= anneal_steps) return end;
    const double frac = static_cast<double>(step) / static_cast<double>(anneal_steps);
    return start + (end - start) * frac;
  }

  static EpsilonSchedule constant(double eps) { return {eps, eps, 0}; }
};

enum class UpdateVariant { single_step, multi_step };

inline const char* to_string(UpdateVariant v) {
  return v == UpdateVariant::single_step ? "single_step" : "multi_step";
}

struct EpisodeMetrics {
  std::size_t episode = 0;
  std::size_t step = 0;  ///< cumulative environment steps at episode end
  double episode_return = 0.0;
  double sup_error = std::numeric_limits<double>::quiet_NaN();
  double epsilon = 0.0;
};

struct TrainOptions {
  std::size_t episodes = 0;
  std::size_t steps_per_episode = 100;
  EpsilonSchedule epsilon;
  std::uint64_t seed = 0;
  bool random_start = true;  ///< uniform start state; otherwise state 0
};

struct QDeltaResult {
  DeltaTable table;
  std::vector<EpisodeMetrics> metrics;
};

/// Called after every environment step with the global step index.
template <typename Table>
using StepObserver = std::function<void(std::size_t, const Table&)>;

namespace detail {

// Shared episode loop: identical RNG consumption for the baseline and Q(Delta)
// drivers. `values(s)` gives the behavior action values at s; `learn` is called
// with the episode buffer after each step, and `finish` at episode end.
template <typename Values, typename Learn, typename Finish, typename Metric>
std::vector<EpisodeMetrics> run_episodes(const MdpSpec& mdp, const TrainOptions& opt, Values values,
                                         Learn learn, Finish finish, Metric metric) {
  Rng rng = make_rng(opt.seed);
  std::vector<EpisodeMetrics> metrics;
  metrics.reserve(opt.episodes);
  std::vector<Transition> buffer;
  std::size_t step = 0;
  for (std::size_t ep = 0; ep < opt.episodes; ++ep) {
    buffer.clear();
    StateId s = opt.random_start ? uniform_index(rng, mdp.n_states) : 0;
    double eps = opt.epsilon.at(step);
    ActionId a = epsilon_greedy(values(s), eps, rng);
    double ret = 0.0;
    for (std::size_t t = 0; t < opt.steps_per_episode && !mdp.is_terminal(s); ++t) {
      auto [r, next] = env_step(mdp, s, a, rng);
      ret += r;
      buffer.push_back({s, a, r, next});
      ++step;
      eps = opt.epsilon.at(step);
      const ActionId next_action = epsilon_greedy(values(next), eps, rng);
      learn(buffer, step - 1);
      s = next;
      a = next_action;
    }
    finish(buffer, step);
    metrics.push_back({ep, step, ret, metric(), eps});
  }
  return metrics;
}

}  // namespace detail

/// Baseline tabular Q-learning with epsilon-greedy behavior.
inline std::pair<QTable, std::vector<EpisodeMetrics>> run_q_learning(
    const MdpSpec& mdp, double gamma, double alpha, const TrainOptions& opt,
    const std::optional<QTable>& oracle = std::nullopt, const StepObserver<QTable>& observer = {}) {
  QTable q = QTable::zeros_like(mdp, gamma);
  auto metrics = detail::run_episodes(
      mdp, opt, [&](StateId s) { return q.row(s); },
      [&](const std::vector<Transition>& buf, std::size_t step) {
        q_learning_update(q, buf.back(), alpha);
        if (observer) observer(step, q);
      },
      [](const std::vector<Transition>&, std::size_t) {},
      [&] { return oracle ? sup_distance(q, *oracle) : std::numeric_limits<double>::quiet_NaN(); });
  return {std::move(q), std::move(metrics)};
}

/// Tabular Q(Delta) learning. Behavior is epsilon-greedy on the full
/// reconstruction sum_z W_z. The multi-step variant updates time t - k_max once
/// k_max transitions are buffered and flushes the episode tail with truncated
/// windows.
inline QDeltaResult run_qdelta(const MdpSpec& mdp, const TimescaleSchedule& schedule,
                               const TrainOptions& opt, UpdateVariant variant,
                               MaxMode mode = MaxMode::aggregate,
                               const std::optional<QTable>& oracle = std::nullopt,
                               const StepObserver<DeltaTable>& observer = {}) {
  schedule.validate();
  DeltaTable table = DeltaTable::zeros(schedule, mdp);
  const std::size_t top = schedule.top();
  const std::size_t kmax = variant == UpdateVariant::multi_step ? schedule.max_k() : 1;
  std::vector<double> behavior(mdp.n_actions);

  auto values = [&](StateId s) -> std::span<const double> {
    if (top == 0) return table.component_row(0, s);
    for (ActionId a = 0; a < mdp.n_actions; ++a) behavior[a] = table.partial_sum(top, s, a);
    return behavior;
  };

  auto learn = [&](const std::vector<Transition>& buf, std::size_t step) {
    if (variant == UpdateVariant::single_step) {
      single_step_w_update_inplace(table, buf.back(), mode);
    } else if (buf.size() >= kmax) {
      const std::size_t u = buf.size() - kmax;
      apply_targets_inplace(table, buf[u].state, buf[u].action, multistep_targets(table, buf, u, mode));
    }
    if (observer) observer(step, table);
  };

  auto finish = [&](const std::vector<Transition>& buf, std::size_t) {
    if (variant == UpdateVariant::single_step || buf.empty()) return;
    const std::size_t first = buf.size() >= kmax ? buf.size() - kmax + 1 : 0;
    for (std::size_t u = first; u < buf.size(); ++u)
      apply_targets_inplace(table, buf[u].state, buf[u].action,
                            multistep_targets(table, buf, u, mode, /*truncate=*/true));
  };

  auto metric = [&] {
    return oracle ? sup_distance(table.reconstruct(), *oracle) : std::numeric_limits<double>::quiet_NaN();
  };

  auto metrics = detail::run_episodes(mdp, opt, values, learn, finish, metric);
  return {std::move(table), std::move(metrics)};
}

}  // namespace qdelta
