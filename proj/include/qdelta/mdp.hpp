#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qdelta/error.hpp"
#include "qdelta/rng.hpp"

namespace qdelta {

using StateId = std::size_t;
using ActionId = std::size_t;

enum class NoiseKind { none, uniform_clipped, bernoulli_symmetric };

/// Additive reward noise. Realized rewards are clip(mean + noise, -1, 1).
///  - uniform_clipped: noise ~ U(-param, param)
///  - bernoulli_symmetric: noise = +param or -param with equal probability
struct RewardNoise {
  NoiseKind kind = NoiseKind::none;
  double param = 0.0;

  friend bool operator==(const RewardNoise&, const RewardNoise&) = default;
};

inline double clip_reward(double r) { return std::clamp(r, -1.0, 1.0); }

/// Finite MDP with state-action rewards. Terminal states are absorbing
/// self-loops with zero reward.
struct MdpSpec {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;   // [s][a][s'], row-major
  std::vector<double> mean_reward;  // [s][a]
  RewardNoise noise;
  std::vector<StateId> terminals;   // sorted, unique

  std::size_t n_pairs() const { return n_states * n_actions; }
  std::size_t pair_index(StateId s, ActionId a) const { return s * n_actions + a; }

  double p(StateId s, ActionId a, StateId next) const {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double& p(StateId s, ActionId a, StateId next) {
    return transition[(s * n_actions + a) * n_states + next];
  }
  std::span<const double> row(StateId s, ActionId a) const {
    return {transition.data() + (s * n_actions + a) * n_states, n_states};
  }
  double reward_mean(StateId s, ActionId a) const { return mean_reward[pair_index(s, a)]; }

  bool is_terminal(StateId s) const {
    return std::binary_search(terminals.begin(), terminals.end(), s);
  }

  /// E[realized reward], which differs from the mean when noise hits the clip.
  double expected_reward(StateId s, ActionId a) const;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  friend bool operator==(const MdpSpec&, const MdpSpec&) = default;
};

namespace detail {

// Antiderivative of clip(t) on [-1, 1], anchored at 0.
inline double clip_antiderivative(double x) {
  if (x > 1.0) return x - 0.5;
  if (x < -1.0) return -x - 0.5;
  return 0.5 * x * x;
}

}  // namespace detail

inline double MdpSpec::expected_reward(StateId s, ActionId a) const {
  if (is_terminal(s)) return 0.0;
  const double m = reward_mean(s, a);
  switch (noise.kind) {
    case NoiseKind::none:
      return m;
    case NoiseKind::uniform_clipped: {
      const double w = noise.param;
      if (w == 0.0) return clip_reward(m);
      return (detail::clip_antiderivative(m + w) - detail::clip_antiderivative(m - w)) / (2.0 * w);
    }
    case NoiseKind::bernoulli_symmetric:
      return 0.5 * (clip_reward(m + noise.param) + clip_reward(m - noise.param));
  }
  return m;
}

inline void MdpSpec::validate() const {
  using detail::require;
  require(n_states >= 1, "n_states must be >= 1");
  require(n_actions >= 1, "n_actions must be >= 1");
  require(transition.size() == n_states * n_actions * n_states,
          "transition tensor has wrong size");
  require(mean_reward.size() == n_states * n_actions, "mean_reward table has wrong size");
  for (StateId s = 0; s < n_states; ++s) {
    for (ActionId a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (double x : row(s, a)) {
        require(std::isfinite(x) && x >= 0.0, "transition probabilities must be finite and >= 0");
        sum += x;
      }
      require(std::abs(sum - 1.0) <= 1e-12,
              "transition row (" + std::to_string(s) + "," + std::to_string(a) +
                  ") does not sum to 1");
      const double r = reward_mean(s, a);
      require(std::isfinite(r) && r >= -1.0 && r <= 1.0, "mean rewards must lie in [-1, 1]");
    }
  }
  switch (noise.kind) {
    case NoiseKind::none: break;
    case NoiseKind::uniform_clipped:
      require(noise.param >= 0.0 && std::isfinite(noise.param), "uniform noise width must be >= 0");
      break;
    case NoiseKind::bernoulli_symmetric:
      require(noise.param >= 0.0 && noise.param <= 1.0, "bernoulli noise amplitude must lie in [0, 1]");
      break;
  }
  require(std::is_sorted(terminals.begin(), terminals.end()) &&
              std::adjacent_find(terminals.begin(), terminals.end()) == terminals.end(),
          "terminals must be sorted and unique");
  for (StateId t : terminals) {
    require(t < n_states, "terminal state out of range");
    for (ActionId a = 0; a < n_actions; ++a) {
      require(p(t, a, t) == 1.0, "terminal states must be absorbing self-loops");
      require(reward_mean(t, a) == 0.0, "terminal states must have zero reward");
    }
  }
}

/// Draws one realized reward for (s, a).
inline double sample_reward(const MdpSpec& mdp, StateId s, ActionId a, Rng& rng) {
  if (mdp.is_terminal(s)) return 0.0;
  const double m = mdp.reward_mean(s, a);
  switch (mdp.noise.kind) {
    case NoiseKind::none:
      return clip_reward(m);
    case NoiseKind::uniform_clipped:
      return clip_reward(m + uniform_real(rng, -mdp.noise.param, mdp.noise.param));
    case NoiseKind::bernoulli_symmetric:
      return clip_reward(bernoulli(rng, 0.5) ? m + mdp.noise.param : m - mdp.noise.param);
  }
  return m;
}

inline StateId sample_next_state(const MdpSpec& mdp, StateId s, ActionId a, Rng& rng) {
  const auto row = mdp.row(s, a);
  const double u = uniform01(rng);
  double cum = 0.0;
  StateId last_positive = 0;
  for (StateId next = 0; next < row.size(); ++next) {
    if (row[next] <= 0.0) continue;
    cum += row[next];
    last_positive = next;
    if (u < cum) return next;
  }
  return last_positive;
}

/// Reward is drawn before the successor; every sampler in the library keeps this order.
inline std::pair<double, StateId> env_step(const MdpSpec& mdp, StateId s, ActionId a, Rng& rng) {
  const double r = sample_reward(mdp, s, a, rng);
  const StateId next = sample_next_state(mdp, s, a, rng);
  return {r, next};
}

// ---------------------------------------------------------------------------
// Generators

/// Ring of `n_states` states. Action 0 moves clockwise (s -> s+1 mod n),
/// action 1 stays; each has its intended effect with probability 1 - slip_prob
/// and the other action's effect with probability slip_prob.
/// `reward_means` is indexed [s][a] with two actions per state.
inline MdpSpec build_ring_mdp(std::size_t n_states, double slip_prob,
                              const std::vector<double>& reward_means, RewardNoise noise = {},
                              std::vector<StateId> terminals = {}) {
  detail::require(n_states >= 2, "ring needs at least 2 states");
  detail::require(slip_prob >= 0.0 && slip_prob <= 1.0, "slip_prob must lie in [0, 1]");
  detail::require(reward_means.size() == n_states * 2, "ring reward table must be n_states x 2");
  for (double r : reward_means)
    detail::require(r >= -1.0 && r <= 1.0, "ring reward means must lie in [-1, 1]");

  MdpSpec m;
  m.n_states = n_states;
  m.n_actions = 2;
  m.transition.assign(n_states * 2 * n_states, 0.0);
  m.mean_reward = reward_means;
  m.noise = noise;
  std::sort(terminals.begin(), terminals.end());
  terminals.erase(std::unique(terminals.begin(), terminals.end()), terminals.end());
  m.terminals = std::move(terminals);

  for (StateId s = 0; s < n_states; ++s) {
    const StateId cw = (s + 1) % n_states;
    if (m.is_terminal(s)) {
      m.p(s, 0, s) = 1.0;
      m.p(s, 1, s) = 1.0;
      m.mean_reward[m.pair_index(s, 0)] = 0.0;
      m.mean_reward[m.pair_index(s, 1)] = 0.0;
      continue;
    }
    m.p(s, 0, cw) += 1.0 - slip_prob;
    m.p(s, 0, s) += slip_prob;
    m.p(s, 1, s) += 1.0 - slip_prob;
    m.p(s, 1, cw) += slip_prob;
  }
  m.validate();
  return m;
}

/// Ring reward table paying `value` only for the clockwise action out of `from_state`.
inline std::vector<double> ring_single_arc_rewards(std::size_t n_states, StateId from_state,
                                                   double value) {
  std::vector<double> r(n_states * 2, 0.0);
  r.at(from_state * 2 + 0) = value;
  return r;
}

/// Ring reward table with the same mean for every clockwise / stay action.
inline std::vector<double> ring_dense_rewards(std::size_t n_states, double clockwise, double stay) {
  std::vector<double> r(n_states * 2);
  for (std::size_t s = 0; s < n_states; ++s) {
    r[2 * s] = clockwise;
    r[2 * s + 1] = stay;
  }
  return r;
}

/// Seeded random MDP: each transition row is a normalized vector of
/// exponential draws (a flat Dirichlet sample); mean rewards are uniform in
/// [-reward_scale, reward_scale].
inline MdpSpec build_random_mdp(std::size_t n_states, std::size_t n_actions, std::uint64_t seed,
                                double reward_scale = 1.0) {
  detail::require(n_states >= 1 && n_actions >= 1, "random MDP sizes must be >= 1");
  detail::require(reward_scale > 0.0 && reward_scale <= 1.0, "reward_scale must lie in (0, 1]");
  Rng rng = make_rng(seed);
  MdpSpec m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.transition.resize(n_states * n_actions * n_states);
  m.mean_reward.resize(n_states * n_actions);
  for (StateId s = 0; s < n_states; ++s) {
    for (ActionId a = 0; a < n_actions; ++a) {
      double* row = m.transition.data() + (s * n_actions + a) * n_states;
      double sum = 0.0;
      for (StateId j = 0; j < n_states; ++j) {
        row[j] = -std::log(uniform01_open_low(rng)) + 1e-12;
        sum += row[j];
      }
      // Normalize, then push the rounding residue onto the largest entry.
      double acc = 0.0;
      StateId big = 0;
      for (StateId j = 0; j < n_states; ++j) {
        row[j] /= sum;
        acc += row[j];
        if (row[j] > row[big]) big = j;
      }
      row[big] += 1.0 - acc;
    }
  }
  for (auto& r : m.mean_reward) r = uniform_real(rng, -reward_scale, reward_scale);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Policies and trajectories

struct Transition {
  StateId state = 0;
  ActionId action = 0;
  double reward = 0.0;
  StateId next_state = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Trajectory {
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;
  std::string policy_tag;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  const Transition& operator[](std::size_t i) const { return transitions[i]; }
};

/// Action-selection rule; may consume randomness from the supplied engine.
using Policy = std::function<ActionId(StateId, Rng&)>;

/// Index of the largest entry; ties go to the lowest index.
inline ActionId argmax(std::span<const double> values) {
  ActionId best = 0;
  for (ActionId i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

inline double max_value(std::span<const double> values) { return values[argmax(values)]; }

inline ActionId epsilon_greedy(std::span<const double> q_values, double epsilon, Rng& rng) {
  detail::require(!q_values.empty(), "epsilon_greedy needs at least one action");
  detail::require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
  if (epsilon > 0.0 && uniform01(rng) < epsilon) return uniform_index(rng, q_values.size());
  return argmax(q_values);
}

inline Policy constant_policy(ActionId a) {
  return [a](StateId, Rng&) { return a; };
}

inline Policy uniform_random_policy(std::size_t n_actions) {
  return [n_actions](StateId, Rng& rng) { return uniform_index(rng, n_actions); };
}

/// Rolls out `horizon` steps from `start`, stopping early after entering a
/// terminal state.
inline Trajectory sample_trajectory(const MdpSpec& mdp, const Policy& policy, std::size_t horizon,
                                    std::uint64_t seed, StateId start = 0,
                                    std::string policy_tag = {}) {
  Trajectory traj;
  traj.seed = seed;
  traj.policy_tag = std::move(policy_tag);
  traj.transitions.reserve(horizon);
  Rng rng = make_rng(seed);
  StateId s = start;
  for (std::size_t t = 0; t < horizon; ++t) {
    if (mdp.is_terminal(s)) break;
    const ActionId a = policy(s, rng);
    auto [r, next] = env_step(mdp, s, a, rng);
    traj.transitions.push_back({s, a, r, next});
    s = next;
  }
  return traj;
}

// ---------------------------------------------------------------------------
// JSON

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::uniform_clipped: return "uniform_clipped";
    case NoiseKind::bernoulli_symmetric: return "bernoulli_symmetric";
  }
  return "none";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "uniform_clipped") return NoiseKind::uniform_clipped;
  if (s == "bernoulli_symmetric") return NoiseKind::bernoulli_symmetric;
  throw ConfigError("unknown noise kind '" + s + "'");
}

inline nlohmann::json to_json(const RewardNoise& n) {
  return {{"kind", to_string(n.kind)}, {"param", n.param}};
}

inline RewardNoise noise_from_json(const nlohmann::json& j) {
  RewardNoise n;
  n.kind = noise_kind_from_string(j.at("kind").get<std::string>());
  n.param = j.value("param", 0.0);
  return n;
}

inline nlohmann::json to_json(const MdpSpec& m) {
  nlohmann::json tr = nlohmann::json::array();
  nlohmann::json rw = nlohmann::json::array();
  for (StateId s = 0; s < m.n_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    nlohmann::json rewards = nlohmann::json::array();
    for (ActionId a = 0; a < m.n_actions; ++a) {
      auto row = m.row(s, a);
      per_action.push_back(std::vector<double>(row.begin(), row.end()));
      rewards.push_back(m.reward_mean(s, a));
    }
    tr.push_back(std::move(per_action));
    rw.push_back(std::move(rewards));
  }
  return {{"n_states", m.n_states}, {"n_actions", m.n_actions}, {"transition", std::move(tr)},
          {"mean_reward", std::move(rw)}, {"noise", to_json(m.noise)},
          {"terminals", m.terminals}};
}

/// Parses and validates an MdpSpec document.
inline MdpSpec mdp_from_json(const nlohmann::json& j) {
  try {
    MdpSpec m;
    m.n_states = j.at("n_states").get<std::size_t>();
    m.n_actions = j.at("n_actions").get<std::size_t>();
    const auto& tr = j.at("transition");
    const auto& rw = j.at("mean_reward");
    detail::require(tr.size() == m.n_states && rw.size() == m.n_states,
                    "transition / mean_reward must have n_states rows");
    for (StateId s = 0; s < m.n_states; ++s) {
      detail::require(tr[s].size() == m.n_actions && rw[s].size() == m.n_actions,
                      "transition / mean_reward rows must have n_actions entries");
      for (ActionId a = 0; a < m.n_actions; ++a) {
        detail::require(tr[s][a].size() == m.n_states, "transition rows must have n_states entries");
        for (StateId n = 0; n < m.n_states; ++n) m.transition.push_back(tr[s][a][n].get<double>());
        m.mean_reward.push_back(rw[s][a].get<double>());
      }
    }
    if (j.contains("noise")) m.noise = noise_from_json(j.at("noise"));
    if (j.contains("terminals")) m.terminals = j.at("terminals").get<std::vector<StateId>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed MDP document: ") + e.what());
  }
}

}  // namespace qdelta
