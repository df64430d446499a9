#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "qdelta/delta_table.hpp"
#include "qdelta/error.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/parallel.hpp"
#include "qdelta/rng.hpp"

namespace qdelta {

/// sqrt(2 ln(2k / delta) / n): with probability 1 - delta every one of k
/// empirical reward means over n samples in [-1, 1] is within this of its mean.
inline double hoeffding_epsilon(std::size_t k, double delta, double n) {
  detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  detail::require(k >= 1, "k must be >= 1");
  detail::require(n > 0.0, "n must be positive");
  return std::sqrt(2.0 * std::log(2.0 * static_cast<double>(k) / delta) / n);
}

inline double ipow(double base, std::size_t e) {
  double r = 1.0;
  for (std::size_t i = 0; i < e; ++i) r *= base;
  return r;
}

/// eps * (1 - gamma^k) / (1 - gamma) + gamma^k * delta_prev
inline double thm3_bound(double epsilon, double gamma, std::size_t k, double delta_prev) {
  detail::require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  const double gk = ipow(gamma, k);
  return epsilon * (1.0 - gk) / (1.0 - gamma) + gk * delta_prev;
}

/// Additive pieces of the multi-scale phased error bound.
struct Thm4Bound {
  double variance_term = 0.0;       ///< eps (1 - gamma^k) / (1 - gamma)
  double variance_reduction = 0.0;  ///< eps sum_z (g_z^{k_{z+1}} - g_z^{k_z}) / (1 - g_z), <= 0
  double bias_introduction = 0.0;   ///< sum_z (g_z^{k_z} - g_z^{k_{z+1}}) sum_{u<=z} D_u, >= 0
  double bootstrap_bias = 0.0;      ///< gamma^k sum_z D_z
  double total = 0.0;
};

inline Thm4Bound thm4_bound(double epsilon, const TimescaleSchedule& schedule,
                            std::span<const double> delta_prev) {
  schedule.validate(/*require_monotone_k=*/true);
  detail::require(delta_prev.size() == schedule.size(), "delta_prev needs one entry per scale");
  const auto& g = schedule.gammas;
  const auto& k = schedule.k;
  const std::size_t top = schedule.top();
  Thm4Bound b;
  const double gk = ipow(g[top], k[top]);
  b.variance_term = epsilon * (1.0 - gk) / (1.0 - g[top]);
  double reduction = 0.0;
  double prefix = 0.0;
  for (std::size_t z = 0; z < top; ++z) {
    const double lo = ipow(g[z], k[z]);
    const double hi = ipow(g[z], k[z + 1]);
    reduction += (hi - lo) / (1.0 - g[z]);
    prefix += delta_prev[z];
    b.bias_introduction += (lo - hi) * prefix;
  }
  b.variance_reduction = epsilon * reduction;
  double sum_prev = 0.0;
  for (double d : delta_prev) sum_prev += d;
  b.bootstrap_bias = gk * sum_prev;
  b.total = b.variance_term + b.variance_reduction + b.bias_introduction + b.bootstrap_bias;
  return b;
}

/// k_z = ceil(1 / (1 - gamma_z)), with a 1e-9 allowance so exact reciprocals
/// (gamma = 0.9 -> 10) are not pushed up by rounding.
inline std::vector<std::size_t> k_schedule_from_gammas(std::span<const double> gammas) {
  std::vector<std::size_t> k;
  k.reserve(gammas.size());
  for (double g : gammas) {
    detail::require(g >= 0.0 && g < 1.0, "gammas must lie in [0, 1)");
    const double x = 1.0 / (1.0 - g);
    std::size_t kz = static_cast<std::size_t>(std::ceil(x - 1e-9));
    kz = std::max<std::size_t>(kz, 1);
    if (!k.empty()) kz = std::max(kz, k.back());
    k.push_back(kz);
  }
  return k;
}

// ---------------------------------------------------------------------------
// Phased updates

/// Policy followed after the pinned first action of each phased rollout.
enum class PhasedExploration {
  uniform_random,
  greedy,  ///< greedy w.r.t. the previous phase's (aggregate) estimate
};

/// Final bootstrap of the per-scale update.
enum class PhasedBootstrap {
  sampled_action,  ///< W_z(s_k, a_k) at the rollout's k-th action
  max_action,      ///< max_a W_z(s_k, a)
};

struct PhasedOptions {
  PhasedExploration exploration = PhasedExploration::uniform_random;
  PhasedBootstrap bootstrap = PhasedBootstrap::sampled_action;
};

/// n rollouts of `length` steps from a pinned (s, a). actions has length+1
/// entries: the last one is the action the policy would take at s_length.
struct Rollout {
  std::vector<double> rewards;
  std::vector<StateId> states;
  std::vector<ActionId> actions;
};

namespace detail {

template <typename GreedyRow>
Rollout phased_rollout(const MdpSpec& mdp, StateId s, ActionId a, std::size_t length,
                       PhasedExploration exploration, GreedyRow&& greedy, Rng& rng) {
  Rollout r;
  r.rewards.reserve(length);
  r.states.reserve(length + 1);
  r.actions.reserve(length + 1);
  r.states.push_back(s);
  r.actions.push_back(a);
  for (std::size_t i = 0; i < length; ++i) {
    auto [rew, next] = env_step(mdp, r.states.back(), r.actions.back(), rng);
    r.rewards.push_back(rew);
    r.states.push_back(next);
    r.actions.push_back(exploration == PhasedExploration::uniform_random ? uniform_index(rng, mdp.n_actions)
                                                                         : greedy(next));
  }
  return r;
}

inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t pair) {
  return derive_seed(seed, "phased-pair", pair);
}

}  // namespace detail

/// One phase of k-step Q-learning: each Q(s, a) is replaced by the mean over
/// n rollouts of sum_{i<k} gamma^i r_i + gamma^k max_a q_prev(s_k, a).
inline QTable phased_q_update(const MdpSpec& mdp, const QTable& q_prev, std::size_t n, std::size_t k,
                              double gamma, std::uint64_t seed, const PhasedOptions& opt = {}) {
  detail::require(n >= 1 && k >= 1, "phased update needs n >= 1 and k >= 1");
  detail::require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  QTable out = QTable::zeros_like(mdp, gamma);
  auto greedy = [&](StateId s) { return q_prev.greedy(s); };
  for (StateId s = 0; s < mdp.n_states; ++s) {
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      Rng rng = make_rng(detail::pair_seed(seed, mdp.pair_index(s, a)));
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const Rollout r = detail::phased_rollout(mdp, s, a, k, opt.exploration, greedy, rng);
        double ret = 0.0, pw = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
          ret += pw * r.rewards[i];
          pw *= gamma;
        }
        acc += ret + pw * q_prev.max_at(r.states[k]);
      }
      out.at(s, a) = acc / static_cast<double>(n);
    }
  }
  return out;
}

/// One phase of the multi-scale update. All scales read the same n rollouts
/// (of length max_z k_z) per (s, a); scale 0 is the phased Q update at
/// (gamma_0, k_0) and scale z >= 1 averages
///   sum_{i=1}^{k_z-1} (g_z^i - g_{z-1}^i) r_i
///     + (g_z^{k_z} - g_{z-1}^{k_z}) max_a Qhat_{z-1}(s_{k_z}, a)
///     + g_z^{k_z} W_z(s_{k_z}, a_{k_z}).
inline DeltaTable phased_w_update(const MdpSpec& mdp, const DeltaTable& prev, std::size_t n,
                                  std::uint64_t seed, const PhasedOptions& opt = {}) {
  detail::require(n >= 1, "phased update needs n >= 1");
  const auto& sched = prev.schedule();
  sched.validate();
  const auto& g = sched.gammas;
  const std::size_t length = sched.max_k();
  const std::size_t top = sched.top();
  DeltaTable out(sched, prev.n_states(), prev.n_actions());

  // Per-state lookups of the previous estimates.
  std::vector<std::vector<double>> lower_max(sched.size(), std::vector<double>(mdp.n_states));
  std::vector<ActionId> greedy_action(mdp.n_states);
  for (StateId s = 0; s < mdp.n_states; ++s) {
    for (std::size_t z = 0; z <= top; ++z) lower_max[z][s] = prev.partial_sum_max(z, s);
    greedy_action[s] = argmax(prev.partial_sum_row(top, s));
  }
  auto greedy = [&](StateId s) { return greedy_action[s]; };

  std::vector<double> acc(sched.size());
  for (StateId s = 0; s < mdp.n_states; ++s) {
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      Rng rng = make_rng(detail::pair_seed(seed, mdp.pair_index(s, a)));
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const Rollout r = detail::phased_rollout(mdp, s, a, length, opt.exploration, greedy, rng);
        // Scale 0: plain k_0-step return.
        {
          const std::size_t k = sched.k[0];
          double ret = 0.0, pw = 1.0;
          for (std::size_t i = 0; i < k; ++i) {
            ret += pw * r.rewards[i];
            pw *= g[0];
          }
          acc[0] += ret + pw * prev.component_max(0, r.states[k]);
        }
        for (std::size_t z = 1; z <= top; ++z) {
          const std::size_t k = sched.k[z];
          double ret = 0.0, pw = g[z], pw_lo = g[z - 1];
          for (std::size_t i = 1; i < k; ++i) {
            ret += (pw - pw_lo) * r.rewards[i];
            pw *= g[z];
            pw_lo *= g[z - 1];
          }
          const StateId sk = r.states[k];
          const double boot = opt.bootstrap == PhasedBootstrap::sampled_action
                                  ? prev.at(z, sk, r.actions[k])
                                  : prev.component_max(z, sk);
          acc[z] += ret + (pw - pw_lo) * lower_max[z - 1][sk] + pw * boot;
        }
      }
      for (std::size_t z = 0; z <= top; ++z) out.at(z, s, a) = acc[z] / static_cast<double>(n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bound verification harness

/// max_s | max_a Q(s, a) - max_a Q*(s, a) |
inline double greedy_value_error(const QTable& q, const QTable& truth) {
  double e = 0.0;
  for (StateId s = 0; s < q.n_states; ++s) e = std::max(e, std::abs(q.max_at(s) - truth.max_at(s)));
  return e;
}

struct PhaseRecord {
  std::size_t replicate = 0;
  std::size_t phase = 0;
  double epsilon = 0.0;
  double err_q = 0.0;
  std::vector<double> err_w;
  double bound3 = std::numeric_limits<double>::quiet_NaN();
  Thm4Bound bound4{};
  bool violated3 = false;
  bool violated4 = false;
  bool has_bounds = false;  ///< false for phase 0 (initialization)

  double err_w_sum() const { return std::accumulate(err_w.begin(), err_w.end(), 0.0); }
};

struct PhasedExperimentOptions {
  std::size_t n = 100;
  std::size_t phases = 20;
  std::size_t replicates = 1;
  double delta = 0.1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  PhasedOptions phased;
};

struct PhasedSummary {
  std::vector<double> violation_freq3;  ///< per phase (index 0 = initialization, always 0)
  std::vector<double> violation_freq4;
  double max_freq3 = 0.0;
  double max_freq4 = 0.0;
  bool sign_structure_ok = true;  ///< variance_reduction <= 0 and bias_introduction >= 0 everywhere
};

struct PhasedExperimentResult {
  std::vector<PhaseRecord> records;  ///< replicate-major, phase-minor
  PhasedSummary summary;
  double epsilon = 0.0;
  std::size_t k = 0;      ///< steps of the single-estimator run (k_Z)
  double gamma = 0.0;     ///< discount of the single-estimator run (gamma_Z)
};

/// Runs `replicates` independent sequences of phased updates from zero tables
/// and checks both error bounds phase by phase. Bounds use the previous
/// phase's empirical errors. The single estimator runs at (gamma_Z, k_Z).
inline PhasedExperimentResult run_phased_experiment(const MdpSpec& mdp, const TimescaleSchedule& schedule,
                                                    const PhasedExperimentOptions& opt) {
  schedule.validate(/*require_monotone_k=*/true);
  detail::require(opt.n >= 1, "n must be >= 1");
  const std::size_t top = schedule.top();
  PhasedExperimentResult res;
  res.gamma = schedule.gammas[top];
  res.k = schedule.k[top];
  res.epsilon = hoeffding_epsilon(res.k, opt.delta, static_cast<double>(opt.n));

  const QTable q_star = value_iteration(mdp, res.gamma);
  const auto w_star = exact_delta_ladder(mdp, schedule.gammas);

  auto errors_w = [&](const DeltaTable& t) {
    std::vector<double> e(schedule.size());
    for (std::size_t z = 0; z <= top; ++z) e[z] = sup_distance(t.component(z), w_star[z]);
    return e;
  };

  std::vector<std::vector<PhaseRecord>> per_rep(opt.replicates);
  parallel_for(opt.replicates, opt.workers, [&](std::size_t rep) {
    const std::uint64_t rep_seed = derive_seed(opt.seed, "replicate", rep);
    QTable q = QTable::zeros_like(mdp, res.gamma);
    DeltaTable w = DeltaTable::zeros(schedule, mdp);
    auto& out = per_rep[rep];
    out.reserve(opt.phases + 1);
    PhaseRecord init;
    init.replicate = rep;
    init.phase = 0;
    init.epsilon = res.epsilon;
    init.err_q = greedy_value_error(q, q_star);
    init.err_w = errors_w(w);
    out.push_back(init);
    for (std::size_t t = 1; t <= opt.phases; ++t) {
      const std::uint64_t phase_seed = derive_seed(rep_seed, "phase", t);
      q = phased_q_update(mdp, q, opt.n, res.k, res.gamma, phase_seed, opt.phased);
      w = phased_w_update(mdp, w, opt.n, phase_seed, opt.phased);
      const PhaseRecord& prev = out.back();
      PhaseRecord r;
      r.replicate = rep;
      r.phase = t;
      r.epsilon = res.epsilon;
      r.err_q = greedy_value_error(q, q_star);
      r.err_w = errors_w(w);
      r.bound3 = thm3_bound(res.epsilon, res.gamma, res.k, prev.err_q);
      r.bound4 = thm4_bound(res.epsilon, schedule, prev.err_w);
      r.violated3 = r.err_q > r.bound3;
      r.violated4 = r.err_w_sum() > r.bound4.total;
      r.has_bounds = true;
      out.push_back(std::move(r));
    }
  });

  // Aggregate in replicate order.
  PhasedSummary& sum = res.summary;
  sum.violation_freq3.assign(opt.phases + 1, 0.0);
  sum.violation_freq4.assign(opt.phases + 1, 0.0);
  for (auto& recs : per_rep) {
    for (auto& r : recs) {
      if (r.has_bounds) {
        sum.violation_freq3[r.phase] += r.violated3 ? 1.0 : 0.0;
        sum.violation_freq4[r.phase] += r.violated4 ? 1.0 : 0.0;
        if (r.bound4.variance_reduction > 0.0 || r.bound4.bias_introduction < 0.0) sum.sign_structure_ok = false;
      }
      res.records.push_back(std::move(r));
    }
  }
  const double reps = static_cast<double>(std::max<std::size_t>(opt.replicates, 1));
  for (std::size_t t = 0; t <= opt.phases; ++t) {
    sum.violation_freq3[t] /= reps;
    sum.violation_freq4[t] /= reps;
    sum.max_freq3 = std::max(sum.max_freq3, sum.violation_freq3[t]);
    sum.max_freq4 = std::max(sum.max_freq4, sum.violation_freq4[t]);
  }
  return res;
}

}  // namespace qdelta
