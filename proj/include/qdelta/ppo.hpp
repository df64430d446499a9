#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qdelta/delta_table.hpp"
#include "qdelta/error.hpp"
#include "qdelta/lambda.hpp"
#include "qdelta/linear.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/parallel.hpp"
#include "qdelta/rng.hpp"

namespace qdelta {

/// Softmax policy over <omega_a, x(s)> / temperature, with state features x.
class ActorModel {
 public:
  ActorModel() = default;
  ActorModel(std::vector<double> state_features, std::size_t n_states, std::size_t n_actions,
             double temperature = 1.0)
      : n_states_(n_states), n_actions_(n_actions), temperature_(temperature),
        x_(std::move(state_features)) {
    detail::require(n_states >= 1 && n_actions >= 1, "actor needs at least one state and action");
    detail::require(temperature > 0.0, "actor temperature must be positive");
    detail::require(x_.size() % n_states == 0 && !x_.empty(), "state feature table has the wrong size");
    dim_ = x_.size() / n_states;
    omega_.assign(n_actions * dim_, 0.0);
  }

  /// One-hot state features: a tabular softmax policy.
  static ActorModel tabular(std::size_t n_states, std::size_t n_actions, double temperature = 1.0) {
    std::vector<double> x(n_states * n_states, 0.0);
    for (std::size_t s = 0; s < n_states; ++s) x[s * n_states + s] = 1.0;
    return ActorModel(std::move(x), n_states, n_actions, temperature);
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  std::size_t dim() const { return dim_; }
  double temperature() const { return temperature_; }
  std::vector<double>& omega() { return omega_; }
  const std::vector<double>& omega() const { return omega_; }

  std::span<const double> state_features(StateId s) const { return {x_.data() + s * dim_, dim_}; }

  std::vector<double> probabilities(StateId s) const {
    const auto x = state_features(s);
    std::vector<double> logits(n_actions_);
    for (ActionId a = 0; a < n_actions_; ++a)
      logits[a] = dot({omega_.data() + a * dim_, dim_}, x) / temperature_;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - m);
      z += l;
    }
    for (auto& l : logits) l /= z;
    return logits;
  }

  double probability(StateId s, ActionId a) const { return probabilities(s)[a]; }

  ActionId sample(StateId s, Rng& rng) const {
    const auto p = probabilities(s);
    const double u = uniform01(rng);
    double c = 0.0;
    for (ActionId a = 0; a + 1 < n_actions_; ++a) {
      c += p[a];
      if (u < c) return a;
    }
    return n_actions_ - 1;
  }

  /// omega += scale * grad log pi(a | s)
  void add_log_prob_gradient(StateId s, ActionId a, double scale) {
    const auto p = probabilities(s);
    const auto x = state_features(s);
    for (ActionId b = 0; b < n_actions_; ++b) {
      const double coef = scale * ((b == a ? 1.0 : 0.0) - p[b]) / temperature_;
      for (std::size_t i = 0; i < dim_; ++i) omega_[b * dim_ + i] += coef * x[i];
    }
  }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::size_t dim_ = 0;
  double temperature_ = 1.0;
  std::vector<double> x_;
  std::vector<double> omega_;
};

// ---------------------------------------------------------------------------
// Advantage estimates

struct AdvantageSeries {
  std::vector<double> a_delta;

  std::size_t horizon() const { return a_delta.size(); }
};

/// Baseline GAE over a single action-value table.
inline AdvantageSeries gae(const QTable& q, const Trajectory& traj, double lambda, std::size_t truncation) {
  detail::require(lambda >= 0.0 && lambda * q.gamma < 1.0, "gae needs lambda * gamma < 1");
  const std::vector<double> zero(traj.size(), 0.0);
  return {truncated_lambda_sum(zero, td_errors_q(q, traj), lambda * q.gamma, truncation)};
}

enum class AdvantageWeighting {
  top_scale,  ///< aggregate TD error, decay lambda_Z * gamma_Z
  per_scale,  ///< sum over z of per-scale TD errors, each with decay lambda_z * gamma_z
};

/// GAE on the aggregate critic sum_z W_z, with per-state maxima taken per
/// component: delta_t = r + gamma_Z sum_z max_a W_z(s', a) - sum_z W_z(s, a).
/// What the TD error subtracts at s_t. `action_value` is the aggregate critic
/// at (s_t, a_t); `state_value` uses sum_z max_a W_z(s_t, a), the same form as
/// the bootstrap, which turns delta into an advantage of a_t over the greedy
/// action instead of a Bellman residual.
enum class AdvantageBaseline { action_value, state_value };

inline const char* to_string(AdvantageBaseline b) {
  return b == AdvantageBaseline::action_value ? "action_value" : "state_value";
}

inline AdvantageSeries gae_delta(const DeltaTable& table, const Trajectory& traj, std::size_t truncation,
                                 AdvantageWeighting weighting = AdvantageWeighting::top_scale,
                                 AdvantageBaseline baseline = AdvantageBaseline::action_value) {
  const auto& sched = table.schedule();
  const std::size_t top = table.scales() - 1;
  if (weighting == AdvantageWeighting::per_scale) {
    detail::require(baseline == AdvantageBaseline::action_value,
                    "per_scale weighting supports only the action_value baseline");
    const auto series = td_errors_delta(table, traj);
    const std::vector<double> zero(traj.size(), 0.0);
    AdvantageSeries out{std::vector<double>(traj.size(), 0.0)};
    for (std::size_t z = 0; z <= top; ++z) {
      const double decay = sched.lambdas[z] * sched.gammas[z];
      detail::require(decay < 1.0, "lambda_z * gamma_z must be < 1");
      const auto part = truncated_lambda_sum(zero, series.delta[z], decay, truncation);
      for (std::size_t t = 0; t < part.size(); ++t) out.a_delta[t] += part[t];
    }
    return out;
  }
  const double decay = sched.lambdas[top] * sched.gammas[top];
  detail::require(decay < 1.0, "lambda_Z * gamma_Z must be < 1");
  std::vector<double> deltas(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const auto& tr = traj[t];
    const bool sv = baseline == AdvantageBaseline::state_value;
    double boot = table.component_max(0, tr.next_state);
    double here = sv ? table.component_max(0, tr.state) : table.at(0, tr.state, tr.action);
    for (std::size_t z = 1; z <= top; ++z) {
      boot += table.component_max(z, tr.next_state);
      here += sv ? table.component_max(z, tr.state) : table.at(z, tr.state, tr.action);
    }
    deltas[t] = tr.reward + sched.gammas[top] * boot - here;
  }
  const std::vector<double> zero(traj.size(), 0.0);
  return {truncated_lambda_sum(zero, deltas, decay, truncation)};
}

// ---------------------------------------------------------------------------
// Policy objective

enum class RatioMode { paper_q_ratio, policy_likelihood };

inline const char* to_string(RatioMode m) {
  return m == RatioMode::paper_q_ratio ? "paper_q_ratio" : "policy_likelihood";
}

/// Raised when the value-based ratio's denominator is too close to zero; the
/// caller is expected to skip the sample.
class DegenerateRatio : public NumericError {
 public:
  using NumericError::NumericError;
};

inline constexpr double kRatioDenominatorFloor = 1e-8;

/// paper_q_ratio: max_a q_new(s, a) / q_old(s, a).
/// policy_likelihood: pi_new(a | s) / pi_old(a | s).
inline double policy_ratio(const QTable* q_new, const QTable* q_old, StateId s, ActionId a, RatioMode mode,
                           const ActorModel* actor_new = nullptr, const ActorModel* actor_old = nullptr) {
  if (mode == RatioMode::paper_q_ratio) {
    detail::require(q_new && q_old, "paper_q_ratio needs both critics");
    const double den = q_old->at(s, a);
    if (!(std::abs(den) >= kRatioDenominatorFloor))
      throw DegenerateRatio("degenerate policy ratio: |Q_old(s,a)| < 1e-8");
    return q_new->max_at(s) / den;
  }
  detail::require(actor_new && actor_old, "policy_likelihood needs both actors");
  const double den = actor_old->probability(s, a);
  if (!(den >= kRatioDenominatorFloor)) throw DegenerateRatio("degenerate policy ratio: pi_old(a|s) < 1e-8");
  return actor_new->probability(s, a) / den;
}

/// min(rho A, clip(rho, 1 - eps, 1 + eps) A)
inline double clipped_objective(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

/// True when the unclipped branch of the objective is the active one, so the
/// gradient flows through rho.
inline bool clip_inactive(double ratio, double advantage, double clip_eps) {
  if (advantage > 0.0) return ratio <= 1.0 + clip_eps;
  if (advantage < 0.0) return ratio >= 1.0 - clip_eps;
  return true;
}

inline double critic_loss(double predicted, double target) {
  const double d = predicted - target;
  return d * d;
}

inline double critic_loss(std::span<const double> predicted, std::span<const double> target) {
  detail::require(predicted.size() == target.size() && !predicted.empty(),
                  "critic_loss needs equal-length non-empty batches");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc += critic_loss(predicted[i], target[i]);
  return acc / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvaluationSummary {
  std::vector<double> returns;
  double mean = 0.0;
  double stddev = 0.0;  ///< sample standard deviation
};

inline EvaluationSummary summarize(std::vector<double> returns) {
  EvaluationSummary e;
  e.returns = std::move(returns);
  const double n = static_cast<double>(e.returns.size());
  if (e.returns.empty()) return e;
  for (double r : e.returns) e.mean += r;
  e.mean /= n;
  if (e.returns.size() > 1) {
    double ss = 0.0;
    for (double r : e.returns) ss += (r - e.mean) * (r - e.mean);
    e.stddev = std::sqrt(ss / (n - 1.0));
  }
  return e;
}

/// Undiscounted returns of stochastic actor rollouts from uniform start
/// states. Episode i uses its own derived seed, so results do not depend on
/// the worker count.
inline EvaluationSummary evaluate_policy(const MdpSpec& mdp, const ActorModel& actor, std::size_t episodes,
                                         std::size_t horizon, std::uint64_t seed, std::size_t workers = 1) {
  std::vector<double> returns(episodes, 0.0);
  parallel_for(episodes, workers, [&](std::size_t i) {
    Rng rng = make_rng(derive_seed(seed, "eval", i));
    StateId s = uniform_index(rng, mdp.n_states);
    double ret = 0.0;
    for (std::size_t t = 0; t < horizon && !mdp.is_terminal(s); ++t) {
      const ActionId a = actor.sample(s, rng);
      auto [r, next] = env_step(mdp, s, a, rng);
      ret += r;
      s = next;
    }
    returns[i] = ret;
  });
  return summarize(std::move(returns));
}

// ---------------------------------------------------------------------------
// Training loop

enum class PpoBehavior {
  critic_epsilon_greedy,  ///< epsilon-greedy on sum_z W_z
  actor_sample,           ///< sample from the current actor
};

struct PpoOptions {
  std::size_t horizon = 8;  ///< window length T
  std::size_t iterations = 200;
  std::size_t steps_per_episode = 50;
  double alpha_omega = 0.1;
  double clip_eps = 0.2;
  double epsilon = 0.1;  ///< exploration for critic_epsilon_greedy
  double temperature = 1.0;
  RatioMode ratio_mode = RatioMode::policy_likelihood;
  PpoBehavior behavior = PpoBehavior::critic_epsilon_greedy;
  AdvantageWeighting weighting = AdvantageWeighting::top_scale;
  AdvantageBaseline baseline = AdvantageBaseline::action_value;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  ///< 0 disables periodic evaluation
  std::size_t eval_episodes = 100;
  std::size_t workers = 1;
};

struct PpoIterationMetrics {
  std::size_t iteration = 0;
  double mean_return = 0.0;  ///< undiscounted return of the training episode
  double eval_return = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = 0.0;   ///< mean negated clipped objective over updates
  std::vector<double> critic_loss_per_z;
  std::size_t ratio_skips = 0;
  std::size_t updates = 0;
  double critic_sup_error = std::numeric_limits<double>::quiet_NaN();
};

struct PpoResult {
  ActorModel actor;
  LinearModel critic;
  std::vector<PpoIterationMetrics> curve;
  std::size_t ratio_skips = 0;
};

/// Actor-critic training with per-scale lambda-return critics. Each training
/// episode is one iteration. Once T transitions are buffered, the oldest one
/// in the window receives a critic update toward its per-scale lambda-returns
/// and a single actor gradient step on the clipped objective with the GAE-Delta
/// advantage; the episode tail is flushed with shorter windows.
inline PpoResult run_ppo_qdelta(const MdpSpec& mdp, const TimescaleSchedule& schedule,
                                const FeatureMap& features, const PpoOptions& opt,
                                const std::optional<std::vector<QTable>>& exact_w = std::nullopt) {
  schedule.validate();
  for (std::size_t z = 0; z < schedule.size(); ++z)
    detail::require(schedule.lambdas[z] * schedule.gammas[z] < 1.0, "lambda_z * gamma_z must be < 1");
  detail::require(opt.horizon >= 1, "horizon T must be >= 1");
  detail::require(opt.clip_eps > 0.0 && opt.clip_eps < 1.0, "clip_eps must lie in (0, 1)");
  detail::require(opt.epsilon >= 0.0 && opt.epsilon <= 1.0, "epsilon must lie in [0, 1]");
  detail::require(features.n_states() == mdp.n_states && features.n_actions() == mdp.n_actions,
                  "feature map does not match the MDP");

  const std::size_t Z = schedule.size();
  const std::size_t top = schedule.top();
  PpoResult res;
  res.actor = ActorModel::tabular(mdp.n_states, mdp.n_actions, opt.temperature);
  res.critic = LinearModel(features, Z);
  auto& actor = res.actor;
  auto& critic = res.critic;
  Rng rng = make_rng(derive_seed(opt.seed, "ppo-train", 0));

  std::vector<double> behavior_values(mdp.n_actions);
  auto act = [&](StateId s) {
    if (opt.behavior == PpoBehavior::actor_sample) return actor.sample(s, rng);
    for (ActionId a = 0; a < mdp.n_actions; ++a) behavior_values[a] = critic.partial_sum(top, s, a);
    return epsilon_greedy(behavior_values, opt.epsilon, rng);
  };

  for (std::size_t it = 0; it < opt.iterations; ++it) {
    PpoIterationMetrics m;
    m.iteration = it;
    m.critic_loss_per_z.assign(Z, 0.0);
    const ActorModel actor_old = actor;
    const QTable critic_old = critic.to_delta_table(schedule).reconstruct();
    double objective_sum = 0.0;

    auto update_window = [&](Trajectory& window) {
      const Transition& head = window[0];
      const std::size_t T = window.size();
      DeltaTable view = critic.to_delta_table(schedule);
      const auto series = td_errors_delta(view, window);
      const auto returns = lambda_return_delta(series, view, window, T);
      std::vector<double> targets(Z);
      for (std::size_t z = 0; z < Z; ++z) {
        targets[z] = returns[z][0];
        m.critic_loss_per_z[z] += critic_loss(view.at(z, head.state, head.action), targets[z]);
      }
      td_lambda_delta_step(critic, head.state, head.action, targets, schedule.alphas);

      view = critic.to_delta_table(schedule);
      const double advantage = gae_delta(view, window, T, opt.weighting, opt.baseline).a_delta[0];
      double ratio = 1.0;
      try {
        if (opt.ratio_mode == RatioMode::paper_q_ratio) {
          const QTable critic_new = view.reconstruct();
          ratio = policy_ratio(&critic_new, &critic_old, head.state, head.action, opt.ratio_mode);
        } else {
          ratio = policy_ratio(nullptr, nullptr, head.state, head.action, opt.ratio_mode, &actor, &actor_old);
        }
      } catch (const DegenerateRatio&) {
        ++m.ratio_skips;
        ++m.updates;
        return;
      }
      objective_sum += clipped_objective(ratio, advantage, opt.clip_eps);
      if (opt.alpha_omega != 0.0 && advantage != 0.0 && clip_inactive(ratio, advantage, opt.clip_eps))
        actor.add_log_prob_gradient(head.state, head.action, opt.alpha_omega * ratio * advantage);
      ++m.updates;
    };

    std::vector<Transition> buf;
    StateId s = uniform_index(rng, mdp.n_states);
    double ret = 0.0;
    Trajectory window;
    for (std::size_t t = 0; t < opt.steps_per_episode && !mdp.is_terminal(s); ++t) {
      const ActionId a = act(s);
      auto [r, next] = env_step(mdp, s, a, rng);
      ret += r;
      buf.push_back({s, a, r, next});
      if (buf.size() >= opt.horizon) {
        window.transitions.assign(buf.end() - static_cast<std::ptrdiff_t>(opt.horizon), buf.end());
        update_window(window);
      }
      s = next;
    }
    const std::size_t first = buf.size() >= opt.horizon ? buf.size() - opt.horizon + 1 : 0;
    for (std::size_t u = first; u < buf.size(); ++u) {
      window.transitions.assign(buf.begin() + static_cast<std::ptrdiff_t>(u), buf.end());
      update_window(window);
    }

    m.mean_return = ret;
    if (m.updates > 0) {
      const double n = static_cast<double>(m.updates);
      m.actor_loss = -objective_sum / n;
      for (auto& c : m.critic_loss_per_z) c /= n;
    }
    if (exact_w) {
      const DeltaTable view = critic.to_delta_table(schedule);
      double e = 0.0;
      for (std::size_t z = 0; z < Z; ++z) e = std::max(e, sup_distance(view.component(z), (*exact_w)[z]));
      m.critic_sup_error = e;
    }
    if (opt.eval_every > 0 && (it + 1) % opt.eval_every == 0)
      m.eval_return = evaluate_policy(mdp, actor, opt.eval_episodes, opt.steps_per_episode,
                                      derive_seed(opt.seed, "ppo-eval", it), opt.workers)
                          .mean;
    res.ratio_skips += m.ratio_skips;
    res.curve.push_back(std::move(m));
  }
  return res;
}

}  // namespace qdelta
