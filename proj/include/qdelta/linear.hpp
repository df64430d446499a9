#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qdelta/delta_table.hpp"
#include "qdelta/error.hpp"
#include "qdelta/lambda.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/rng.hpp"

namespace qdelta {

/// Dense feature table phi(s, a) in R^d.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t n_states, std::size_t n_actions, std::size_t dim)
      : n_states_(n_states), n_actions_(n_actions), dim_(dim), table_(n_states * n_actions * dim, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }

  std::span<const double> operator()(StateId s, ActionId a) const {
    return {table_.data() + (s * n_actions_ + a) * dim_, dim_};
  }
  std::span<double> mutable_row(StateId s, ActionId a) {
    return {table_.data() + (s * n_actions_ + a) * dim_, dim_};
  }

  /// Same map multiplied by c.
  FeatureMap scaled(double c) const {
    FeatureMap out = *this;
    for (auto& x : out.table_) x *= c;
    return out;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> table_;
};

enum class FeatureKind { onehot, random_projection };

/// One-hot over state-action pairs: phi(s, a) = e_{s*|A| + a}.
inline FeatureMap make_onehot_features(const MdpSpec& mdp) {
  FeatureMap f(mdp.n_states, mdp.n_actions, mdp.n_pairs());
  for (StateId s = 0; s < mdp.n_states; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) f.mutable_row(s, a)[mdp.pair_index(s, a)] = 1.0;
  return f;
}

/// Seeded dense features with entries uniform in [-1, 1].
inline FeatureMap make_random_projection_features(const MdpSpec& mdp, std::size_t dim, std::uint64_t seed) {
  detail::require(dim >= 1, "feature dimension must be >= 1");
  FeatureMap f(mdp.n_states, mdp.n_actions, dim);
  Rng rng = make_rng(seed);
  for (StateId s = 0; s < mdp.n_states; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a)
      for (double& x : f.mutable_row(s, a)) x = uniform_real(rng, -1.0, 1.0);
  return f;
}

inline FeatureMap make_features(FeatureKind kind, const MdpSpec& mdp, std::size_t dim = 0,
                                std::uint64_t seed = 0) {
  return kind == FeatureKind::onehot ? make_onehot_features(mdp)
                                     : make_random_projection_features(mdp, dim, seed);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Linear estimates Q(s,a) = <theta_baseline, phi(s,a)> and
/// W_z(s,a) = <theta_scales[z], phi(s,a)>.
struct LinearModel {
  FeatureMap phi;
  std::vector<double> theta_baseline;
  std::vector<std::vector<double>> theta_scales;

  LinearModel() = default;
  LinearModel(FeatureMap features, std::size_t scales)
      : phi(std::move(features)),
        theta_baseline(phi.dim(), 0.0),
        theta_scales(scales, std::vector<double>(phi.dim(), 0.0)) {}

  std::size_t scales() const { return theta_scales.size(); }

  double q(StateId s, ActionId a) const { return dot(theta_baseline, phi(s, a)); }
  double w(std::size_t z, StateId s, ActionId a) const { return dot(theta_scales[z], phi(s, a)); }
  double partial_sum(std::size_t z, StateId s, ActionId a) const {
    double acc = 0.0;
    for (std::size_t u = 0; u <= z; ++u) acc += w(u, s, a);
    return acc;
  }

  std::vector<double> scale_sum() const {
    std::vector<double> sum(phi.dim(), 0.0);
    for (const auto& th : theta_scales)
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += th[i];
    return sum;
  }

  /// ||sum_z theta^z - theta^gamma||_inf
  double decomposition_gap() const { return sup_distance(scale_sum(), theta_baseline); }

  /// Tabular view of the per-scale estimates.
  DeltaTable to_delta_table(const TimescaleSchedule& schedule) const {
    DeltaTable t(schedule, phi.n_states(), phi.n_actions());
    for (std::size_t z = 0; z < scales(); ++z)
      for (StateId s = 0; s < phi.n_states(); ++s)
        for (ActionId a = 0; a < phi.n_actions(); ++a) t.at(z, s, a) = w(z, s, a);
    return t;
  }
};

namespace detail {
inline void residual_step(std::vector<double>& theta, std::span<const double> phi, double target,
                          double alpha) {
  const double step = alpha * (target - dot(theta, phi));
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += step * phi[i];
}
}  // namespace detail

/// theta_baseline += alpha * (G - Q(s,a)) * phi(s,a)
inline void td_lambda_step(LinearModel& model, StateId s, ActionId a, double target, double alpha) {
  detail::residual_step(model.theta_baseline, model.phi(s, a), target, alpha);
}

/// theta^z += alpha_z * (G^z - W_z(s,a)) * phi(s,a) for every z.
inline void td_lambda_delta_step(LinearModel& model, StateId s, ActionId a,
                                 std::span<const double> targets, std::span<const double> alphas) {
  if (targets.size() != model.scales() || alphas.size() != model.scales())
    throw ConfigError("td_lambda_delta_step: expected " + std::to_string(model.scales()) +
                      " targets and learning rates");
  const auto phi = model.phi(s, a);
  for (std::size_t z = 0; z < model.scales(); ++z)
    detail::residual_step(model.theta_scales[z], phi, targets[z], alphas[z]);
}

// ---------------------------------------------------------------------------
// Equivalence of TD(lambda) and TD(lambda, Delta)

/// How both learners bootstrap at s_{t+1}.
enum class EquivalenceBootstrap {
  shared_greedy,  ///< every estimate is read at the baseline's greedy action
  per_scale_max,  ///< each scale maximizes its own estimate
};

struct EquivalenceOptions {
  std::size_t truncation = 64;
  EquivalenceBootstrap bootstrap = EquivalenceBootstrap::shared_greedy;
};

struct EquivalenceReport {
  double max_dev = 0.0;      ///< over steps with argmax agreement
  double max_dev_all = 0.0;  ///< over all steps
  std::vector<double> per_step_dev;
  std::vector<bool> argmax_agreement;
  std::size_t disagreement_steps = 0;
  std::vector<std::string> warnings;
};

inline std::vector<std::string> equivalence_violations(const TimescaleSchedule& schedule) {
  std::vector<std::string> errs = schedule.violations();
  if (!errs.empty()) return errs;
  const double lg = schedule.lambdas[0] * schedule.gammas[0];
  for (std::size_t z = 1; z < schedule.size(); ++z) {
    if (schedule.alphas[z] != schedule.alphas[0]) errs.emplace_back("equivalence needs alpha_z equal for all z");
    const double lgz = schedule.lambdas[z] * schedule.gammas[z];
    if (std::abs(lgz - lg) > 1e-12 * std::max(1.0, std::abs(lg)))
      errs.emplace_back("equivalence needs lambda_z * gamma_z equal for all z");
  }
  return errs;
}

/// Runs TD(lambda) at (gamma_Z, lambda_Z) and TD(lambda, Delta) side by side on
/// one uniform-random behavior stream, both with forward-view lambda-returns
/// truncated at `truncation` steps, and tracks ||sum_z theta^z - theta^gamma||.
inline EquivalenceReport equivalence_run(const MdpSpec& mdp, const FeatureMap& features,
                                         const TimescaleSchedule& schedule, std::size_t steps,
                                         std::uint64_t seed, const EquivalenceOptions& opt = {}) {
  if (auto errs = equivalence_violations(schedule); !errs.empty()) throw ConfigError(errs.front());
  detail::require(opt.truncation >= 1, "truncation must be >= 1");

  EquivalenceReport rep;
  const std::size_t top = schedule.top();
  const auto& g = schedule.gammas;
  for (std::size_t z = 0; z <= top; ++z)
    if (schedule.lambdas[z] >= contraction_lambda_limit(g[z]))
      rep.warnings.push_back("lambda_" + std::to_string(z) + " = " + std::to_string(schedule.lambdas[z]) +
                             " is outside the contraction range for gamma_" + std::to_string(z));

  LinearModel model(features, schedule.size());
  const double gamma = g[top];
  const double alpha = schedule.alphas[0];
  const double decay = schedule.lambdas[top] * gamma;
  std::vector<double> decays(schedule.size());
  for (std::size_t z = 0; z <= top; ++z) decays[z] = schedule.lambdas[z] * g[z];

  Rng start_rng = make_rng(derive_seed(seed, "equivalence-start", 0));
  const StateId start = uniform_index(start_rng, mdp.n_states);
  const Trajectory traj = sample_trajectory(mdp, uniform_random_policy(mdp.n_actions), steps + opt.truncation,
                                            derive_seed(seed, "equivalence-behavior", 0), start, "uniform");
  const std::size_t n = traj.size();
  rep.max_dev = rep.max_dev_all = model.decomposition_gap();

  std::vector<double> q_row(mdp.n_actions);
  std::vector<double> deltas_base;
  std::vector<std::vector<double>> deltas_z(schedule.size());
  std::vector<double> targets(schedule.size());

  for (std::size_t t = 0; t < steps && t < n; ++t) {
    const std::size_t stop = std::min(n, t + opt.truncation);
    deltas_base.clear();
    for (auto& d : deltas_z) d.clear();
    bool agree = true;

    for (std::size_t k = t; k < stop; ++k) {
      const Transition& tr = traj[k];
      const StateId sn = tr.next_state;
      for (ActionId a = 0; a < mdp.n_actions; ++a) q_row[a] = model.q(sn, a);
      const ActionId greedy = argmax(q_row);

      deltas_base.push_back(tr.reward + gamma * model.q(sn, greedy) - model.q(tr.state, tr.action));

      // Argmax agreement: the shared action maximizes every component and partial sum.
      for (std::size_t z = 0; z <= top && agree; ++z) {
        double best_w = model.w(z, sn, greedy), best_p = model.partial_sum(z, sn, greedy);
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
          if (model.w(z, sn, a) > best_w || model.partial_sum(z, sn, a) > best_p) {
            agree = false;
            break;
          }
        }
      }

      for (std::size_t z = 0; z <= top; ++z) {
        double boot_w, boot_lower = 0.0;
        if (opt.bootstrap == EquivalenceBootstrap::shared_greedy) {
          boot_w = model.w(z, sn, greedy);
          if (z > 0) boot_lower = model.partial_sum(z - 1, sn, greedy);
        } else {
          boot_w = model.w(z, sn, 0);
          for (ActionId a = 1; a < mdp.n_actions; ++a) boot_w = std::max(boot_w, model.w(z, sn, a));
          if (z > 0) {
            boot_lower = model.partial_sum(z - 1, sn, 0);
            for (ActionId a = 1; a < mdp.n_actions; ++a)
              boot_lower = std::max(boot_lower, model.partial_sum(z - 1, sn, a));
          }
        }
        const double here = model.w(z, tr.state, tr.action);
        if (z == 0)
          deltas_z[0].push_back(tr.reward + g[0] * boot_w - here);
        else
          deltas_z[z].push_back((g[z] - g[z - 1]) * boot_lower + g[z] * boot_w - here);
      }
    }

    const Transition& cur = traj[t];
    double acc = 0.0, w = 1.0;
    for (double d : deltas_base) {
      acc += w * d;
      w *= decay;
    }
    const double g_base = model.q(cur.state, cur.action) + acc;
    for (std::size_t z = 0; z <= top; ++z) {
      acc = 0.0;
      w = 1.0;
      for (double d : deltas_z[z]) {
        acc += w * d;
        w *= decays[z];
      }
      targets[z] = model.w(z, cur.state, cur.action) + acc;
    }

    td_lambda_step(model, cur.state, cur.action, g_base, alpha);
    td_lambda_delta_step(model, cur.state, cur.action, targets, schedule.alphas);

    const double dev = model.decomposition_gap();
    rep.per_step_dev.push_back(dev);
    rep.argmax_agreement.push_back(agree);
    rep.max_dev_all = std::max(rep.max_dev_all, dev);
    if (agree)
      rep.max_dev = std::max(rep.max_dev, dev);
    else
      ++rep.disagreement_steps;
  }
  return rep;
}

}  // namespace qdelta
