#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/ppo.hpp"

using namespace qdelta;

namespace {

MdpSpec dense_ring() { return build_ring_mdp(5, 0.0, ring_dense_rewards(5, 0.5, 0.0)); }

TimescaleSchedule ladder(std::vector<double> gammas, std::vector<double> lambdas, double alpha) {
  auto s = TimescaleSchedule::from_gammas(std::move(gammas), alpha);
  s.lambdas = std::move(lambdas);
  return s;
}

DeltaTable random_table(const TimescaleSchedule& s, const MdpSpec& m, std::uint64_t seed) {
  auto t = DeltaTable::zeros(s, m);
  Rng rng = make_rng(seed);
  for (std::size_t z = 0; z < s.size(); ++z)
    for (StateId st = 0; st < m.n_states; ++st)
      for (ActionId a = 0; a < m.n_actions; ++a) t.at(z, st, a) = uniform_real(rng, -1, 1);
  return t;
}

}  // namespace

TEST(Actor, SoftmaxStaysOnSimplex) {
  auto actor = ActorModel::tabular(4, 3, 0.5);
  Rng rng = make_rng(1);
  for (int i = 0; i < 300; ++i) {
    actor.add_log_prob_gradient(uniform_index(rng, 4), uniform_index(rng, 3), uniform_real(rng, -5, 5));
    for (StateId s = 0; s < 4; ++s) {
      const auto p = actor.probabilities(s);
      ASSERT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    }
  }
  EXPECT_THROW(ActorModel::tabular(2, 2, 0.0), ConfigError);
}

TEST(Actor, GradientRaisesChosenAction) {
  auto actor = ActorModel::tabular(2, 2);
  EXPECT_DOUBLE_EQ(actor.probability(0, 1), 0.5);
  actor.add_log_prob_gradient(0, 1, 1.0);
  EXPECT_GT(actor.probability(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(actor.probability(1, 1), 0.5);
}

TEST(GaeDelta, SingleScaleIsBaselineGae) {
  const auto m = build_random_mdp(6, 3, 2);
  for (int i = 0; i < 100; ++i) {
    const auto s = ladder({0.85}, {0.7}, 0.1);
    const auto t = random_table(s, m, 100 + i);
    const auto traj = sample_trajectory(m, uniform_random_policy(3), 40, i);
    const auto base = gae(t.component(0), traj, 0.7, 16);
    const auto delta = gae_delta(t, traj, 16);
    ASSERT_EQ(base.a_delta, delta.a_delta);
  }
}

TEST(GaeDelta, HandEvaluations) {
  const auto m = dense_ring();
  const auto s = ladder({0.5}, {1.0}, 0.1);
  const auto t = DeltaTable::zeros(s, m);
  Trajectory traj;
  traj.transitions = {{0, 0, 2.0, 1}, {1, 0, 1.0, 2}};
  EXPECT_DOUBLE_EQ(gae_delta(t, traj, 2).a_delta[0], 2.5);
  EXPECT_DOUBLE_EQ(gae_delta(t, traj, 1).a_delta[0], 2.0);
}

TEST(GaeDelta, AggregateCriticUsesTopDiscount) {
  const auto m = build_random_mdp(4, 2, 5);
  const auto s = ladder({0.5, 0.9}, {0.2, 0.5}, 0.1);
  const auto t = random_table(s, m, 3);
  const auto traj = sample_trajectory(m, uniform_random_policy(2), 6, 1);
  const auto a = gae_delta(t, traj, 1);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& tr = traj[i];
    const double d = tr.reward + 0.9 * (t.component_max(0, tr.next_state) + t.component_max(1, tr.next_state)) -
                     (t.at(0, tr.state, tr.action) + t.at(1, tr.state, tr.action));
    EXPECT_NEAR(a.a_delta[i], d, 1e-14);
  }
  const auto per = gae_delta(t, traj, 4, AdvantageWeighting::per_scale);
  EXPECT_EQ(per.horizon(), traj.size());
  EXPECT_THROW(gae_delta(t, traj, 4, AdvantageWeighting::per_scale, AdvantageBaseline::state_value), ConfigError);
}

TEST(GaeDelta, StateValueBaselineIsZeroForGreedyActionAtExactCritic) {
  const auto m = dense_ring();
  const auto s = ladder({0.5, 0.9}, {0.5, 0.5}, 0.1);
  const auto t = DeltaTable::from_components(s, exact_delta_ladder(m, s.gammas));
  Trajectory traj;
  traj.transitions = {{0, 0, 0.5, 1}, {1, 1, 0.0, 1}};
  const auto a = gae_delta(t, traj, 1, AdvantageWeighting::top_scale, AdvantageBaseline::state_value);
  EXPECT_NEAR(a.a_delta[0], 0.0, 1e-9);
  // Staying forfeits one step of reward: Q*(s, stay) - V*(s) = -0.5.
  EXPECT_NEAR(a.a_delta[1], -0.5, 1e-9);
}

TEST(PolicyRatio, Modes) {
  const auto m = build_random_mdp(2, 2, 1);
  QTable q = QTable::zeros_like(m, 0.9);
  q.at(0, 0) = 1.0;
  q.at(0, 1) = 3.0;
  EXPECT_EQ(policy_ratio(&q, &q, 0, 1, RatioMode::paper_q_ratio), 1.0);
  QTable old = q;
  old.at(0, 1) = 2.0;
  EXPECT_EQ(policy_ratio(&q, &old, 0, 1, RatioMode::paper_q_ratio), 1.5);
  old.at(0, 0) = 1e-9;
  EXPECT_THROW(policy_ratio(&q, &old, 0, 0, RatioMode::paper_q_ratio), DegenerateRatio);
  const auto actor = ActorModel::tabular(2, 2);
  EXPECT_EQ(policy_ratio(nullptr, nullptr, 1, 0, RatioMode::policy_likelihood, &actor, &actor), 1.0);
}

TEST(ClippedObjective, Examples) {
  EXPECT_EQ(clipped_objective(1.0, 0.7, 0.2), 0.7);
  EXPECT_DOUBLE_EQ(clipped_objective(2.0, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_objective(0.5, -1.0, 0.2), -0.8);
}

TEST(ClippedObjective, Bounded) {
  Rng rng = make_rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double rho = uniform_real(rng, 0, 3), adv = uniform_real(rng, -5, 5), eps = uniform_real(rng, 0.01, 0.99);
    const double v = clipped_objective(rho, adv, eps);
    EXPECT_LE(std::abs(v), std::max(std::abs(adv) * (1 + eps), std::abs(rho * adv)) + 1e-12);
    if (std::abs(rho - 1) <= eps) {
      EXPECT_EQ(v, rho * adv);
    }
  }
}

TEST(CriticLoss, Examples) {
  EXPECT_EQ(critic_loss(1.5, 1.5), 0.0);
  EXPECT_EQ(critic_loss(0.0, 2.0), 4.0);
  EXPECT_EQ(critic_loss(std::vector<double>{0, 0}, std::vector<double>{1, 3}), 5.0);
}

TEST(RunPpo, ZeroAdvantageLeavesActor) {
  const auto m = build_ring_mdp(4, 0.0, ring_dense_rewards(4, 0.0, 0.0));
  PpoOptions opt;
  opt.iterations = 5;
  opt.steps_per_episode = 20;
  const auto res = run_ppo_qdelta(m, ladder({0.5, 0.9}, {0.5, 0.5}, 0.1), make_onehot_features(m), opt);
  for (double w : res.actor.omega()) EXPECT_EQ(w, 0.0);
}

TEST(RunPpo, UntrainedActorIsUniform) {
  const auto m = dense_ring();
  PpoOptions opt;
  opt.iterations = 0;
  const auto res = run_ppo_qdelta(m, ladder({0.5, 0.9}, {0.5, 0.5}, 0.1), make_onehot_features(m), opt);
  const auto trained = evaluate_policy(m, res.actor, 1000, 50, 11);
  // Independent uniform-random rollouts on fresh seeds.
  std::vector<double> ref(1000);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto tr = sample_trajectory(m, uniform_random_policy(2), 50, derive_seed(12, "ref", i),
                                      derive_seed(13, "start", i) % 5);
    for (const auto& x : tr.transitions) ref[i] += x.reward;
  }
  const auto base = summarize(ref);
  const double se = std::sqrt(trained.stddev * trained.stddev / 1000 + base.stddev * base.stddev / 1000);
  EXPECT_LE(std::abs(trained.mean - base.mean), 3 * se);
}

TEST(RunPpo, CriticOnlyConverges) {
  const auto m = dense_ring();
  const auto s = ladder({0.5, 0.9}, {0.0, 0.0}, 0.2);
  PpoOptions opt;
  opt.iterations = 150;
  opt.steps_per_episode = 60;
  opt.alpha_omega = 0.0;
  opt.epsilon = 0.3;
  const auto exact = exact_delta_ladder(m, s.gammas);
  const auto res = run_ppo_qdelta(m, s, make_onehot_features(m), opt, exact);
  for (double w : res.actor.omega()) EXPECT_EQ(w, 0.0);
  EXPECT_LT(res.curve.back().critic_sup_error, 0.25 * res.curve.front().critic_sup_error);
}

TEST(RunPpo, DeterministicAndLearns) {
  const auto m = dense_ring();
  const auto s = ladder({0.5, 0.9}, {0.5, 0.5}, 0.1);
  PpoOptions opt;
  opt.iterations = 100;
  opt.seed = 4;
  opt.baseline = AdvantageBaseline::state_value;
  const auto a = run_ppo_qdelta(m, s, make_onehot_features(m), opt);
  const auto b = run_ppo_qdelta(m, s, make_onehot_features(m), opt);
  EXPECT_EQ(a.actor.omega(), b.actor.omega());
  for (StateId st = 0; st < 5; ++st) EXPECT_GT(a.actor.probability(st, 0), 0.9);
}

TEST(RunPpo, ActionValueBaselineTracksCriticResidual) {
  // With the action-value baseline the TD error is a Bellman residual of the
  // critic, so the rarely taken action keeps the larger advantage.
  const auto m = dense_ring();
  PpoOptions opt;
  opt.iterations = 100;
  opt.seed = 4;
  const auto res = run_ppo_qdelta(m, ladder({0.5, 0.9}, {0.5, 0.5}, 0.1), make_onehot_features(m), opt);
  for (StateId st = 0; st < 5; ++st) EXPECT_LT(res.actor.probability(st, 0), 0.5);
}

TEST(RunPpo, PaperRatioModeCountsSkips) {
  const auto m = dense_ring();
  PpoOptions opt;
  opt.iterations = 3;
  opt.ratio_mode = RatioMode::paper_q_ratio;
  const auto res = run_ppo_qdelta(m, ladder({0.5, 0.9}, {0.5, 0.5}, 0.1), make_onehot_features(m), opt);
  // The first episode starts from a zero critic, so every ratio is degenerate.
  EXPECT_EQ(res.curve[0].ratio_skips, res.curve[0].updates);
  EXPECT_GT(res.ratio_skips, 0u);
}
