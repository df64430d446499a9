#include <gtest/gtest.h>

#include <cmath>

#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"

using namespace qdelta;

namespace {

MdpSpec constant_reward_mdp(std::size_t n_states, std::size_t n_actions, std::uint64_t seed, double r) {
  auto m = build_random_mdp(n_states, n_actions, seed);
  std::fill(m.mean_reward.begin(), m.mean_reward.end(), r);
  return m;
}

// (T q)(s,a) computed from scratch, for the Neumann-series reference.
std::vector<double> naive_backup(const MdpSpec& m, const std::vector<double>& q, double gamma) {
  std::vector<double> out(q.size());
  for (StateId s = 0; s < m.n_states; ++s)
    for (ActionId a = 0; a < m.n_actions; ++a) {
      double v = m.expected_reward(s, a);
      for (StateId n = 0; n < m.n_states; ++n) {
        double best = q[n * m.n_actions];
        for (ActionId b = 1; b < m.n_actions; ++b) best = std::max(best, q[n * m.n_actions + b]);
        v += gamma * m.p(s, a, n) * best;
      }
      out[s * m.n_actions + a] = v;
    }
  return out;
}

}  // namespace

TEST(ValueIteration, GeometricSeries) {
  const auto m = constant_reward_mdp(4, 3, 1, 1.0);
  const auto q = value_iteration(m, 0.5);
  for (double v : q.values) EXPECT_NEAR(v, 2.0, 1e-11);
}

TEST(ValueIteration, MyopicCase) {
  const auto m = build_random_mdp(5, 2, 4);
  const auto q = value_iteration(m, 0.0);
  for (StateId s = 0; s < 5; ++s)
    for (ActionId a = 0; a < 2; ++a) EXPECT_EQ(q.at(s, a), m.expected_reward(s, a));
}

TEST(ValueIteration, ResidualWithinTolerance) {
  const auto m = build_random_mdp(8, 3, 7);
  const double tol = 1e-10;
  const auto q = value_iteration(m, 0.95, tol);
  const auto tq = naive_backup(m, q.values, 0.95);
  EXPECT_LE(sup_distance(tq, q.values), tol);
}

TEST(ValueIteration, ReportsNonConvergence) {
  const auto m = build_random_mdp(4, 2, 3);
  EXPECT_THROW(value_iteration(m, 0.99, 1e-12, 5), NumericError);
}

TEST(ValueIteration, MatchesMonteCarloOnSingleArcRing) {
  const auto m = build_ring_mdp(5, 0.0, ring_single_arc_rewards(5, 0, 1.0));
  const double gamma = 0.9;
  const auto q = value_iteration(m, gamma);
  const auto greedy = greedy_policy(q);
  const int rollouts = 10000;
  for (StateId s = 0; s < 5; ++s)
    for (ActionId a = 0; a < 2; ++a) {
      double acc = 0.0;
      for (int i = 0; i < rollouts; ++i) {
        Rng rng = make_rng(derive_seed(1, "mc", (s * 2 + a) * rollouts + i));
        StateId st = s;
        ActionId act = a;
        double g = 0.0, pw = 1.0;
        for (int t = 0; t < 200; ++t) {
          auto [r, next] = env_step(m, st, act, rng);
          g += pw * r;
          pw *= gamma;
          st = next;
          act = greedy[st];
        }
        acc += g;
      }
      EXPECT_NEAR(acc / rollouts, q.at(s, a), 2e-2) << s << "," << a;
    }
}

TEST(ExactDelta, Conventions) {
  const auto m = constant_reward_mdp(3, 2, 5, 1.0);
  for (double v : exact_delta(m, 0.7, 0.7).values) EXPECT_EQ(v, 0.0);
  for (double v : exact_delta(m, 0.9, 0.5).values) EXPECT_NEAR(v, 8.0, 1e-9);
  for (double v : exact_delta(m, 0.5, std::nullopt).values) EXPECT_NEAR(v, 2.0, 1e-11);
  EXPECT_THROW(exact_delta(m, 0.5, 0.9), ConfigError);
}

TEST(ExactDelta, TelescopesAndIsBounded) {
  const auto m = build_random_mdp(8, 3, 7);
  const std::vector<double> ladder{0.3, 0.6, 0.9, 0.99};
  const double tol = 1e-12;
  const auto w = exact_delta_ladder(m, ladder, tol);
  const auto q = value_iteration(m, 0.99, tol);
  std::vector<double> sum(q.values.size(), 0.0);
  for (const auto& wz : w)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += wz.values[i];
  EXPECT_LE(sup_distance(sum, q.values), 2 * tol * ladder.size() + 1e-12);
  for (std::size_t z = 1; z < w.size(); ++z)
    for (double v : w[z].values)
      EXPECT_LE(std::abs(v), 1 / (1 - ladder[z]) + 1 / (1 - ladder[z - 1]));
}

TEST(Bellman, ContractsBySupNorm) {
  const auto m = build_random_mdp(6, 3, 2);
  Rng rng = make_rng(9);
  for (int i = 0; i < 200; ++i) {
    QTable a = QTable::zeros_like(m, 0.8), b = a;
    for (auto& v : a.values) v = uniform_real(rng, -5, 5);
    for (auto& v : b.values) v = uniform_real(rng, -5, 5);
    const double lhs = sup_distance(bellman_backup(m, a), bellman_backup(m, b));
    EXPECT_LE(lhs, 0.8 * sup_distance(a, b) + 1e-12);
  }
}

TEST(TLambda, LambdaZeroIsBellmanBackup) {
  const auto m = build_random_mdp(4, 2, 1);
  QTable q = QTable::zeros_like(m, 0.9);
  Rng rng = make_rng(1);
  for (auto& v : q.values) v = uniform_real(rng, -3, 3);
  const auto tl = apply_t_lambda(m, q, 0.0, greedy_policy(q));
  EXPECT_LE(sup_distance(tl, bellman_backup(m, q)), 1e-12);
}

TEST(TLambda, FixedPointIsPreserved) {
  const auto m = build_random_mdp(5, 3, 8);
  const auto q = value_iteration(m, 0.9);
  const auto tl = apply_t_lambda(m, q, 0.7, greedy_policy(q));
  EXPECT_LE(sup_distance(tl, q), 1e-9);
}

TEST(TLambda, MatchesNeumannSeries) {
  const auto m = build_random_mdp(4, 2, 17);
  const double gamma = 0.9, lambda = 0.5;
  QTable q = QTable::zeros_like(m, gamma);
  Rng rng = make_rng(4);
  for (auto& v : q.values) v = uniform_real(rng, -2, 2);
  const auto pi = greedy_policy(q);
  const auto got = apply_t_lambda(m, q, lambda, pi);

  // q + sum_{k<=200} (lambda gamma P_ref)^k (Tq - q), with P_ref applied by hand.
  const auto tq = naive_backup(m, q.values, gamma);
  std::vector<double> term(q.values.size()), acc = q.values;
  for (std::size_t i = 0; i < term.size(); ++i) term[i] = tq[i] - q.values[i];
  for (int k = 0; k <= 200; ++k) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += term[i];
    std::vector<double> next(term.size(), 0.0);
    for (StateId s = 0; s < m.n_states; ++s)
      for (ActionId a = 0; a < m.n_actions; ++a)
        for (StateId n = 0; n < m.n_states; ++n)
          next[s * m.n_actions + a] += lambda * gamma * m.p(s, a, n) * term[n * m.n_actions + pi[n]];
    term = next;
  }
  EXPECT_LE(sup_distance(got.values, acc), 1e-8);
}

TEST(TLambda, RejectsUnstableLambda) {
  const auto m = build_random_mdp(3, 2, 1);
  const auto q = QTable::zeros_like(m, 0.9);
  EXPECT_THROW(apply_t_lambda(m, q, 1.2, greedy_policy(q)), ConfigError);
}

TEST(QTableJson, RoundTrip) {
  const auto m = build_random_mdp(3, 2, 1);
  const auto q = value_iteration(m, 0.7);
  const auto back = qtable_from_json(nlohmann::json::parse(to_json(q).dump()));
  EXPECT_EQ(back.values, q.values);
  EXPECT_EQ(back.gamma, q.gamma);
}
