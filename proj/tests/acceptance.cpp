// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "qdelta/config.hpp"
#include "qdelta/lambda.hpp"
#include "qdelta/linear.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/phased.hpp"
#include "qdelta/ppo.hpp"
#include "qdelta/runner.hpp"
#include "qdelta/tabular.hpp"

using namespace qdelta;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;  // diagnostics that do not affect the verdict

  Outcome() = default;
  Outcome(bool p, std::string d) : pass(p), detail(std::move(d)) {}
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

TimescaleSchedule ladder(std::vector<double> gammas, std::vector<std::size_t> k = {}) {
  auto s = TimescaleSchedule::from_gammas(std::move(gammas));
  if (!k.empty()) s.k = std::move(k);
  return s;
}

int workers() { return static_cast<int>(workers_from_env(4)); }

// ---------------------------------------------------------------------------

Outcome telescoping() {
  const auto m = build_random_mdp(8, 3, 2024);
  double worst = 0.0;
  for (const auto& g : {std::vector<double>{0.5, 0.9}, std::vector<double>{0.3, 0.6, 0.9, 0.99}}) {
    const auto w = exact_delta_ladder(m, g);
    QTable sum = w[0];
    for (std::size_t z = 1; z < w.size(); ++z)
      for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += w[z].values[i];
    worst = std::max(worst, sup_distance(sum, value_iteration(m, g.back())));
  }
  return {worst <= 1e-8, fmt("max |sum_z W_z - Q*| = %.3g (limit 1e-8)", worst)};
}

Outcome equivalence() {
  const auto m = build_random_mdp(8, 3, 7);
  auto s = TimescaleSchedule::from_gammas({0.6, 0.9}, 0.05);
  for (std::size_t z = 0; z < 2; ++z) s.lambdas[z] = 0.45 / s.gammas[z];
  auto single = TimescaleSchedule::from_gammas({0.9}, 0.05);
  single.lambdas = {0.5};
  double worst = 0.0, worst_all = 0.0, control = 0.0;
  std::size_t disagree = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto rep = equivalence_run(m, make_onehot_features(m), s, 10000, seed);
    worst = std::max(worst, rep.max_dev);
    worst_all = std::max(worst_all, rep.max_dev_all);
    disagree += rep.disagreement_steps;
    control = std::max(control, equivalence_run(m, make_onehot_features(m), single, 10000, seed).max_dev_all);
  }
  Outcome o{worst <= 1e-8 && control == 0.0,
            fmt("max dev %.3g on agreement steps (limit 1e-8), Z=0 control %.3g", worst, control)};
  o.notes.push_back(fmt("%zu of 50000 steps flagged for argmax disagreement; max dev over all steps %.3g", disagree,
                        worst_all));
  return o;
}

Outcome contraction() {
  const auto m = build_random_mdp(8, 3, 11);
  std::vector<std::pair<double, double>> grid;
  for (double g : {0.5, 0.9, 0.99})
    for (double l : {0.0, 0.5, 0.9, 1.0}) grid.emplace_back(g, l);
  grid.emplace_back(0.9, 1.02);
  bool ok = true;
  double tight = -1.0;
  std::string worst;
  for (auto [g, l] : grid) {
    const auto pi = greedy_policy(value_iteration(m, g));
    const auto rep = audit_contraction(m, g, l, pi, 1000, derive_seed(3, "audit", static_cast<std::uint64_t>(l * 100)));
    ok = ok && rep.max_observed_ratio <= rep.coefficient + 1e-10;
    const double used = rep.coefficient > 0.0 ? rep.max_observed_ratio / rep.coefficient : 0.0;
    if (used > tight) {
      tight = used;
      worst = fmt("(%.2f, %.2f) ratio %.6f vs %.6f", g, l, rep.max_observed_ratio, rep.coefficient);
    }
  }
  return {ok, fmt("13 (gamma, lambda) points x 1000 pairs; tightest %s", worst.c_str())};
}

MdpSpec phased_ring() {
  return build_ring_mdp(5, 0.1, ring_dense_rewards(5, 0.5, 0.0), {NoiseKind::bernoulli_symmetric, 0.5});
}

PhasedExperimentOptions phased_options() {
  PhasedExperimentOptions opt;
  opt.n = 100;
  opt.phases = 20;
  opt.replicates = 500;
  opt.delta = 0.1;
  opt.seed = 1;
  opt.workers = workers();
  return opt;
}

const double kViolationLimit = 0.1 + 3.0 * std::sqrt(0.09 / 500.0);

Outcome thm3() {
  const auto res = run_phased_experiment(phased_ring(), ladder({0.9}, {4}), phased_options());
  return {res.summary.max_freq3 <= kViolationLimit,
          fmt("max per-phase violation frequency %.4f (limit %.4f), eps %.4f", res.summary.max_freq3, kViolationLimit,
              res.epsilon)};
}

Outcome thm4() {
  const auto mdp = phased_ring();
  const auto opt = phased_options();
  const auto gammas = std::vector<double>{0.5, 0.9};
  const auto res = run_phased_experiment(mdp, ladder(gammas, k_schedule_from_gammas(gammas)), opt);

  auto small = opt;
  small.replicates = 50;
  const auto eq = run_phased_experiment(mdp, ladder(gammas, {4, 4}), small);
  double collapse = 0.0;
  for (const auto& r : eq.records) {
    if (!r.has_bounds) continue;
    const auto& prev = eq.records[r.replicate * (small.phases + 1) + r.phase - 1];
    collapse = std::max(collapse, std::abs(r.bound4.total - thm3_bound(eq.epsilon, 0.9, 4, prev.err_w_sum())));
  }
  const bool ok = res.summary.max_freq4 <= kViolationLimit && res.summary.sign_structure_ok && collapse <= 1e-12;
  const auto k = k_schedule_from_gammas(gammas);
  return {ok, fmt("k = {%zu, %zu}, max violation frequency %.4f (limit %.4f), sign structure %s, equal-k gap %.3g",
                  k[0], k[1], res.summary.max_freq4, kViolationLimit,
                  res.summary.sign_structure_ok ? "ok" : "broken", collapse)};
}

Outcome qdelta_convergence() {
  TrainOptions opt;
  opt.episodes = 2000;
  opt.steps_per_episode = 100;
  opt.epsilon = {1.0, 0.05, 100000};
  opt.seed = 1;

  const auto ring = build_ring_mdp(5, 0.0, ring_dense_rewards(5, 0.5, 0.0));
  const auto oracle = value_iteration(ring, 0.9);
  const auto sched = TimescaleSchedule::from_gammas({0.5, 0.9}, 0.1);
  const auto res = run_qdelta(ring, sched, opt, UpdateVariant::multi_step, MaxMode::aggregate, oracle);
  const double err = res.metrics.back().sup_error;

  // Z = 0 against Q-learning on the same stream, compared after every step.
  std::vector<std::vector<double>> base, delta;
  base.reserve(200000);
  delta.reserve(200000);
  run_q_learning(ring, 0.9, 0.1, opt, std::nullopt,
                 [&](std::size_t, const QTable& q) { base.push_back(q.values); });
  run_qdelta(ring, TimescaleSchedule::from_gammas({0.9}, 0.1), opt, UpdateVariant::multi_step, MaxMode::aggregate,
             std::nullopt, [&](std::size_t, const DeltaTable& t) { delta.push_back(t.component(0).values); });
  const bool identical = base == delta && base.size() == 200000;

  Outcome o{err <= 0.05 && identical,
            fmt("dense ring, k = {1, 1}: ||Q - Q*|| = %.3g (limit 0.05); Z=0 bitwise equal over %zu steps: %s", err,
                base.size(), identical ? "yes" : "no")};

  // Diagnostics on the single-arc ring and with longer windows.
  const auto arc = build_ring_mdp(5, 0.0, ring_single_arc_rewards(5, 0, 1.0));
  const auto arc_oracle = value_iteration(arc, 0.9);
  const double arc1 = run_qdelta(arc, sched, opt, UpdateVariant::multi_step, MaxMode::aggregate, arc_oracle)
                          .metrics.back()
                          .sup_error;
  auto long_k = sched;
  long_k.k = {2, 10};
  const double arc10 = run_qdelta(arc, long_k, opt, UpdateVariant::multi_step, MaxMode::aggregate, arc_oracle)
                           .metrics.back()
                           .sup_error;
  const double dense10 = run_qdelta(ring, long_k, opt, UpdateVariant::multi_step, MaxMode::aggregate, oracle)
                             .metrics.back()
                             .sup_error;
  o.notes.push_back(fmt("single-arc ring: k = {1, 1} error %.3g, k = {2, 10} error %.3g; dense ring k = {2, 10} error %.3g",
                        arc1, arc10, dense10));
  return o;
}

Outcome gae_reduction() {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto m = build_random_mdp(6, 3, 50 + i);
    auto s = TimescaleSchedule::from_gammas({0.85});
    s.lambdas = {0.7};
    auto t = DeltaTable::zeros(s, m);
    Rng rng = make_rng(derive_seed(9, "gae", i));
    for (StateId st = 0; st < 6; ++st)
      for (ActionId a = 0; a < 3; ++a) t.at(0, st, a) = uniform_real(rng, -1, 1);
    const auto traj = sample_trajectory(m, uniform_random_policy(3), 60, derive_seed(9, "traj", i));
    const auto a = gae(t.component(0), traj, 0.7, 32).a_delta;
    const auto b = gae_delta(t, traj, 32).a_delta;
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  return {worst <= 1e-12, fmt("max |A_delta - A_gae| = %.3g over 100 trajectories (limit 1e-12)", worst)};
}

struct PairedGain {
  double mean = 0.0;
  double se = 0.0;
};

PairedGain ppo_gain(AdvantageBaseline baseline) {
  const auto ring = build_ring_mdp(5, 0.0, ring_dense_rewards(5, 0.5, 0.0));
  auto s = TimescaleSchedule::from_gammas({0.5, 0.9}, 0.1);
  s.lambdas = {0.5, 0.5};
  std::vector<double> diffs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PpoOptions opt;
    opt.iterations = 200;
    opt.ratio_mode = RatioMode::policy_likelihood;
    opt.baseline = baseline;
    opt.seed = seed;
    const auto res = run_ppo_qdelta(ring, s, make_onehot_features(ring), opt);
    const std::uint64_t eval_seed = derive_seed(seed, "final-eval", 0);
    const auto untrained = ActorModel::tabular(5, 2, opt.temperature);
    const double before = evaluate_policy(ring, untrained, 1000, opt.steps_per_episode, eval_seed).mean;
    const double after = evaluate_policy(ring, res.actor, 1000, opt.steps_per_episode, eval_seed).mean;
    diffs.push_back(after - before);
  }
  const auto sum = summarize(diffs);
  return {sum.mean, sum.stddev / std::sqrt(static_cast<double>(diffs.size()))};
}

Outcome ppo_learning() {
  const auto g = ppo_gain(AdvantageBaseline::action_value);
  Outcome o{g.mean > 0.0 && g.mean >= 3.0 * g.se,
            fmt("action-value baseline: paired gain %.3f, 3 se = %.3f", g.mean, 3.0 * g.se)};
  const auto sv = ppo_gain(AdvantageBaseline::state_value);
  o.notes.push_back(fmt("state-value baseline variant: paired gain %.3f, 3 se = %.3f", sv.mean, 3.0 * sv.se));
  return o;
}

Outcome reproducibility() {
  const nlohmann::json ring = {{"type", "ring"},
                               {"n_states", 5},
                               {"slip", 0.1},
                               {"rewards", {{"dense", {{"clockwise", 0.5}, {"stay", 0}}}}},
                               {"noise", {{"kind", "bernoulli_symmetric"}, {"param", 0.5}}}};
  const nlohmann::json random = {{"type", "random"}, {"n_states", 6}, {"n_actions", 3}, {"seed", 4}};
  const std::vector<nlohmann::json> configs = {
      {{"kind", "solve"}, {"env", ring}, {"schedule", {{"gammas", {0.5, 0.9}}}}, {"seed", 3}},
      {{"kind", "train"}, {"env", ring}, {"schedule", {{"gammas", {0.5, 0.9}}, {"k", {2, 4}}}},
       {"episodes", 50}, {"replicates", 6}, {"seed", 3}},
      {{"kind", "equiv"}, {"env", random}, {"schedule", {{"gammas", {0.6, 0.9}}, {"lambdas", {0.75, 0.5}}, {"alphas", 0.05}}},
       {"steps", 500}, {"replicates", 6}, {"seed", 3}},
      {{"kind", "contraction"}, {"env", random}, {"gammas", {0.5, 0.9}}, {"lambdas", {0.0, 0.5, 1.0}}, {"pairs", 50},
       {"seed", 3}},
      {{"kind", "phased"}, {"env", ring}, {"schedule", {{"gammas", {0.5, 0.9}}}}, {"n", 10}, {"phases", 5},
       {"replicates", 8}, {"seed", 3}},
      {{"kind", "ppo"}, {"env", ring}, {"schedule", {{"gammas", {0.5, 0.9}}, {"lambdas", 0.5}}}, {"iterations", 20},
       {"eval_every", 5}, {"eval_episodes", 20}, {"replicates", 4}, {"seed", 3}},
  };
  std::size_t compared = 0;
  std::string bad;
  for (const auto& j : configs) {
    const auto c = config_from_json(j);
    const auto a = produce(c, 1);
    const auto b = produce(c, 1);
    const auto p = produce(c, 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
      ++compared;
      if (a[i].csv.str() != b[i].csv.str() || a[i].csv.str() != p[i].csv.str()) bad += " " + a[i].name;
    }
  }
  return {bad.empty(), bad.empty() ? fmt("%zu CSV artifacts identical across reruns and worker counts 1/4", compared)
                                   : "differing artifacts:" + bad};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "oracle telescoping", 5, telescoping},
      {2, "TD(lambda) equivalence", 30, equivalence},
      {3, "T_lambda contraction audit", 30, contraction},
      {4, "phased Q bound", 300, thm3},
      {5, "phased W bound and sign structure", 300, thm4},
      {6, "tabular Q(Delta) convergence", 60, qdelta_convergence},
      {7, "GAE reduction", 1, gae_reduction},
      {8, "PPO learning smoke test", 120, ppo_learning},
      {9, "reproducibility", 60, reproducibility},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass;
    if (!pass) ++failed;
    std::printf("%s  %d  %-34s %s [%.2f s, budget %.0f s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, c.budget_s);
    for (const auto& n : o.notes) std::printf("        note: %s\n", n.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
