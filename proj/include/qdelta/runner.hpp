#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdelta/config.hpp"
#include "qdelta/error.hpp"
#include "qdelta/format.hpp"
#include "qdelta/lambda.hpp"
#include "qdelta/linear.hpp"
#include "qdelta/oracle.hpp"
#include "qdelta/parallel.hpp"
#include "qdelta/phased.hpp"
#include "qdelta/ppo.hpp"
#include "qdelta/rng.hpp"
#include "qdelta/tabular.hpp"

namespace qdelta {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// One CSV output of an experiment.
struct Artifact {
  std::string name;  ///< file name inside the output directory
  CsvWriter csv;
};

namespace detail {

inline std::vector<std::string> scale_columns(const std::string& prefix, std::size_t n) {
  std::vector<std::string> cols;
  for (std::size_t z = 0; z < n; ++z) cols.push_back(prefix + std::to_string(z));
  return cols;
}

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline std::uint64_t replicate_seed(const ExperimentConfig& c, std::size_t r) {
  return derive_seed(c.seed, "replicate", r);
}

inline FeatureMap build_features(FeatureKind kind, std::size_t dim, const MdpSpec& mdp, std::uint64_t seed) {
  return make_features(kind, mdp, dim, derive_seed(seed, "features", 0));
}

inline std::vector<Artifact> produce_solve(const ExperimentConfig& c) {
  Artifact a{"solve.csv", {}};
  if (c.schedule) {
    const auto& sched = *c.schedule;
    const QTable q = value_iteration(c.mdp, sched.gammas[sched.top()], c.tol);
    const auto w = exact_delta_ladder(c.mdp, sched.gammas, c.tol);
    a.csv.header(concat({"state", "action", "q"}, scale_columns("w_", sched.size())));
    for (StateId s = 0; s < c.mdp.n_states; ++s)
      for (ActionId act = 0; act < c.mdp.n_actions; ++act) {
        a.csv.row_begin();
        a.csv.field(s).field(act).field(q.at(s, act));
        for (const auto& wz : w) a.csv.field(wz.at(s, act));
        a.csv.row_end();
      }
  } else {
    const QTable q = value_iteration(c.mdp, *c.gamma, c.tol);
    a.csv.header({"state", "action", "q"});
    for (StateId s = 0; s < c.mdp.n_states; ++s)
      for (ActionId act = 0; act < c.mdp.n_actions; ++act) {
        a.csv.row_begin();
        a.csv.field(s).field(act).field(q.at(s, act));
        a.csv.row_end();
      }
  }
  return {std::move(a)};
}

inline std::vector<Artifact> produce_train(const ExperimentConfig& c, std::size_t workers) {
  const auto& t = c.train;
  const bool baseline = t.algorithm == "q_learning";
  const double gamma = baseline ? *c.gamma : c.schedule->gammas[c.schedule->top()];
  const QTable oracle = value_iteration(c.mdp, gamma);
  std::vector<std::vector<EpisodeMetrics>> per_rep(c.replicates);
  parallel_for(c.replicates, workers, [&](std::size_t r) {
    TrainOptions opt = t.options;
    opt.seed = replicate_seed(c, r);
    if (baseline)
      per_rep[r] = run_q_learning(c.mdp, gamma, t.alpha, opt, oracle).second;
    else
      per_rep[r] = run_qdelta(c.mdp, *c.schedule, opt, t.variant, t.max_mode, oracle).metrics;
  });
  Artifact a{"train.csv", {}};
  a.csv.header({"replicate", "episode", "step", "return", "sup_error", "epsilon"});
  for (std::size_t r = 0; r < per_rep.size(); ++r)
    for (const auto& m : per_rep[r]) {
      a.csv.row_begin();
      a.csv.field(r).field(m.episode).field(m.step).field(m.episode_return).field(m.sup_error).field(m.epsilon);
      a.csv.row_end();
    }
  return {std::move(a)};
}

inline std::vector<Artifact> produce_equiv(const ExperimentConfig& c, std::size_t workers) {
  const auto& q = c.equiv;
  std::vector<EquivalenceReport> reps(c.replicates);
  parallel_for(c.replicates, workers, [&](std::size_t r) {
    const auto seed = replicate_seed(c, r);
    const FeatureMap phi = build_features(q.features, q.feature_dim, c.mdp, seed);
    reps[r] = equivalence_run(c.mdp, phi, *c.schedule, q.steps, seed, q.options);
  });
  Artifact summary{"equiv.csv", {}};
  summary.csv.header({"replicate", "steps", "max_dev", "max_dev_all", "disagreement_steps"});
  Artifact steps{"equiv_steps.csv", {}};
  steps.csv.header({"replicate", "step", "dev_inf_norm", "argmax_agreement_flag"});
  for (std::size_t r = 0; r < reps.size(); ++r) {
    const auto& rep = reps[r];
    summary.csv.row_begin();
    summary.csv.field(r).field(rep.per_step_dev.size()).field(rep.max_dev).field(rep.max_dev_all).field(
        rep.disagreement_steps);
    summary.csv.row_end();
    for (std::size_t t = 0; t < rep.per_step_dev.size(); ++t) {
      steps.csv.row_begin();
      steps.csv.field(r).field(t).field(rep.per_step_dev[t]).field(static_cast<bool>(rep.argmax_agreement[t]));
      steps.csv.row_end();
    }
  }
  return {std::move(summary), std::move(steps)};
}

inline std::vector<Artifact> produce_contraction(const ExperimentConfig& c, std::size_t workers) {
  const auto& a = c.contraction;
  struct Point {
    double gamma, lambda;
  };
  std::vector<Point> grid;
  for (double g : a.gammas)
    for (double l : a.lambdas) grid.push_back({g, l});
  std::vector<std::optional<ContractionReport>> out(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    const auto [g, l] = grid[i];
    if (l >= contraction_lambda_limit(g)) return;
    const auto policy = greedy_policy(value_iteration(c.mdp, g));
    out[i] = audit_contraction(c.mdp, g, l, policy, a.pairs, derive_seed(c.seed, "contraction-point", i), a.mode);
  });
  Artifact art{"contraction.csv", {}};
  art.csv.header({"gamma", "lambda", "in_range", "coefficient_proof", "coefficient_statement", "max_ratio", "n_pairs",
                  "pairs_skipped", "within_bound"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    art.csv.row_begin();
    art.csv.field(grid[i].gamma).field(grid[i].lambda).field(out[i].has_value());
    if (const auto& r = out[i])
      art.csv.field(r->coefficient).field(r->coefficient_statement).field(r->max_observed_ratio).field(
          r->pairs_used).field(r->pairs_skipped).field(r->within_bound);
    else
      art.csv.field(nan).field(nan).field(nan).field(0).field(0).field(false);
    art.csv.row_end();
  }
  return {std::move(art)};
}

inline std::vector<Artifact> produce_phased(const ExperimentConfig& c, std::size_t workers) {
  const auto& p = c.phased;
  PhasedExperimentOptions opt;
  opt.n = p.n;
  opt.phases = p.phases;
  opt.replicates = c.replicates;
  opt.delta = p.delta;
  opt.seed = c.seed;
  opt.workers = workers;
  opt.phased = p.options;
  const auto res = run_phased_experiment(c.mdp, *c.schedule, opt);
  const std::size_t Z = c.schedule->size();

  Artifact rec{"phased.csv", {}};
  rec.csv.header(concat(concat({"replicate", "phase", "epsilon", "err_q"}, scale_columns("err_w_", Z)),
                        {"err_w_sum", "bound3", "bound4", "var_term", "var_reduction", "bias_intro",
                         "bootstrap_bias", "violated3", "violated4"}));
  for (const auto& r : res.records) {
    rec.csv.row_begin();
    rec.csv.field(r.replicate).field(r.phase).field(r.epsilon).field(r.err_q);
    for (double e : r.err_w) rec.csv.field(e);
    rec.csv.field(r.err_w_sum()).field(r.bound3).field(r.has_bounds ? r.bound4.total : std::nan(""));
    rec.csv.field(r.bound4.variance_term).field(r.bound4.variance_reduction).field(r.bound4.bias_introduction);
    rec.csv.field(r.bound4.bootstrap_bias).field(r.violated3).field(r.violated4);
    rec.csv.row_end();
  }
  Artifact sum{"phased_summary.csv", {}};
  sum.csv.header({"phase", "violation_freq3", "violation_freq4"});
  for (std::size_t t = 0; t < res.summary.violation_freq3.size(); ++t) {
    sum.csv.row_begin();
    sum.csv.field(t).field(res.summary.violation_freq3[t]).field(res.summary.violation_freq4[t]);
    sum.csv.row_end();
  }
  return {std::move(rec), std::move(sum)};
}

inline std::vector<Artifact> produce_ppo(const ExperimentConfig& c, std::size_t workers) {
  const std::size_t Z = c.schedule->size();
  struct Rep {
    PpoResult result;
    EvaluationSummary untrained, trained;
  };
  std::vector<Rep> reps(c.replicates);
  parallel_for(c.replicates, workers, [&](std::size_t r) {
    PpoOptions opt = c.ppo;
    opt.seed = replicate_seed(c, r);
    opt.workers = 1;
    const FeatureMap phi = build_features(c.ppo_features, c.ppo_feature_dim, c.mdp, opt.seed);
    reps[r].result = run_ppo_qdelta(c.mdp, *c.schedule, phi, opt);
    const auto eval_seed = derive_seed(opt.seed, "final-eval", 0);
    const ActorModel untrained = ActorModel::tabular(c.mdp.n_states, c.mdp.n_actions, opt.temperature);
    reps[r].untrained = evaluate_policy(c.mdp, untrained, opt.eval_episodes, opt.steps_per_episode, eval_seed);
    reps[r].trained =
        evaluate_policy(c.mdp, reps[r].result.actor, opt.eval_episodes, opt.steps_per_episode, eval_seed);
  });
  Artifact curve{"ppo.csv", {}};
  curve.csv.header(concat(concat({"replicate", "iteration", "mean_return", "eval_return", "actor_loss"},
                                 scale_columns("critic_loss_", Z)),
                          {"ratio_skips"}));
  Artifact eval{"ppo_eval.csv", {}};
  eval.csv.header({"replicate", "untrained_mean", "untrained_std", "trained_mean", "trained_std", "ratio_skips"});
  for (std::size_t r = 0; r < reps.size(); ++r) {
    for (const auto& m : reps[r].result.curve) {
      curve.csv.row_begin();
      curve.csv.field(r).field(m.iteration).field(m.mean_return).field(m.eval_return).field(m.actor_loss);
      for (double l : m.critic_loss_per_z) curve.csv.field(l);
      curve.csv.field(m.ratio_skips);
      curve.csv.row_end();
    }
    eval.csv.row_begin();
    eval.csv.field(r).field(reps[r].untrained.mean).field(reps[r].untrained.stddev).field(reps[r].trained.mean);
    eval.csv.field(reps[r].trained.stddev).field(reps[r].result.ratio_skips);
    eval.csv.row_end();
  }
  return {std::move(curve), std::move(eval)};
}

}  // namespace detail

/// Computes every CSV output of an experiment in memory. Output is a pure
/// function of the configuration; `workers` only affects wall time.
inline std::vector<Artifact> produce(const ExperimentConfig& c, std::size_t workers = 1) {
  switch (c.kind) {
    case ExperimentKind::solve: return detail::produce_solve(c);
    case ExperimentKind::train: return detail::produce_train(c, workers);
    case ExperimentKind::equiv: return detail::produce_equiv(c, workers);
    case ExperimentKind::contraction: return detail::produce_contraction(c, workers);
    case ExperimentKind::phased: return detail::produce_phased(c, workers);
    case ExperimentKind::ppo: return detail::produce_ppo(c, workers);
  }
  throw ConfigError("unsupported experiment kind");
}

struct RunResult {
  std::vector<std::filesystem::path> files;
  std::filesystem::path manifest;
  double wall_time_seconds = 0.0;
};

/// Runs an experiment, writes its CSV files into `out_dir` and a manifest
/// sufficient to re-run it.
inline RunResult run(const ExperimentConfig& c, const std::filesystem::path& out_dir, std::size_t workers = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  auto artifacts = produce(c, workers);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());

  RunResult res;
  res.wall_time_seconds = wall;
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& a : artifacts) {
    const auto path = out_dir / a.name;
    a.csv.save(path.string());
    res.files.push_back(path);
    outputs.push_back(a.name);
  }

  nlohmann::json config = c.raw;
  config["seed"] = c.seed;
  const nlohmann::json manifest = {{"kind", to_string(c.kind)},
                                   {"config", std::move(config)},
                                   {"seed", c.seed},
                                   {"workers", workers},
                                   {"wall_time_seconds", wall},
                                   {"artifact_version", kArtifactVersion},
                                   {"outputs", std::move(outputs)}};
  res.manifest = out_dir / (std::string(to_string(c.kind)) + ".manifest.json");
  std::ofstream f(res.manifest, std::ios::binary);
  if (!f) throw IoError("cannot open " + res.manifest.string() + " for writing");
  f << manifest.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + res.manifest.string());
  return res;
}

}  // namespace qdelta
