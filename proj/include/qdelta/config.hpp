#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdelta/delta_table.hpp"
#include "qdelta/error.hpp"
#include "qdelta/lambda.hpp"
#include "qdelta/linear.hpp"
#include "qdelta/mdp.hpp"
#include "qdelta/phased.hpp"
#include "qdelta/ppo.hpp"
#include "qdelta/tabular.hpp"

namespace qdelta {

enum class ExperimentKind { solve, train, equiv, contraction, phased, ppo };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::solve: return "solve";
    case ExperimentKind::train: return "train";
    case ExperimentKind::equiv: return "equiv";
    case ExperimentKind::contraction: return "contraction";
    case ExperimentKind::phased: return "phased";
    case ExperimentKind::ppo: return "ppo";
  }
  return "?";
}

inline std::optional<ExperimentKind> experiment_kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::solve, ExperimentKind::train, ExperimentKind::equiv, ExperimentKind::contraction,
                 ExperimentKind::phased, ExperimentKind::ppo})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

/// All validation failures of a configuration, reported together.
class ConfigValidationError : public ConfigError {
 public:
  explicit ConfigValidationError(std::vector<std::string> errors)
      : ConfigError(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errs) {
    std::string out = std::to_string(errs.size()) + " configuration error(s): ";
    for (std::size_t i = 0; i < errs.size(); ++i) out += (i ? "; " : "") + errs[i];
    return out;
  }
  std::vector<std::string> errors_;
};

struct TrainConfig {
  std::string algorithm = "qdelta";  // qdelta | q_learning
  TrainOptions options;
  UpdateVariant variant = UpdateVariant::multi_step;
  MaxMode max_mode = MaxMode::aggregate;
  double alpha = 0.1;  // baseline learning rate
};

struct EquivConfig {
  std::size_t steps = 10000;
  FeatureKind features = FeatureKind::onehot;
  std::size_t feature_dim = 0;
  EquivalenceOptions options;
};

struct ContractionConfig {
  std::vector<double> gammas;
  std::vector<double> lambdas;
  std::size_t pairs = 1000;
  AuditMode mode = AuditMode::fixed_policy;
};

struct PhasedConfig {
  std::size_t n = 100;
  std::size_t phases = 20;
  double delta = 0.1;
  PhasedOptions options;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::solve;
  nlohmann::json raw;  ///< document as loaded, echoed into manifests
  MdpSpec mdp;
  std::optional<double> gamma;
  std::optional<TimescaleSchedule> schedule;
  double tol = 1e-12;
  std::uint64_t seed = 0;
  std::size_t replicates = 1;
  std::optional<std::size_t> workers;
  std::string out = "out";
  TrainConfig train;
  EquivConfig equiv;
  ContractionConfig contraction;
  PhasedConfig phased;
  PpoOptions ppo;
  FeatureKind ppo_features = FeatureKind::onehot;
  std::size_t ppo_feature_dim = 0;
};

namespace detail {

// Reads typed fields from one JSON object and remembers which keys were
// consumed, so leftovers can be reported as unknown.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string where, std::vector<std::string>& errs)
      : obj_(obj), where_(std::move(where)), errs_(errs) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.is_object() && obj_.contains(key);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  template <typename T>
  std::optional<T> get(const std::string& key, const char* expected) {
    if (!has(key)) return std::nullopt;
    try {
      return obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      errs_.push_back(path(key) + ": expected " + expected);
      return std::nullopt;
    }
  }

  double number(const std::string& key, double fallback) {
    return get<double>(key, "a number").value_or(fallback);
  }
  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      errs_.push_back(path(key) + ": expected a non-negative integer");
      return fallback;
    }
    return v.get<std::size_t>();
  }
  std::string text(const std::string& key, const std::string& fallback) {
    return get<std::string>(key, "a string").value_or(fallback);
  }
  bool flag(const std::string& key, bool fallback) { return get<bool>(key, "a boolean").value_or(fallback); }

  /// A number or a list of numbers.
  std::optional<std::vector<double>> numbers(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const auto& v = obj_.at(key);
    if (v.is_number()) return std::vector<double>{v.get<double>()};
    return get<std::vector<double>>(key, "a number or a list of numbers");
  }

  const nlohmann::json* object(const std::string& key) {
    if (!has(key)) return nullptr;
    const auto& v = obj_.at(key);
    if (!v.is_object()) {
      errs_.push_back(path(key) + ": expected an object");
      return nullptr;
    }
    return &v;
  }

  template <typename Enum>
  Enum choice(const std::string& key, Enum fallback, std::initializer_list<std::pair<const char*, Enum>> options) {
    const auto s = get<std::string>(key, "a string");
    if (!s) return fallback;
    std::string names;
    for (const auto& [name, value] : options) {
      if (*s == name) return value;
      names += names.empty() ? name : std::string(", ") + name;
    }
    errs_.push_back(path(key) + ": '" + *s + "' is not one of " + names);
    return fallback;
  }

  void error(const std::string& key, const std::string& msg) { errs_.push_back(path(key) + ": " + msg); }

  /// Reports every key that was never asked for.
  void reject_unknown() {
    if (!obj_.is_object()) return;
    for (const auto& item : obj_.items())
      if (!seen_.count(item.key())) errs_.push_back("unknown field '" + path(item.key()) + "'");
  }

 private:
  const nlohmann::json& obj_;
  std::string where_;
  std::vector<std::string>& errs_;
  std::set<std::string> seen_;
};

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline std::optional<MdpSpec> read_env(const nlohmann::json& env, const std::filesystem::path& base,
                                       std::vector<std::string>& errs) {
  FieldReader r(env, "env", errs);
  const std::string type = r.text("type", "");
  auto guarded = [&](auto&& build) -> std::optional<MdpSpec> {
    try {
      return build();
    } catch (const Error& e) {
      errs.push_back(std::string("env: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
      errs.push_back(std::string("env: ") + e.what());
    }
    return std::nullopt;
  };
  std::optional<MdpSpec> out;
  if (type == "ring") {
    const std::size_t n = r.count("n_states", 5);
    const double slip = r.number("slip", 0.0);
    RewardNoise noise;
    if (const auto* nj = r.object("noise")) {
      FieldReader nr(*nj, "env.noise", errs);
      noise.kind = nr.choice("kind", NoiseKind::none,
                             {{"none", NoiseKind::none},
                              {"uniform_clipped", NoiseKind::uniform_clipped},
                              {"bernoulli_symmetric", NoiseKind::bernoulli_symmetric}});
      noise.param = nr.number("param", 0.0);
      nr.reject_unknown();
    }
    const auto terminals = r.get<std::vector<StateId>>("terminals", "a list of state indices").value_or(
        std::vector<StateId>{});
    std::vector<double> means;
    if (const auto* rj = r.object("rewards")) {
      FieldReader rr(*rj, "env.rewards", errs);
      if (const auto* d = rr.object("dense")) {
        FieldReader dr(*d, "env.rewards.dense", errs);
        means = ring_dense_rewards(n, dr.number("clockwise", 0.0), dr.number("stay", 0.0));
        dr.reject_unknown();
      } else if (const auto* a = rr.object("single_arc")) {
        FieldReader ar(*a, "env.rewards.single_arc", errs);
        const std::size_t from = ar.count("from", 0);
        const double value = ar.number("value", 1.0);
        if (from >= n)
          ar.error("from", "must be < n_states");
        else
          means = ring_single_arc_rewards(n, from, value);
        ar.reject_unknown();
      } else if (rr.has("constant")) {
        means.assign(n * 2, rr.number("constant", 0.0));
      } else if (auto m = rr.get<std::vector<double>>("means", "a list of numbers")) {
        means = *m;
      } else {
        errs.push_back("env.rewards: expected one of dense, single_arc, constant, means");
      }
      rr.reject_unknown();
    } else {
      errs.push_back("env.rewards: required for a ring");
    }
    if (!means.empty()) out = guarded([&] { return build_ring_mdp(n, slip, means, noise, terminals); });
  } else if (type == "random") {
    const std::size_t n = r.count("n_states", 8);
    const std::size_t a = r.count("n_actions", 3);
    const auto seed = r.get<std::uint64_t>("seed", "a non-negative integer").value_or(0);
    const double scale = r.number("reward_scale", 1.0);
    out = guarded([&] { return build_random_mdp(n, a, seed, scale); });
  } else if (type == "file") {
    const std::string file = r.text("path", "");
    std::filesystem::path p = file;
    if (p.is_relative()) p = base / p;
    std::ifstream in(p);
    if (!in) {
      r.error("path", "cannot read '" + p.string() + "'");
    } else {
      try {
        const auto doc = nlohmann::json::parse(in);
        out = guarded([&] { return mdp_from_json(doc); });
      } catch (const nlohmann::json::parse_error& e) {
        r.error("path", std::string("parse error: ") + e.what());
      }
    }
  } else if (type == "explicit") {
    for (const char* k : {"n_states", "n_actions", "transition", "mean_reward", "noise", "terminals"}) r.has(k);
    out = guarded([&] { return mdp_from_json(env); });
  } else {
    r.error("type", "must be one of ring, random, file, explicit");
  }
  r.reject_unknown();
  return out;
}

inline std::optional<TimescaleSchedule> read_schedule(const nlohmann::json& j, bool phased,
                                                      std::vector<std::string>& errs) {
  FieldReader r(j, "schedule", errs);
  const auto gammas = r.numbers("gammas");
  if (!gammas || gammas->empty()) {
    errs.push_back("schedule.gammas: required, non-empty");
    r.reject_unknown();
    return std::nullopt;
  }
  const std::size_t n = gammas->size();
  TimescaleSchedule s;
  s.gammas = *gammas;
  auto broadcast = [&](const char* key, double fallback) {
    auto v = r.numbers(key);
    if (!v) return std::vector<double>(n, fallback);
    if (v->size() == 1) return std::vector<double>(n, v->front());
    if (v->size() != n) r.error(key, "needs one entry per gamma");
    return *v;
  };
  if (r.has("k")) {
    auto k = r.get<std::vector<std::size_t>>("k", "a list of positive integers");
    if (k && k->size() != n) r.error("k", "needs one entry per gamma");
    s.k = k.value_or(std::vector<std::size_t>(n, 1));
  } else if (phased) {
    bool ok = true;
    for (double g : s.gammas) ok = ok && g >= 0.0 && g < 1.0;
    s.k = ok ? k_schedule_from_gammas(s.gammas) : std::vector<std::size_t>(n, 1);
  } else {
    s.k.assign(n, 1);
  }
  s.lambdas = broadcast("lambdas", 0.0);
  s.alphas = broadcast("alphas", 0.1);
  for (auto& e : s.violations(phased)) errs.push_back("schedule: " + e);
  r.reject_unknown();
  return s;
}

inline FeatureKind read_features(FieldReader& r, std::size_t& dim, std::vector<std::string>& errs,
                                 const std::string& where) {
  FeatureKind kind = FeatureKind::onehot;
  if (const auto* f = r.object("features")) {
    FieldReader fr(*f, where + ".features", errs);
    kind = fr.choice("kind", FeatureKind::onehot,
                     {{"onehot", FeatureKind::onehot}, {"random_projection", FeatureKind::random_projection}});
    dim = fr.count("dim", 0);
    if (kind == FeatureKind::random_projection && dim == 0) fr.error("dim", "must be >= 1 for random_projection");
    fr.reject_unknown();
  }
  return kind;
}

}  // namespace detail

/// Validates an already-parsed configuration document. Paths in the document
/// are resolved against `base`.
inline ExperimentConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base = ".") {
  std::vector<std::string> errs;
  ExperimentConfig c;
  c.raw = doc;
  if (!doc.is_object()) throw ConfigValidationError({"configuration must be a JSON object"});
  detail::FieldReader r(doc, "", errs);

  const std::string kind = r.text("kind", "");
  if (auto k = experiment_kind_from_string(kind)) {
    c.kind = *k;
  } else {
    errs.push_back("kind: '" + kind + "' is not one of solve, train, equiv, contraction, phased, ppo");
    throw ConfigValidationError(errs);
  }

  if (const auto* env = r.object("env")) {
    if (auto m = detail::read_env(*env, base, errs)) c.mdp = std::move(*m);
  } else {
    errs.push_back("env: required");
  }

  c.seed = r.get<std::uint64_t>("seed", "a non-negative integer").value_or(0);
  c.replicates = r.count("replicates", 1);
  if (r.has("workers")) c.workers = r.count("workers", 1);
  c.out = r.text("out", "out");
  if (c.replicates < 1) r.error("replicates", "must be >= 1");

  const bool phased = c.kind == ExperimentKind::phased;
  if (const auto* s = r.object("schedule")) c.schedule = detail::read_schedule(*s, phased, errs);

  auto need_schedule = [&] {
    if (!c.schedule && !r.has("schedule")) errs.push_back("schedule: required for " + kind);
  };

  switch (c.kind) {
    case ExperimentKind::solve: {
      if (r.has("gamma")) {
        c.gamma = r.number("gamma", 0.0);
        if (!(*c.gamma >= 0.0 && *c.gamma < 1.0)) r.error("gamma", "must lie in [0, 1)");
      }
      if (!c.gamma && !c.schedule && !r.has("schedule")) errs.push_back("gamma: required (or a schedule)");
      c.tol = r.number("tol", 1e-12);
      if (!(c.tol > 0.0)) r.error("tol", "must be > 0");
      break;
    }
    case ExperimentKind::train: {
      auto& t = c.train;
      t.algorithm = r.text("algorithm", "qdelta");
      if (t.algorithm != "qdelta" && t.algorithm != "q_learning")
        r.error("algorithm", "must be one of qdelta, q_learning");
      if (t.algorithm == "q_learning") {
        c.gamma = r.number("gamma", 0.9);
        if (!(*c.gamma >= 0.0 && *c.gamma < 1.0)) r.error("gamma", "must lie in [0, 1)");
        t.alpha = r.number("alpha", 0.1);
        if (!(t.alpha >= 0.0 && t.alpha <= 1.0)) r.error("alpha", "must lie in [0, 1]");
      } else {
        need_schedule();
      }
      t.options.episodes = r.count("episodes", 1000);
      t.options.steps_per_episode = r.count("steps_per_episode", 100);
      t.options.random_start = r.flag("random_start", true);
      if (const auto* e = r.object("epsilon")) {
        detail::FieldReader er(*e, "epsilon", errs);
        t.options.epsilon.start = er.number("start", 1.0);
        t.options.epsilon.end = er.number("end", 0.05);
        t.options.epsilon.anneal_steps = er.count("anneal_steps", 0);
        for (double v : {t.options.epsilon.start, t.options.epsilon.end})
          if (!(v >= 0.0 && v <= 1.0)) er.error("start/end", "must lie in [0, 1]");
        er.reject_unknown();
      }
      t.variant = r.choice("variant", UpdateVariant::multi_step,
                           {{"single_step", UpdateVariant::single_step}, {"multi_step", UpdateVariant::multi_step}});
      t.max_mode = r.choice("max_mode", MaxMode::aggregate,
                            {{"aggregate", MaxMode::aggregate}, {"component", MaxMode::component}});
      break;
    }
    case ExperimentKind::equiv: {
      need_schedule();
      auto& q = c.equiv;
      q.steps = r.count("steps", 10000);
      q.options.truncation = r.count("truncation", 64);
      if (q.options.truncation < 1) r.error("truncation", "must be >= 1");
      q.options.bootstrap = r.choice("bootstrap", EquivalenceBootstrap::shared_greedy,
                                     {{"shared_greedy", EquivalenceBootstrap::shared_greedy},
                                      {"per_scale_max", EquivalenceBootstrap::per_scale_max}});
      q.features = detail::read_features(r, q.feature_dim, errs, "");
      if (c.schedule)
        for (auto& e : equivalence_violations(*c.schedule))
          if (e.find("equivalence") != std::string::npos) errs.push_back("schedule: " + e);
      break;
    }
    case ExperimentKind::contraction: {
      auto& a = c.contraction;
      a.gammas = r.numbers("gammas").value_or(std::vector<double>{});
      a.lambdas = r.numbers("lambdas").value_or(std::vector<double>{});
      if (a.gammas.empty()) errs.push_back("gammas: required, non-empty");
      if (a.lambdas.empty()) errs.push_back("lambdas: required, non-empty");
      for (double g : a.gammas)
        if (!(g >= 0.0 && g < 1.0)) r.error("gammas", "must lie in [0, 1)");
      for (double l : a.lambdas)
        if (!(l >= 0.0)) r.error("lambdas", "must be >= 0");
      a.pairs = r.count("pairs", 1000);
      a.mode = r.choice("mode", AuditMode::fixed_policy,
                        {{"fixed_policy", AuditMode::fixed_policy}, {"nonlinear", AuditMode::nonlinear}});
      break;
    }
    case ExperimentKind::phased: {
      need_schedule();
      auto& p = c.phased;
      p.n = r.count("n", 100);
      p.phases = r.count("phases", 20);
      p.delta = r.number("delta", 0.1);
      if (p.n < 1) r.error("n", "must be >= 1");
      if (!(p.delta > 0.0 && p.delta < 1.0)) r.error("delta", "must lie in the open interval (0, 1)");
      p.options.exploration = r.choice("exploration", PhasedExploration::uniform_random,
                                       {{"uniform_random", PhasedExploration::uniform_random},
                                        {"greedy", PhasedExploration::greedy}});
      p.options.bootstrap = r.choice("w_bootstrap", PhasedBootstrap::sampled_action,
                                     {{"sampled_action", PhasedBootstrap::sampled_action},
                                      {"max_action", PhasedBootstrap::max_action}});
      break;
    }
    case ExperimentKind::ppo: {
      need_schedule();
      auto& p = c.ppo;
      p.horizon = r.count("horizon", 8);
      p.iterations = r.count("iterations", 200);
      p.steps_per_episode = r.count("steps_per_episode", 50);
      p.alpha_omega = r.number("alpha_omega", 0.1);
      p.clip_eps = r.number("clip_eps", 0.2);
      p.epsilon = r.number("epsilon", 0.1);
      p.temperature = r.number("temperature", 1.0);
      p.eval_every = r.count("eval_every", 0);
      p.eval_episodes = r.count("eval_episodes", 100);
      if (p.horizon < 1) r.error("horizon", "must be >= 1");
      if (!(p.clip_eps > 0.0 && p.clip_eps < 1.0)) r.error("clip_eps", "must lie in (0, 1)");
      if (!(p.epsilon >= 0.0 && p.epsilon <= 1.0)) r.error("epsilon", "must lie in [0, 1]");
      if (!(p.temperature > 0.0)) r.error("temperature", "must be > 0");
      p.ratio_mode = r.choice("ratio_mode", RatioMode::policy_likelihood,
                              {{"policy_likelihood", RatioMode::policy_likelihood},
                               {"paper_q_ratio", RatioMode::paper_q_ratio}});
      p.behavior = r.choice("behavior", PpoBehavior::critic_epsilon_greedy,
                            {{"critic_epsilon_greedy", PpoBehavior::critic_epsilon_greedy},
                             {"actor_sample", PpoBehavior::actor_sample}});
      p.weighting = r.choice("weighting", AdvantageWeighting::top_scale,
                             {{"top_scale", AdvantageWeighting::top_scale},
                              {"per_scale", AdvantageWeighting::per_scale}});
      p.baseline = r.choice("baseline", AdvantageBaseline::action_value,
                            {{"action_value", AdvantageBaseline::action_value},
                             {"state_value", AdvantageBaseline::state_value}});
      if (p.weighting == AdvantageWeighting::per_scale && p.baseline == AdvantageBaseline::state_value)
        r.error("baseline", "state_value requires weighting top_scale");
      c.ppo_features = detail::read_features(r, c.ppo_feature_dim, errs, "");
      break;
    }
  }
  r.reject_unknown();
  if (!errs.empty()) throw ConfigValidationError(std::move(errs));
  return c;
}

/// Reads, parses and validates a configuration file. Parse failures report
/// line and column; validation failures list every problem found.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte);
    throw ConfigError("parse error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      e.what());
  }
  return config_from_json(doc, path.parent_path());
}

}  // namespace qdelta
