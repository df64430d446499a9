// qdelta <kind> --config <path> [--out <dir>] [--workers N] [--seed S]
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qdelta/config.hpp"
#include "qdelta/error.hpp"
#include "qdelta/parallel.hpp"
#include "qdelta/runner.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int fail(const char* category, int code, const std::string& msg) {
  // One line, tab-separated: "error", category, message.
  std::string flat = msg;
  for (char& ch : flat)
    if (ch == '\n' || ch == '\t') ch = ' ';
  std::cerr << "error\t" << category << '\t' << flat << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-timescale Q-learning experiments"};
  std::string kind, config_path, out_dir;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
  app.add_option("kind", kind, "solve | train | equiv | contraction | phased | ppo")->required();
  app.add_option("--config", config_path, "experiment configuration (JSON)")->required();
  app.add_option("--out", out_dir, "output directory (default: config 'out' field)");
  app.add_option("--workers", workers, "worker threads (default: QDELTA_WORKERS or 1)");
  app.add_option("--seed", seed, "override the master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("config", kExitConfig, e.what());
  }

  try {
    auto config = qdelta::load_config(config_path);
    if (kind != qdelta::to_string(config.kind))
      throw qdelta::ConfigError("command kind '" + kind + "' does not match config kind '" +
                                qdelta::to_string(config.kind) + "'");
    if (seed) config.seed = *seed;
    const std::size_t n_workers = workers ? *workers : qdelta::workers_from_env(config.workers.value_or(1));
    const std::string dir = out_dir.empty() ? config.out : out_dir;
    const auto result = qdelta::run(config, dir, n_workers);
    for (const auto& f : result.files) std::cout << f.string() << '\n';
    std::cout << result.manifest.string() << '\n';
    return 0;
  } catch (const qdelta::Error& e) {
    const int code = e.category() == qdelta::ErrorCategory::config    ? kExitConfig
                     : e.category() == qdelta::ErrorCategory::numeric ? kExitNumeric
                                                                      : kExitIo;
    return fail(qdelta::to_string(e.category()), code, e.what());
  } catch (const std::exception& e) {
    return fail("numeric", kExitNumeric, e.what());
  }
}
