#include "wentzell/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

constexpr const char* kOutEnv = "WENTZELL_OUT_DIR";

std::string default_out_dir()
{
  if (const char* env = std::getenv(kOutEnv); env && *env)
    return env;
  return "wentzell_out";
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Heat equation with dynamic boundary conditions: simulation, Carleman and observability "
               "checks, boundary null control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", WENTZELL_VERSION);

  std::string config_path;
  std::string out_dir;
  unsigned threads = 1;
  auto* run = app.add_subcommand("run", "Run one experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, std::string("Output directory (default: the config's output field, then $") +
                                        kOutEnv + ", then ./wentzell_out)");
  run->add_option("--threads", threads, "Worker threads for sample and sweep parallelism")
      ->check(CLI::Range(1u, 1024u));

  CLI11_PARSE(app, argc, argv);

  wentzell::ExperimentConfig config;
  try {
    config = wentzell::load_config(config_path);
  } catch (const wentzell::ConfigError& e) {
    std::cerr << e.to_line() << '\n';
    return 2;
  }

  wentzell::RunOptions opts;
  opts.threads = threads;
  if (!out_dir.empty())
    opts.out_dir = out_dir;
  else if (config.output)
    opts.out_dir = *config.output;
  else
    opts.out_dir = default_out_dir();

  try {
    const wentzell::RunOutcome r = wentzell::run_experiment(config, opts);
    if (r.exit_code != 0) {
      wentzell::json err;
      err["error"] = "numerical_failure";
      err["message"] = r.manifest.value("error", std::string());
      err["manifest"] = opts.out_dir + "/manifest.json";
      std::cerr << err.dump() << '\n';
      return r.exit_code;
    }
    std::cout << opts.out_dir << "/manifest.json\n";
    return 0;
  } catch (const wentzell::ConfigError& e) {
    std::cerr << e.to_line() << '\n';
    return 2;
  } catch (const std::exception& e) {
    wentzell::json err;
    err["error"] = "runtime_error";
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    return 1;
  }
}
