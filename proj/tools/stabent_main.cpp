// Command-line front end: one subcommand per invocation, configuration from a
// JSON file or a built-in demo, artifacts written to the output directory.

#include "stabent/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"practical-stabilization entropy toolkit"};
  app.require_subcommand(1);

  std::string config_path, demo_name, outdir = "out";
  int jobs = 1;
  app.add_option("--config", config_path, "path to a JSON experiment config");
  app.add_option("--demo", demo_name, "name of a built-in demo configuration");
  app.add_option("--out", outdir, "output directory for artifacts");
  app.add_option("--jobs", jobs, "worker threads (results are identical for any count)")
      ->check(CLI::PositiveNumber);

  const std::vector<std::string> subcommands = {"simulate", "entropy", "bounds",
                                                "fb-entropy", "synth",   "verify",
                                                "sweep",    "check42", "plotdata"};
  for (const auto& name : subcommands) app.add_subcommand(name)->fallthrough();
  auto* list_cmd = app.add_subcommand("list-demos", "print the built-in demo names");

  CLI11_PARSE(app, argc, argv);

  if (list_cmd->parsed()) {
    for (const auto& name : stabent::demos::list_demos()) std::cout << name << "\n";
    return 0;
  }

  try {
    stabent::config::ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = stabent::config::load_config(config_path);
    } else if (!demo_name.empty()) {
      cfg = stabent::demos::demo_config(demo_name);
    } else {
      std::cerr << "error: provide --config PATH or --demo NAME\n";
      return 2;
    }
    const std::string sub = app.get_subcommands().front()->get_name();
    return stabent::runner::run(sub, cfg, outdir, jobs);
  } catch (const stabent::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const stabent::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
