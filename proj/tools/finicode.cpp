#include <CLI11.hpp>

#include <finicode/experiments.hpp>

#include <iostream>

namespace fx = finicode::experiments;

int main(int argc, char** argv) {
  CLI::App app{"finicode: perfect sampling and finitary coding experiments"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  for (const auto& name : fx::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "INI experiment file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides [run] seed");
    sub->add_option("--out", out_dir, "directory for CSV files and summary.json");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    auto cfg = finicode::Config::load(config_path);
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    fx::Sink sink = out_dir.empty() ? fx::Sink{} : fx::Sink(out_dir, cfg.seed(), cfg.hash());
    const auto out = fx::run(cmd, cfg, sink);
    for (const auto& c : out.checks)
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    std::cout << out.summary.dump() << '\n';
    return out.exit_code();
  } catch (const finicode::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
