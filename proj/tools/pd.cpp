// Command-line entry point: pd <preset> [--config FILE] [--seed N] [--out DIR]
// Exit codes: 0 success, 1 bad arguments or config, 2 runtime failure.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pd/harness/config.hpp"
#include "pd/harness/run.hpp"

int main(int argc, char** argv) {
  using namespace pd::harness;

  CLI::App app{"Policy distillation experiments"};
  std::string preset_text;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  bool quiet = false;

  std::string presets;
  for (Preset p : all_presets()) presets += (presets.empty() ? "" : ", ") + std::string(preset_name(p));
  app.add_option("preset", preset_text, "One of: " + presets)->required();
  app.add_option("--config", config_path, "Experiment config file");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed; overrides the config");
  app.add_option("--out", out_dir, "Output directory (run id appended)");
  app.add_flag("-q,--quiet", quiet, "Only print results");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Preset preset;
  ExperimentConfig config;
  try {
    preset = parse_preset(preset_text);
    if (!config_path.empty()) config = load_config(config_path);
    if (*seed_opt) config.seed = seed;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  RunOptions options;
  options.threads = threads_from_env();
  options.log = quiet ? nullptr : &std::cerr;
  options.out = &std::cout;
  try {
    const std::filesystem::path dir =
        std::filesystem::path(out_dir) / (std::string(preset_name(preset)) + "-" + run_id(preset, config));
    const RunSummary s = run_experiment(preset, config, dir, options);
    std::cerr << "run " << s.run_id << " finished in " << s.wall_seconds << " s, output in "
              << dir.string() << "\n";
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
