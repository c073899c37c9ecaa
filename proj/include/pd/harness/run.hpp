#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pd/harness/config.hpp"

namespace pd::harness {

struct RunOptions {
  int threads = 1;             // evaluation episodes in flight
  std::ostream* log = nullptr;  // progress lines; null for silence
  std::ostream* out = nullptr;  // preset results meant for the terminal
};

struct StageTiming {
  std::string stage;
  std::string task;
  double seconds = 0.0;
};

struct RunSummary {
  std::string run_id;
  double wall_seconds = 0.0;
  std::vector<std::string> artifacts;  // relative to the output directory
  std::vector<StageTiming> timings;    // also in manifest.json, never in CSVs
};

// Hex digest of the preset and the serialized config.
std::string run_id(Preset preset, const ExperimentConfig& config);

// PD_THREADS if set to a positive integer, else 1.
int threads_from_env();

// Runs one preset, writing every artifact and manifest.json under out_dir
// (created if needed). Throws ConfigError for settings the preset cannot
// use and other exceptions for runtime failures.
RunSummary run_experiment(Preset preset, const ExperimentConfig& config,
                          const std::filesystem::path& out_dir, const RunOptions& options = {});

}  // namespace pd::harness
