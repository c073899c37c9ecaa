#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "pd/csv.hpp"
#include "pd/env/game.hpp"

namespace pd::env {

using ActionFn = std::function<int(const GameState&, const ObservationStack&)>;

struct EpisodeTrace {
  GameId game = GameId::kCatch;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<bool> terminals;
  std::vector<Observation> frames;  // frames[0] is the start frame, frames[i+1] follows step i

  double total_reward() const;
};

// Plays from the current state of `state` until terminal.
EpisodeTrace record_episode(GameState& state, ObservationStack stack, const ActionFn& policy);

// Columns: step, action, reward, terminal.
CsvTable trace_table(const EpisodeTrace& trace);
// One row per frame: frame index followed by the flat pixel values.
CsvTable frames_table(const EpisodeTrace& trace);

void export_trace(const EpisodeTrace& trace, const std::filesystem::path& csv_path,
                  const std::filesystem::path& frames_path);

}  // namespace pd::env
