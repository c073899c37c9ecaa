#include "pd/env/trace.hpp"

#include <numeric>
#include <string>

namespace pd::env {

double EpisodeTrace::total_reward() const {
  return std::accumulate(rewards.begin(), rewards.end(), 0.0);
}

EpisodeTrace record_episode(GameState& state, ObservationStack stack, const ActionFn& policy) {
  EpisodeTrace trace;
  trace.game = state.id();
  trace.frames.push_back(state.observe());
  while (!state.terminal()) {
    const int action = policy(state, stack);
    StepResult r = state.step(action);
    stack.push(r.observation);
    trace.actions.push_back(action);
    trace.rewards.push_back(r.reward);
    trace.terminals.push_back(r.terminal);
    trace.frames.push_back(std::move(r.observation));
  }
  return trace;
}

CsvTable trace_table(const EpisodeTrace& trace) {
  CsvTable t({"step", "action", "reward", "terminal"});
  for (std::size_t i = 0; i < trace.actions.size(); ++i) {
    t.add_row({std::to_string(i), std::to_string(trace.actions[i]), format_double(trace.rewards[i]),
               trace.terminals[i] ? "1" : "0"});
  }
  return t;
}

CsvTable frames_table(const EpisodeTrace& trace) {
  std::vector<std::string> header{"frame"};
  for (int i = 0; i < kFramePixels; ++i) header.push_back("p" + std::to_string(i));
  CsvTable t(std::move(header));
  for (std::size_t f = 0; f < trace.frames.size(); ++f) {
    std::vector<std::string> row{std::to_string(f)};
    for (double v : trace.frames[f].pixels) row.push_back(format_double(v));
    t.add_row(std::move(row));
  }
  return t;
}

void export_trace(const EpisodeTrace& trace, const std::filesystem::path& csv_path,
                  const std::filesystem::path& frames_path) {
  trace_table(trace).write(csv_path);
  frames_table(trace).write(frames_path);
}

}  // namespace pd::env
