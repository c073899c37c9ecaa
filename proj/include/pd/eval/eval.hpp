#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pd/csv.hpp"
#include "pd/env/game.hpp"
#include "pd/env/trace.hpp"
#include "pd/nn/network.hpp"

namespace pd::eval {

// An action rule bound to the game it was built for.
struct Policy {
  env::GameId game;
  env::ActionFn act;
};

// Greedy over the network's outputs, lowest index on ties. Holds its own
// copy of the parameters.
Policy network_policy(env::GameId game, nn::NetworkSpec spec, nn::ParameterStore params);
Policy scripted_policy(env::GameId game);

struct EpisodeStats {
  std::vector<double> scores;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double ci95 = 0.0;    // half-width, normal approximation

  static EpisodeStats from_scores(std::vector<double> scores);
};

// Episodes from fresh null-op resets of a game seeded with `seed`. Used for
// training-time curves; acceptance scores come from evaluate().
EpisodeStats play_episodes(const Policy& policy, int episodes, double epsilon, std::uint64_t seed,
                           int max_nullops = 0);

struct PoolEntry {
  env::GameState state;
  env::ObservationStack stack;
  int source_step = 0;      // step index within the reference episode
  int source_length = 0;    // length of that reference episode
};

struct StartStatePool {
  env::GameId game = env::GameId::kCatch;
  std::vector<PoolEntry> entries;
};

inline constexpr double kStartWindow = 0.2;

// Plays n_states reference episodes and keeps one state from the first 20%
// of each. Throws std::runtime_error if a reference episode does not end.
StartStatePool build_start_pool(env::GameId game, const Policy& reference, int n_states, Rng& rng);

std::string encode_start_pool(const StartStatePool& pool);
StartStatePool decode_start_pool(const std::string& bytes);

// One episode per start state under epsilon-greedy play; rewards count from
// the restored state. Each episode's exploration stream is keyed by its start
// state, so the mean does not depend on pool order. threads > 1 plays
// episodes concurrently with identical results.
EpisodeStats evaluate(const Policy& policy, const StartStatePool& pool, double epsilon,
                      std::uint64_t seed, int threads = 1);

// 100 * score / teacher_score, absent when teacher_score <= 0.
std::optional<double> relative_score(double score, double teacher_score);
double round_to_decimals(double value, int decimals);

// (prod p_i)^(1/n). Throws std::invalid_argument on an empty list or any
// non-positive entry.
double geometric_mean(std::span<const double> percents);

struct TaskResult {
  std::string task_id;
  double score = 0.0;
  double teacher_score = 0.0;
  std::optional<double> relative_pct;
};

struct EvaluationReport {
  std::string experiment_id;
  std::vector<TaskResult> tasks;
  int episodes_per_evaluation = 0;
  double epsilon = 0.05;

  // Geometric mean of the relative percentages; absent if any is absent.
  std::optional<double> aggregate() const;
  // (experiment_id, task_id, score, teacher_score, relative_pct) plus a
  // trailing geometric_mean row.
  CsvTable to_csv() const;
};

enum class LayerSelector { kFirstConv, kLastDense };
LayerSelector parse_layer_selector(std::string_view name);

struct ActivationSample {
  std::string task_id;
  env::ObservationStack stack;
};

// Rows (task_id, sample_id, a0, a1, ...) of post-rectifier activations.
CsvTable export_activations(const nn::NetworkSpec& spec, const nn::ParameterStore& params,
                            std::span<const ActivationSample> samples, LayerSelector selector);

// Index into nn::layer_layout for the selector; throws if the network has
// no such layer.
std::size_t selected_layer(const nn::NetworkSpec& spec, LayerSelector selector);

CsvTable activation_rows(std::span<const ActivationSample> samples,
                         const std::vector<std::vector<double>>& activations);

}  // namespace pd::eval
