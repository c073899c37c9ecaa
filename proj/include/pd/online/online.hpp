#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "pd/csv.hpp"
#include "pd/distill/distill.hpp"
#include "pd/dqn/agent.hpp"
#include "pd/env/game.hpp"
#include "pd/nn/network.hpp"

namespace pd::online {

struct SnapshotEvent {
  std::int64_t env_steps = 0;
  double score = 0.0;
  std::uint32_t generation = 0;
};

// Best policy seen so far during DQN training.
struct BestPolicyTracker {
  double best_score = -std::numeric_limits<double>::infinity();
  nn::ParameterStore best_snapshot;
  std::vector<SnapshotEvent> history;  // scores strictly increase

  bool has_snapshot() const { return !history.empty(); }
  std::uint32_t generation() const { return history.empty() ? 0 : history.back().generation; }
};

// Copies params into the tracker when eval_score beats the best so far
// (strictly). Returns whether a snapshot was taken. Generations count from 1.
bool maybe_snapshot(BestPolicyTracker& tracker, const nn::ParameterStore& params, double eval_score,
                    std::int64_t env_steps = 0);

// Running maximum of a score sequence.
std::vector<double> running_best(std::span<const double> scores);

struct OnlineConfig {
  // DQN run; its eval_every / eval_episodes set the snapshot cadence.
  dqn::TrainDqnConfig dqn;
  nn::NetworkSpec student_spec;  // no hidden layers: same as the DQN network
  distill::LossKind loss = distill::LossKind::kKl;
  double tau = 0.01;
  int teacher_steps_per_block = 1000;
  int updates_per_block = 500;
  int batch_size = 32;
  nn::RmsPropConfig optimizer{};
  std::size_t buffer_capacity = 50000;
  double teacher_epsilon = 0.05;
  int max_nullops = 8;
  std::uint64_t seed = 1;

  void validate() const;

  friend bool operator==(const OnlineConfig&, const OnlineConfig&) = default;
};

struct OnlineRow {
  std::int64_t env_steps = 0;
  double dqn_eval = 0.0;
  double best_so_far = 0.0;
  double student_eval = 0.0;
  bool snapshot_event = false;
};

CsvTable online_table(const std::vector<OnlineRow>& rows);

struct OnlineResult {
  std::vector<OnlineRow> rows;
  BestPolicyTracker tracker;
  // Parameters of every snapshot, indexed by generation - 1.
  std::vector<nn::ParameterStore> snapshots;
  nn::NetworkSpec student_spec;
  nn::ParameterStore student_params;
  distill::DistillBuffer buffer;
  std::int64_t student_updates = 0;
};

// DQN step block, snapshot check, distillation block, repeated until the
// DQN budget is spent. The student only ever sees snapshot teachers.
OnlineResult online_distill(env::GameId game, const OnlineConfig& config);

}  // namespace pd::online
