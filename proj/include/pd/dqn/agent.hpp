#pragma once

#include <cstdint>
#include <vector>

#include "pd/csv.hpp"
#include "pd/dqn/replay_memory.hpp"
#include "pd/env/game.hpp"
#include "pd/nn/losses.hpp"
#include "pd/nn/network.hpp"
#include "pd/nn/rmsprop.hpp"

namespace pd::dqn {

struct Transition {
  env::PackedStack state;
  int action = 0;
  double reward = 0.0;
  env::PackedStack next_state;
  bool terminal = false;
};

using TransitionMemory = ReplayMemory<Transition>;

// Desk-scale conv net for 4x12x12 stacks.
nn::NetworkSpec default_teacher_spec(int actions);

class DqnAgent {
 public:
  DqnAgent(nn::NetworkSpec spec, std::uint64_t seed, nn::RmsPropConfig optimizer = {},
           double gamma = 0.99);
  DqnAgent(nn::NetworkSpec spec, nn::ParameterStore params, nn::RmsPropConfig optimizer = {},
           double gamma = 0.99);

  const nn::NetworkSpec& spec() const { return spec_; }
  const nn::ParameterStore& params() const { return params_; }
  nn::ParameterStore& mutable_params() { return params_; }
  const nn::ParameterStore& target_params() const { return target_; }
  nn::RmsPropState& optimizer() { return optimizer_; }

  double gamma() const { return gamma_; }
  void set_gamma(double gamma);
  double epsilon() const { return epsilon_; }
  void set_epsilon(double epsilon);

  nn::QVector q_values(const env::ObservationStack& stack) const;
  nn::QVector target_q_values(std::span<const double> stack) const;

  // target <- copy of online parameters.
  void sync_target() { target_ = params_; }

 private:
  nn::NetworkSpec spec_;
  nn::ParameterStore params_;
  nn::ParameterStore target_;
  nn::RmsPropState optimizer_;
  double gamma_;
  double epsilon_ = 1.0;
};

struct EpsilonGreedyChoice {
  int action = 0;
  bool random = false;
};

// With probability epsilon a uniform action, else argmax (lowest index on ties).
EpsilonGreedyChoice epsilon_greedy(std::span<const double> q, double epsilon, Rng& rng);
int act_epsilon_greedy(const DqnAgent& agent, const env::ObservationStack& stack, Rng& rng);

// r if terminal, else r + gamma * max_a' Q(s', a'; target).
double td_target(const DqnAgent& agent, const Transition& t);

// One RMSProp step on the batch-mean squared TD error of the taken actions.
// The target parameters are not touched. Returns the batch loss.
double dqn_update(DqnAgent& agent, TransitionMemory& memory, std::size_t batch_size);

struct TrainDqnConfig {
  nn::NetworkSpec spec;  // no hidden layers means default_teacher_spec
  int total_steps = 30000;
  int learning_starts = 1000;
  int train_every = 1;  // env steps per update
  int batch_size = 32;
  int sync_interval = 10;  // updates between target syncs
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_anneal_fraction = 1.0 / 3.0;
  std::size_t memory_capacity = 50000;
  double gamma = 0.99;
  nn::RmsPropConfig optimizer{5e-4, 0.95, 1e-6};
  int eval_every = 1000;
  int eval_episodes = 20;
  double eval_epsilon = 0.05;
  int eval_nullops = 8;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  friend bool operator==(const TrainDqnConfig&, const TrainDqnConfig&) = default;
};

struct CurveRow {
  int env_steps = 0;
  int updates = 0;
  double eval_score_mean = 0.0;
  double eval_score_std = 0.0;
  double epsilon = 0.0;
};

CsvTable curve_table(const std::vector<CurveRow>& curve);

// Interleaves epsilon-greedy environment steps with Q-learning updates.
// Exposed as a stepper so online distillation can run between blocks.
class DqnTrainer {
 public:
  DqnTrainer(env::GameId game, TrainDqnConfig config);

  // Advances up to n environment steps (bounded by total_steps).
  void run_steps(int n);
  CurveRow evaluate_now() const;
  // Seed of the fixed episode set evaluate_now plays.
  std::uint64_t eval_seed() const;

  bool done() const { return env_steps_ >= config_.total_steps; }
  int env_steps() const { return env_steps_; }
  int updates() const { return updates_; }
  const DqnAgent& agent() const { return agent_; }
  DqnAgent& agent() { return agent_; }
  const TransitionMemory& memory() const { return memory_; }
  const TrainDqnConfig& config() const { return config_; }
  env::GameId game() const { return game_; }

  double scheduled_epsilon(int step) const;

 private:
  env::GameId game_;
  TrainDqnConfig config_;
  DqnAgent agent_;
  TransitionMemory memory_;
  env::GameState state_;
  env::ObservationStack stack_;
  Rng act_rng_;
  int env_steps_ = 0;
  int updates_ = 0;
  int episodes_ = 0;
};

struct TrainDqnResult {
  DqnAgent agent;
  std::vector<CurveRow> curve;
};

TrainDqnResult train_dqn(env::GameId game, const TrainDqnConfig& config);

}  // namespace pd::dqn
