#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pd/csv.hpp"
#include "pd/distill/distill.hpp"
#include "pd/dqn/agent.hpp"
#include "pd/env/game.hpp"
#include "pd/nn/network.hpp"
#include "pd/nn/rmsprop.hpp"

namespace pd::multitask {

// Per-task controller: dense hidden layer(s) and a linear output sized to
// the task's action set, fed by the trunk's features.
struct TaskHead {
  env::GameId game;
  nn::NetworkSpec spec;
  nn::ParameterStore params;
};

// Trunk = conv stack + first dense layer with rectified output.
nn::NetworkSpec default_trunk_spec(int width_scale = 1);
nn::NetworkSpec head_spec(int feature_dim, std::span<const int> hidden, int actions);

class MultiTaskNetwork {
 public:
  MultiTaskNetwork(nn::NetworkSpec trunk_spec, nn::ParameterStore trunk_params,
                   std::vector<TaskHead> heads);

  // Fresh initialization: trunk from `seed`, each head from a per-game stream.
  static MultiTaskNetwork create(const nn::NetworkSpec& trunk_spec,
                                 const std::vector<env::GameId>& games, std::vector<int> head_hidden,
                                 std::uint64_t seed);

  // Splits a single-task network after its first dense layer.
  static MultiTaskNetwork from_single(env::GameId game, const nn::NetworkSpec& spec,
                                      const nn::ParameterStore& params);

  std::size_t task_count() const { return heads_.size(); }
  // Throws std::out_of_range for an unregistered game.
  std::size_t task_index(env::GameId game) const;

  nn::QVector forward_task(env::GameId game, std::span<const double> stack) const;
  std::vector<double> forward_task_batch(std::size_t task, std::span<const double> inputs,
                                         int batch) const;

  const nn::NetworkSpec& trunk_spec() const { return trunk_spec_; }
  const nn::ParameterStore& trunk_params() const { return trunk_params_; }
  nn::ParameterStore& mutable_trunk_params() { return trunk_params_; }
  const TaskHead& head(std::size_t task) const { return heads_.at(task); }
  TaskHead& mutable_head(std::size_t task) { return heads_.at(task); }
  std::vector<env::GameId> games() const;

  std::size_t parameter_count() const;
  std::size_t shared_parameter_count() const { return trunk_params_.size(); }

  // Reassembles the network for one task as a single spec + parameters.
  nn::NetworkSpec task_spec(std::size_t task) const;
  nn::ParameterStore task_params(std::size_t task) const;

  friend bool operator==(const MultiTaskNetwork&, const MultiTaskNetwork&);

 private:
  nn::NetworkSpec trunk_spec_;
  nn::ParameterStore trunk_params_;
  std::vector<TaskHead> heads_;
};

bool operator==(const TaskHead& a, const TaskHead& b);

std::string encode_multitask(const MultiTaskNetwork& net);
MultiTaskNetwork decode_multitask(const std::string& bytes);

// Optimizer state for the trunk and every head.
struct MultiTaskOptimizer {
  nn::RmsPropState trunk;
  std::vector<nn::RmsPropState> heads;

  MultiTaskOptimizer(const MultiTaskNetwork& net, nn::RmsPropConfig config);
};

// Fills output gradients (batch x actions) from the batch's outputs and
// returns the batch loss.
using BatchLossFn = std::function<double(std::span<const double> outputs, std::span<double> grads)>;

// Forward through trunk and head `task`, backward, one RMSProp step on the
// trunk and that head. Other heads and their optimizer states are untouched.
double train_task_batch(MultiTaskNetwork& net, MultiTaskOptimizer& opt, std::size_t task,
                        std::span<const double> inputs, int batch, const BatchLossFn& loss);

// New task every episode, cycling through the list.
class TaskSchedule {
 public:
  explicit TaskSchedule(std::size_t tasks);
  std::size_t current() const { return current_; }
  void next_episode();
  const std::vector<std::int64_t>& episodes() const { return episodes_; }

 private:
  std::size_t current_ = 0;
  std::vector<std::int64_t> episodes_;
};

struct TeacherRef {
  env::GameId game;
  nn::NetworkSpec spec;
  nn::ParameterStore params;
};

struct MultiDistillConfig {
  distill::LossKind loss = distill::LossKind::kKl;  // KL or NLL
  double tau = 0.01;
  int refresh_steps = 1000;      // teacher steps per cycle, all tasks together
  int updates_per_refresh = 500;
  int batch_size = 32;
  nn::RmsPropConfig optimizer{};
  int total_budget = 45000;      // teacher steps over all tasks
  std::size_t buffer_capacity = 50000;  // per task
  double teacher_epsilon = 0.05;
  int max_nullops = 8;
  int eval_episodes = 20;
  double eval_epsilon = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
  distill::DistillConfig as_single() const;

  friend bool operator==(const MultiDistillConfig&, const MultiDistillConfig&) = default;
};

struct MultiCurveRow {
  std::int64_t steps = 0;  // teacher or environment steps so far, all tasks
  std::int64_t updates = 0;
  std::string task;
  double loss_mean = 0.0;
  double eval_score = 0.0;
};

CsvTable multi_curve_table(const std::vector<MultiCurveRow>& rows);

struct MultiTrainResult {
  MultiTaskNetwork net;
  std::vector<MultiCurveRow> curve;
  std::vector<std::int64_t> episodes_per_task;
  std::vector<std::int64_t> updates_per_task;
  std::vector<std::size_t> memory_sizes;  // per task, final replay or buffer occupancy
};

MultiTrainResult multitask_distill(const std::vector<TeacherRef>& teachers, MultiTaskNetwork net,
                                   const MultiDistillConfig& config);

struct MultiDqnConfig {
  int total_steps = 90000;  // all tasks together
  int learning_starts = 1000;
  int train_every = 1;
  int batch_size = 32;
  int sync_interval = 10;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_anneal_fraction = 1.0 / 3.0;
  std::size_t memory_capacity = 50000;  // per task
  double gamma = 0.99;
  std::map<env::GameId, double> gamma_by_game;  // overrides gamma per task
  nn::RmsPropConfig optimizer{5e-4, 0.95, 1e-6};
  int eval_every = 3000;
  int eval_episodes = 20;
  double eval_epsilon = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
  double gamma_for(env::GameId game) const;

  friend bool operator==(const MultiDqnConfig&, const MultiDqnConfig&) = default;
};

MultiTrainResult multitask_dqn(MultiTaskNetwork net, const MultiDqnConfig& config);

}  // namespace pd::multitask
