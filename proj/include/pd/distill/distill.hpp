#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pd/csv.hpp"
#include "pd/dqn/agent.hpp"
#include "pd/dqn/replay_memory.hpp"
#include "pd/env/game.hpp"
#include "pd/eval/eval.hpp"
#include "pd/nn/losses.hpp"
#include "pd/nn/network.hpp"
#include "pd/nn/rmsprop.hpp"

namespace pd::distill {

enum class LossKind { kMse, kNll, kKl };

std::string_view loss_name(LossKind kind);  // "mse", "nll", "kl"
LossKind parse_loss_kind(std::string_view name);

struct TeacherSample {
  env::PackedStack state;
  nn::QVector teacher_q;
  std::uint32_t generation = 0;  // which teacher snapshot produced it
};

using DistillBuffer = dqn::ReplayMemory<TeacherSample>;

struct DistillConfig {
  LossKind loss = LossKind::kKl;
  double tau = 0.01;  // KL only
  int refresh_steps = 1000;
  int updates_per_refresh = 500;
  int batch_size = 32;
  nn::RmsPropConfig optimizer{};
  int total_budget = 15000;  // teacher env steps
  std::size_t buffer_capacity = 50000;
  double teacher_epsilon = 0.05;
  int max_nullops = 8;
  int eval_episodes = 20;
  double eval_epsilon = 0.05;
  int holdout_samples = 500;
  std::uint64_t seed = 1;

  void validate() const;

  friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

// Per-sample loss for a stored teacher output.
nn::LossResult distill_loss(LossKind kind, std::span<const double> teacher_q,
                            std::span<const double> student_q, double tau);

// A student network with its own optimizer state.
struct Student {
  nn::NetworkSpec spec;
  nn::ParameterStore params;
  nn::RmsPropState optimizer;

  Student(nn::NetworkSpec s, std::uint64_t seed, nn::RmsPropConfig opt);
  Student(nn::NetworkSpec s, nn::ParameterStore p, nn::RmsPropConfig opt);
};

// Plays a frozen teacher with epsilon-greedy and null-op starts, appending
// (stack, teacher Q-values) for every step. The episode in progress carries
// over between calls.
class TeacherDataGenerator {
 public:
  TeacherDataGenerator(env::GameId game, nn::NetworkSpec spec, nn::ParameterStore params,
                       double epsilon, int max_nullops, std::uint64_t seed);

  void generate(DistillBuffer& buffer, int n_steps);
  // Switches to another frozen snapshot; later samples carry `generation`.
  void set_teacher(nn::ParameterStore params, std::uint32_t generation);

  const nn::ParameterStore& teacher_params() const { return params_; }
  std::uint32_t generation() const { return generation_; }
  std::int64_t steps_generated() const { return steps_; }
  env::GameId game() const { return game_; }
  // True when the last generated step ended an episode.
  bool at_episode_end() const { return need_reset_; }

 private:
  void start_episode();

  env::GameId game_;
  nn::NetworkSpec spec_;
  nn::ParameterStore params_;
  double epsilon_;
  int max_nullops_;
  Rng rng_;
  env::GameState state_;
  env::ObservationStack stack_;
  bool need_reset_ = true;
  std::uint32_t generation_ = 0;
  std::int64_t steps_ = 0;
};

// One-shot form: a fresh generator seeded from rng plays n_steps.
void generate_teacher_data(const dqn::DqnAgent& teacher, env::GameId game, DistillBuffer& buffer,
                           int n_steps, Rng& rng, double epsilon = 0.05, int max_nullops = 8);

// One minibatch from the buffer, one optimizer step on the student. Returns
// the mean per-sample loss before the step.
double distill_update(Student& student, DistillBuffer& buffer, const DistillConfig& config);

// Same, over an explicit list of samples.
double distill_step(Student& student, std::span<const TeacherSample* const> batch,
                    const DistillConfig& config);

// Mean loss over samples without changing the student.
double distill_loss_mean(const Student& student, std::span<const TeacherSample> samples,
                         const DistillConfig& config);

// Fraction of samples whose student argmax equals the teacher argmax.
double argmax_agreement(const nn::NetworkSpec& spec, const nn::ParameterStore& params,
                        std::span<const TeacherSample> samples);

struct DistillCurveRow {
  std::int64_t teacher_steps = 0;
  std::int64_t updates = 0;
  double loss_mean = 0.0;
  double eval_score = 0.0;
  double argmax_agreement = 0.0;
};

CsvTable distill_curve_table(const std::vector<DistillCurveRow>& curve);

struct TrainStudentResult {
  Student student;
  std::vector<DistillCurveRow> curve;
};

// Alternates refresh_steps of teacher data with updates_per_refresh student
// updates until total_budget teacher steps are consumed.
TrainStudentResult train_student(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                 const nn::ParameterStore& teacher_params,
                                 const nn::NetworkSpec& student_spec, const DistillConfig& config);

// Same schedule with data generation on a producer thread feeding a shared
// buffer. Not bit-deterministic.
TrainStudentResult train_student_pipelined(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                           const nn::ParameterStore& teacher_params,
                                           const nn::NetworkSpec& student_spec,
                                           const DistillConfig& config);

struct CompressionRow {
  std::string spec;
  std::size_t parameters = 0;
  double parameter_ratio = 0.0;  // student / teacher
  double score = 0.0;
  double teacher_score = 0.0;
  std::optional<double> relative_pct;
};

CsvTable compression_table(const std::vector<CompressionRow>& rows);

// Trains one KL student per spec and scores it on the pool.
std::vector<CompressionRow> compression_study(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                              const nn::ParameterStore& teacher_params,
                                              const std::vector<nn::NetworkSpec>& student_specs,
                                              const DistillConfig& config,
                                              const eval::StartStatePool& pool,
                                              double teacher_score, double eval_epsilon = 0.05);

// Writes the buffer (oldest first) as rows of generation, teacher Q-values
// and pixel codes.
CsvTable buffer_snapshot(const DistillBuffer& buffer);

}  // namespace pd::distill
