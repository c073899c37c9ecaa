#include "pd/online/online.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "pd/eval/eval.hpp"

namespace pd::online {

bool maybe_snapshot(BestPolicyTracker& tracker, const nn::ParameterStore& params, double eval_score,
                    std::int64_t env_steps) {
  if (!(eval_score > tracker.best_score)) return false;
  tracker.best_score = eval_score;
  tracker.best_snapshot = params;
  tracker.history.push_back({env_steps, eval_score, tracker.generation() + 1});
  return true;
}

std::vector<double> running_best(std::span<const double> scores) {
  std::vector<double> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(out.empty() ? s : std::max(out.back(), s));
  return out;
}

void OnlineConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("online config: " + what); };
  dqn.validate();
  if (!(tau > 0)) fail("tau must be positive");
  if (teacher_steps_per_block < 1) fail("teacher_steps_per_block must be >= 1");
  if (updates_per_block < 0) fail("updates_per_block must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0)) fail("learning_rate must be positive");
  if (!(optimizer.decay > 0 && optimizer.decay < 1)) fail("rmsprop decay must be in (0, 1)");
  if (!(optimizer.epsilon > 0)) fail("rmsprop epsilon must be positive");
  if (buffer_capacity < 1) fail("buffer_capacity must be >= 1");
  if (!(teacher_epsilon >= 0 && teacher_epsilon <= 1)) fail("teacher_epsilon must be in [0, 1]");
  if (max_nullops < 0) fail("max_nullops must be >= 0");
}

CsvTable online_table(const std::vector<OnlineRow>& rows) {
  CsvTable t({"env_steps", "dqn_eval", "best_so_far", "student_eval", "snapshot_event"});
  for (const auto& r : rows) {
    t.add_row({std::to_string(r.env_steps), format_double(r.dqn_eval), format_double(r.best_so_far),
               format_double(r.student_eval), r.snapshot_event ? "1" : "0"});
  }
  return t;
}

OnlineResult online_distill(env::GameId game, const OnlineConfig& config) {
  config.validate();
  dqn::DqnTrainer trainer(game, config.dqn);
  const nn::NetworkSpec& teacher_spec = trainer.agent().spec();
  const nn::NetworkSpec student_spec =
      config.student_spec.conv_layers.empty() && config.student_spec.dense_layers.empty()
          ? teacher_spec
          : config.student_spec;
  student_spec.validate();
  if (student_spec.output_units != env::action_count(game)) {
    throw std::invalid_argument("online config: student outputs do not match the game's actions");
  }

  distill::DistillConfig dcfg;
  dcfg.loss = config.loss;
  dcfg.tau = config.tau;
  dcfg.batch_size = config.batch_size;
  dcfg.optimizer = config.optimizer;

  distill::Student student(student_spec, derive_seed(config.seed, "student_init"), config.optimizer);
  OnlineResult result{{}, {}, {}, student_spec, {},
                      distill::DistillBuffer(config.buffer_capacity,
                                             derive_seed(config.seed, "online_buffer")),
                      0};
  std::optional<distill::TeacherDataGenerator> generator;
  // The student plays the same episodes as the DQN evaluation, so its score
  // is directly comparable to the best-so-far value.
  const std::uint64_t student_eval_seed = trainer.eval_seed();

  auto block = [&] {
    const dqn::CurveRow eval = trainer.evaluate_now();
    OnlineRow row;
    row.env_steps = trainer.env_steps();
    row.dqn_eval = eval.eval_score_mean;
    row.snapshot_event =
        maybe_snapshot(result.tracker, trainer.agent().params(), eval.eval_score_mean, row.env_steps);
    if (row.snapshot_event) {
      const nn::ParameterStore& snap = result.tracker.best_snapshot;
      result.snapshots.push_back(snap);
      if (!generator) {
        generator.emplace(game, teacher_spec, snap, config.teacher_epsilon, config.max_nullops,
                          derive_seed(config.seed, "online_teacher"));
      }
      // The buffer keeps older-teacher samples; they age out FIFO.
      generator->set_teacher(snap, result.tracker.generation());
    }
    row.best_so_far = result.tracker.best_score;
    generator->generate(result.buffer, config.teacher_steps_per_block);
    for (int u = 0; u < config.updates_per_block; ++u) {
      distill::distill_update(student, result.buffer, dcfg);
    }
    result.student_updates += config.updates_per_block;
    const eval::Policy policy = eval::network_policy(game, student.spec, student.params);
    row.student_eval = eval::play_episodes(policy, config.dqn.eval_episodes,
                                           config.dqn.eval_epsilon, student_eval_seed,
                                           config.dqn.eval_nullops)
                           .mean;
    result.rows.push_back(row);
  };

  block();
  while (!trainer.done()) {
    trainer.run_steps(config.dqn.eval_every);
    block();
  }
  result.student_params = student.params;
  return result;
}

}  // namespace pd::online
