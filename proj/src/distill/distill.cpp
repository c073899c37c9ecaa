#include "pd/distill/distill.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <thread>

namespace pd::distill {

std::string_view loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::kMse: return "mse";
    case LossKind::kNll: return "nll";
    case LossKind::kKl: return "kl";
  }
  throw std::invalid_argument("unknown loss kind");
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "nll") return LossKind::kNll;
  if (name == "kl") return LossKind::kKl;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "' (expected mse, nll or kl)");
}

void DistillConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("distill config: " + what); };
  if (!(tau > 0)) fail("tau must be positive");
  if (refresh_steps < 1) fail("refresh_steps must be >= 1");
  if (updates_per_refresh < 0) fail("updates_per_refresh must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0)) fail("learning_rate must be positive");
  if (!(optimizer.decay > 0 && optimizer.decay < 1)) fail("rmsprop decay must be in (0, 1)");
  if (!(optimizer.epsilon > 0)) fail("rmsprop epsilon must be positive");
  if (total_budget < 1) fail("total_budget must be >= 1");
  if (buffer_capacity < 1) fail("buffer_capacity must be >= 1");
  if (!(teacher_epsilon >= 0 && teacher_epsilon <= 1)) fail("teacher_epsilon must be in [0, 1]");
  if (max_nullops < 0) fail("max_nullops must be >= 0");
  if (eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (!(eval_epsilon >= 0 && eval_epsilon <= 1)) fail("eval_epsilon must be in [0, 1]");
  if (holdout_samples < 1) fail("holdout_samples must be >= 1");
}

nn::LossResult distill_loss(LossKind kind, std::span<const double> teacher_q,
                            std::span<const double> student_q, double tau) {
  switch (kind) {
    case LossKind::kMse: return nn::loss_mse(teacher_q, student_q);
    case LossKind::kNll: return nn::loss_nll(student_q, nn::argmax(teacher_q));
    case LossKind::kKl: return nn::loss_kl(teacher_q, student_q, tau);
  }
  throw std::invalid_argument("unknown loss kind");
}

Student::Student(nn::NetworkSpec s, std::uint64_t seed, nn::RmsPropConfig opt)
    : Student(s, nn::init_parameters(s, seed), opt) {}

Student::Student(nn::NetworkSpec s, nn::ParameterStore p, nn::RmsPropConfig opt)
    : spec(std::move(s)), params(std::move(p)), optimizer(params.size(), opt) {
  if (params.size() != nn::count_parameters(spec)) {
    throw std::invalid_argument("Student: parameters do not match spec");
  }
}

TeacherDataGenerator::TeacherDataGenerator(env::GameId game, nn::NetworkSpec spec,
                                           nn::ParameterStore params, double epsilon,
                                           int max_nullops, std::uint64_t seed)
    : game_(game),
      spec_(std::move(spec)),
      params_(std::move(params)),
      epsilon_(epsilon),
      max_nullops_(max_nullops),
      rng_(derive_seed(seed, "teacher_actions")),
      state_(env::make_game(game, derive_seed(seed, "teacher_env"))) {
  if (spec_.output_units != env::action_count(game)) {
    throw std::invalid_argument("TeacherDataGenerator: teacher outputs do not match the game");
  }
  if (params_.size() != nn::count_parameters(spec_)) {
    throw std::invalid_argument("TeacherDataGenerator: parameters do not match spec");
  }
}

void TeacherDataGenerator::set_teacher(nn::ParameterStore params, std::uint32_t generation) {
  if (params.size() != params_.size()) {
    throw std::invalid_argument("TeacherDataGenerator: snapshot has the wrong size");
  }
  params_ = std::move(params);
  generation_ = generation;
}

void TeacherDataGenerator::start_episode() {
  stack_ = env::reset_with_nullops(state_, rng_, max_nullops_).stack;
  need_reset_ = false;
}

void TeacherDataGenerator::generate(DistillBuffer& buffer, int n_steps) {
  for (int i = 0; i < n_steps; ++i) {
    if (need_reset_) start_episode();
    nn::QVector q(nn::forward(spec_, params_, stack_.data()));
    const int action = dqn::epsilon_greedy(q.values(), epsilon_, rng_).action;
    buffer.push(TeacherSample{stack_.pack(), std::move(q), generation_});
    const env::StepResult r = state_.step(action);
    stack_.push(r.observation);
    need_reset_ = r.terminal;
    ++steps_;
  }
}

void generate_teacher_data(const dqn::DqnAgent& teacher, env::GameId game, DistillBuffer& buffer,
                           int n_steps, Rng& rng, double epsilon, int max_nullops) {
  TeacherDataGenerator gen(game, teacher.spec(), teacher.params(), epsilon, max_nullops,
                           rng.next_u64());
  gen.generate(buffer, n_steps);
}

double distill_step(Student& student, std::span<const TeacherSample* const> batch,
                    const DistillConfig& config) {
  if (batch.empty()) throw std::logic_error("distill_update: empty batch");
  const int n = static_cast<int>(batch.size());
  const std::size_t in = student.spec.input_size();
  const std::size_t actions = static_cast<std::size_t>(student.spec.output_units);
  std::vector<double> inputs(in * batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->teacher_q.size() != actions) {
      throw std::invalid_argument("distill_update: teacher and student action counts differ");
    }
    batch[i]->state.unpack_into(std::span<double>(inputs).subspan(i * in, in));
  }
  thread_local nn::ForwardTrace trace;
  nn::forward_batch_traced(student.spec, student.params, inputs, n, trace);
  const double scale = 1.0 / n;
  std::vector<double> out_grad(actions * batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const nn::LossResult r = distill_loss(config.loss, batch[i]->teacher_q.values(),
                                          trace.output(static_cast<int>(i)), config.tau);
    loss += scale * r.value;
    for (std::size_t a = 0; a < actions; ++a) out_grad[i * actions + a] = scale * r.grad[a];
  }
  std::vector<double> grad(student.params.size(), 0.0);
  nn::backward_traced(student.spec, student.params, trace, out_grad, grad);
  nn::rmsprop_step(student.params.values, grad, student.optimizer);
  return loss;
}

double distill_update(Student& student, DistillBuffer& buffer, const DistillConfig& config) {
  if (buffer.empty()) throw std::logic_error("distill_update: buffer is empty");
  const auto batch = buffer.sample(static_cast<std::size_t>(config.batch_size));
  return distill_step(student, batch, config);
}

double distill_loss_mean(const Student& student, std::span<const TeacherSample> samples,
                         const DistillConfig& config) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    const auto q = nn::forward(student.spec, student.params, s.state.unpack());
    total += distill_loss(config.loss, s.teacher_q.values(), q, config.tau).value;
  }
  return total / samples.size();
}

double argmax_agreement(const nn::NetworkSpec& spec, const nn::ParameterStore& params,
                        std::span<const TeacherSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t agree = 0;
  for (const auto& s : samples) {
    const auto q = nn::forward(spec, params, s.state.unpack());
    agree += nn::argmax(q) == nn::argmax(s.teacher_q.values());
  }
  return static_cast<double>(agree) / samples.size();
}

CsvTable distill_curve_table(const std::vector<DistillCurveRow>& curve) {
  CsvTable t({"teacher_steps_consumed", "updates", "loss_mean", "eval_score", "argmax_agreement"});
  for (const auto& r : curve) {
    t.add_row({std::to_string(r.teacher_steps), std::to_string(r.updates),
               format_double(r.loss_mean), format_double(r.eval_score),
               format_double(r.argmax_agreement)});
  }
  return t;
}

namespace {

// Streams that a multi-task run reproduces per task carry the game name.
std::uint64_t task_seed(std::uint64_t seed, std::string_view stream, env::GameId game) {
  return derive_seed(seed, std::string(stream) + "/" + std::string(env::game_name(game)));
}

void check_student(env::GameId game, const nn::NetworkSpec& student_spec) {
  student_spec.validate();
  if (student_spec.output_units != env::action_count(game)) {
    throw std::invalid_argument("train_student: student outputs do not match the game's actions");
  }
}

std::vector<TeacherSample> holdout_set(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                       const nn::ParameterStore& teacher_params,
                                       const DistillConfig& config) {
  TeacherDataGenerator gen(game, teacher_spec, teacher_params, config.teacher_epsilon,
                           config.max_nullops, derive_seed(config.seed, "holdout"));
  DistillBuffer buf(static_cast<std::size_t>(config.holdout_samples), 0);
  gen.generate(buf, config.holdout_samples);
  std::vector<TeacherSample> out;
  out.reserve(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) out.push_back(buf.at(i));
  return out;
}

double student_eval(env::GameId game, const Student& student, const DistillConfig& config) {
  const eval::Policy policy = eval::network_policy(game, student.spec, student.params);
  return eval::play_episodes(policy, config.eval_episodes, config.eval_epsilon,
                             derive_seed(config.seed, "distill_eval"))
      .mean;
}

}  // namespace

TrainStudentResult train_student(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                 const nn::ParameterStore& teacher_params,
                                 const nn::NetworkSpec& student_spec, const DistillConfig& config) {
  config.validate();
  check_student(game, student_spec);
  Student student(student_spec, derive_seed(config.seed, "student_init"), config.optimizer);
  DistillBuffer buffer(config.buffer_capacity, task_seed(config.seed, "distill_buffer", game));
  TeacherDataGenerator gen(game, teacher_spec, teacher_params, config.teacher_epsilon,
                           config.max_nullops, task_seed(config.seed, "teacher_data", game));
  const std::vector<TeacherSample> holdout = holdout_set(game, teacher_spec, teacher_params, config);

  std::vector<DistillCurveRow> curve;
  std::int64_t updates = 0;
  while (gen.steps_generated() < config.total_budget) {
    const int n = static_cast<int>(
        std::min<std::int64_t>(config.refresh_steps, config.total_budget - gen.steps_generated()));
    gen.generate(buffer, n);
    double loss = 0.0;
    for (int u = 0; u < config.updates_per_refresh; ++u) loss += distill_update(student, buffer, config);
    updates += config.updates_per_refresh;
    DistillCurveRow row;
    row.teacher_steps = gen.steps_generated();
    row.updates = updates;
    row.loss_mean = config.updates_per_refresh > 0 ? loss / config.updates_per_refresh : 0.0;
    row.eval_score = student_eval(game, student, config);
    row.argmax_agreement = argmax_agreement(student.spec, student.params, holdout);
    curve.push_back(row);
  }
  return TrainStudentResult{std::move(student), std::move(curve)};
}

TrainStudentResult train_student_pipelined(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                           const nn::ParameterStore& teacher_params,
                                           const nn::NetworkSpec& student_spec,
                                           const DistillConfig& config) {
  config.validate();
  check_student(game, student_spec);
  Student student(student_spec, derive_seed(config.seed, "student_init"), config.optimizer);
  dqn::SharedReplayMemory<TeacherSample> shared(config.buffer_capacity,
                                                task_seed(config.seed, "distill_buffer", game));
  const std::vector<TeacherSample> holdout = holdout_set(game, teacher_spec, teacher_params, config);
  std::atomic<std::int64_t> produced{0};

  std::jthread producer([&] {
    TeacherDataGenerator gen(game, teacher_spec, teacher_params, config.teacher_epsilon,
                             config.max_nullops, task_seed(config.seed, "teacher_data", game));
    DistillBuffer chunk(64, 0);
    while (gen.steps_generated() < config.total_budget) {
      const int n = static_cast<int>(std::min<std::int64_t>(64, config.total_budget - gen.steps_generated()));
      chunk = DistillBuffer(64, 0);
      gen.generate(chunk, n);
      for (std::size_t i = 0; i < chunk.size(); ++i) shared.push(chunk.at(i));
      produced.store(gen.steps_generated(), std::memory_order_release);
    }
  });

  const std::int64_t cycles =
      (config.total_budget + config.refresh_steps - 1) / config.refresh_steps;
  std::vector<DistillCurveRow> curve;
  std::int64_t updates = 0;
  for (std::int64_t c = 1; c <= cycles; ++c) {
    // The consumer only waits for a first batch; after that it trains on
    // whatever the producer has delivered so far.
    const std::int64_t first = std::min<std::int64_t>(config.batch_size, config.total_budget);
    while (produced.load(std::memory_order_acquire) < first) std::this_thread::yield();
    double loss = 0.0;
    for (int u = 0; u < config.updates_per_refresh; ++u) {
      const auto copies = shared.sample_copy(static_cast<std::size_t>(config.batch_size));
      std::vector<const TeacherSample*> batch;
      for (const auto& s : copies) batch.push_back(&s);
      loss += distill_step(student, batch, config);
    }
    updates += config.updates_per_refresh;
    DistillCurveRow row;
    row.teacher_steps = produced.load(std::memory_order_acquire);
    row.updates = updates;
    row.loss_mean = config.updates_per_refresh > 0 ? loss / config.updates_per_refresh : 0.0;
    row.eval_score = student_eval(game, student, config);
    row.argmax_agreement = argmax_agreement(student.spec, student.params, holdout);
    curve.push_back(row);
  }
  producer.join();
  return TrainStudentResult{std::move(student), std::move(curve)};
}

CsvTable compression_table(const std::vector<CompressionRow>& rows) {
  CsvTable t({"student_spec", "parameters", "parameter_ratio", "score", "teacher_score",
              "relative_pct"});
  for (const auto& r : rows) {
    t.add_row({r.spec, std::to_string(r.parameters), format_double(r.parameter_ratio),
               format_double(r.score), format_double(r.teacher_score),
               r.relative_pct ? format_double(*r.relative_pct) : ""});
  }
  return t;
}

std::vector<CompressionRow> compression_study(env::GameId game, const nn::NetworkSpec& teacher_spec,
                                              const nn::ParameterStore& teacher_params,
                                              const std::vector<nn::NetworkSpec>& student_specs,
                                              const DistillConfig& config,
                                              const eval::StartStatePool& pool,
                                              double teacher_score, double eval_epsilon) {
  DistillConfig kl = config;
  kl.loss = LossKind::kKl;
  const double teacher_params_count = static_cast<double>(nn::count_parameters(teacher_spec));
  std::vector<CompressionRow> rows;
  for (const auto& spec : student_specs) {
    const TrainStudentResult r = train_student(game, teacher_spec, teacher_params, spec, kl);
    CompressionRow row;
    row.spec = spec.describe();
    row.parameters = nn::count_parameters(spec);
    row.parameter_ratio = row.parameters / teacher_params_count;
    row.score = eval::evaluate(eval::network_policy(game, r.student.spec, r.student.params), pool,
                               eval_epsilon, derive_seed(config.seed, "compression_eval"))
                    .mean;
    row.teacher_score = teacher_score;
    row.relative_pct = eval::relative_score(row.score, teacher_score);
    rows.push_back(row);
  }
  return rows;
}

CsvTable buffer_snapshot(const DistillBuffer& buffer) {
  std::vector<std::string> header{"generation"};
  const std::size_t actions = buffer.empty() ? 0 : buffer.at(0).teacher_q.size();
  for (std::size_t a = 0; a < actions; ++a) header.push_back("q" + std::to_string(a));
  for (int p = 0; p < env::kStackSize; ++p) header.push_back("px" + std::to_string(p));
  CsvTable t(header);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const TeacherSample& s = buffer.at(i);
    std::vector<std::string> row{std::to_string(s.generation)};
    for (double q : s.teacher_q.values()) row.push_back(format_double(q));
    for (std::uint8_t c : s.state.codes) row.push_back(std::to_string(c));
    t.add_row(std::move(row));
  }
  return t;
}

}  // namespace pd::distill
