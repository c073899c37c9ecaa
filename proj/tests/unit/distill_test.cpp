#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "pd/distill/distill.hpp"

using namespace pd;
using namespace pd::distill;

namespace {

nn::NetworkSpec small_spec(int actions) {
  nn::NetworkSpec s;
  s.input_channels = env::kStackDepth;
  s.input_height = env::kFrameHeight;
  s.input_width = env::kFrameWidth;
  s.conv_layers = {{4, 4, 4}};
  s.dense_layers = {16};
  s.output_units = actions;
  return s;
}

std::vector<TeacherSample> collect(env::GameId game, const nn::NetworkSpec& spec,
                                   const nn::ParameterStore& params, int n, std::uint64_t seed) {
  TeacherDataGenerator gen(game, spec, params, 0.05, 8, seed);
  DistillBuffer buf(static_cast<std::size_t>(n), 1);
  gen.generate(buf, n);
  std::vector<TeacherSample> out;
  for (std::size_t i = 0; i < buf.size(); ++i) out.push_back(buf.at(i));
  return out;
}

// Reference targets computed directly from the stored teacher outputs.
std::vector<double> reference_target(LossKind kind, std::span<const double> q, double tau) {
  std::vector<double> t(q.size(), 0.0);
  if (kind == LossKind::kNll) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < q.size(); ++a) {
      if (q[a] > q[best]) best = a;
    }
    t[best] = 1.0;
  } else {
    double m = q[0];
    for (double v : q) m = std::max(m, v);
    double z = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) z += t[a] = std::exp((q[a] - m) / tau);
    for (auto& v : t) v /= z;
  }
  return t;
}

}  // namespace

TEST_CASE("loss names round trip") {
  for (LossKind k : {LossKind::kMse, LossKind::kNll, LossKind::kKl}) {
    CHECK(parse_loss_kind(loss_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_loss_kind("hinge"), std::invalid_argument);
}

TEST_CASE("distill_loss targets follow the stored teacher outputs") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto tq = testing::random_vector(rng, 5, 3.0);
    const auto sq = testing::random_vector(rng, 5, 3.0);
    for (LossKind kind : {LossKind::kNll, LossKind::kKl}) {
      const double tau = 0.05 + rng.uniform();
      const auto target = reference_target(kind, tq, tau);
      const auto r = distill_loss(kind, tq, sq, tau);
      // Both losses have gradient softmax(student) - target.
      double m = sq[0];
      for (double v : sq) m = std::max(m, v);
      double z = 0.0;
      for (double v : sq) z += std::exp(v - m);
      for (std::size_t a = 0; a < 5; ++a) {
        CHECK(r.grad[a] == doctest::Approx(std::exp(sq[a] - m) / z - target[a]).epsilon(1e-10));
      }
    }
    const auto mse = distill_loss(LossKind::kMse, tq, sq, 1.0);
    double expect = 0.0;
    for (std::size_t a = 0; a < 5; ++a) expect += (tq[a] - sq[a]) * (tq[a] - sq[a]);
    CHECK(mse.value == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("generating teacher data never changes the teacher") {
  const auto spec = small_spec(3);
  const auto teacher = nn::init_parameters(spec, 2);
  const auto copy = teacher;
  TeacherDataGenerator gen(env::GameId::kCatch, spec, teacher, 0.05, 8, 3);
  DistillBuffer buf(100, 4);
  gen.generate(buf, 250);
  CHECK(std::memcmp(gen.teacher_params().values.data(), copy.values.data(),
                    copy.size() * sizeof(double)) == 0);
  CHECK(buf.size() == 100);
  CHECK(gen.steps_generated() == 250);
  // Stored outputs equal the teacher's forward pass on the stored stacks.
  for (std::size_t i = 0; i < buf.size(); i += 17) {
    const auto q = nn::forward(spec, copy, buf.at(i).state.unpack());
    CHECK(q == buf.at(i).teacher_q.vec());
  }
}

TEST_CASE("teacher switches tag later samples with the new generation") {
  const auto spec = small_spec(3);
  TeacherDataGenerator gen(env::GameId::kCatch, spec, nn::init_parameters(spec, 2), 0.05, 8, 3);
  DistillBuffer buf(1000, 4);
  gen.generate(buf, 30);
  const auto next = nn::init_parameters(spec, 5);
  gen.set_teacher(next, 7);
  gen.generate(buf, 30);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(buf.at(i).generation == (i < 30 ? 0u : 7u));
  }
  const auto q = nn::forward(spec, next, buf.at(45).state.unpack());
  CHECK(q == buf.at(45).teacher_q.vec());
}

TEST_CASE("zero updates per refresh leave the student at its initialization") {
  const auto spec = small_spec(3);
  DistillConfig cfg;
  cfg.total_budget = 200;
  cfg.refresh_steps = 100;
  cfg.updates_per_refresh = 0;
  cfg.eval_episodes = 1;
  cfg.holdout_samples = 10;
  const auto r = train_student(env::GameId::kCatch, spec, nn::init_parameters(spec, 2), spec, cfg);
  CHECK(r.student.params == nn::init_parameters(spec, derive_seed(cfg.seed, "student_init")));
  CHECK(r.curve.size() == 2);
}

TEST_CASE("full-batch descent on a fixed buffer never increases the loss") {
  const auto spec = small_spec(3);
  const auto samples = collect(env::GameId::kCatch, spec, nn::init_parameters(spec, 6), 64, 7);
  std::vector<const TeacherSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  for (LossKind kind : {LossKind::kMse, LossKind::kNll, LossKind::kKl}) {
    DistillConfig cfg;
    cfg.loss = kind;
    cfg.tau = 0.1;
    cfg.optimizer = {1e-4, 0.95, 1e-6};
    Student student(spec, 8, cfg.optimizer);
    double prev = distill_loss_mean(student, samples, cfg);
    for (int epoch = 0; epoch < 30; ++epoch) {
      distill_step(student, batch, cfg);
      const double now = distill_loss_mean(student, samples, cfg);
      CAPTURE(loss_name(kind));
      CAPTURE(epoch);
      CHECK(now <= prev + 1e-12);
      prev = now;
    }
  }
}

TEST_CASE("training raises argmax agreement for every loss") {
  const auto spec = small_spec(3);
  const auto teacher = nn::init_parameters(spec, 9);
  for (LossKind kind : {LossKind::kMse, LossKind::kNll, LossKind::kKl}) {
    DistillConfig cfg;
    cfg.loss = kind;
    cfg.total_budget = 2000;
    cfg.refresh_steps = 500;
    cfg.updates_per_refresh = 300;
    cfg.optimizer.learning_rate = 1e-3;
    cfg.eval_episodes = 1;
    cfg.holdout_samples = 300;
    cfg.seed = 10;
    const auto holdout = collect(env::GameId::kCatch, spec, teacher, 300, 11);
    const double before = argmax_agreement(
        spec, nn::init_parameters(spec, derive_seed(cfg.seed, "student_init")), holdout);
    const auto r = train_student(env::GameId::kCatch, spec, teacher, spec, cfg);
    CAPTURE(loss_name(kind));
    CHECK(argmax_agreement(spec, r.student.params, holdout) > before);
  }
}

TEST_CASE("NLL student agrees with a teacher that has one dominant action") {
  const nn::NetworkSpec avoid_spec = small_spec(env::action_count(env::GameId::kAvoid));
  nn::ParameterStore avoid_teacher = nn::init_parameters(avoid_spec, 12);
  // Output bias puts action 1 ahead of the others on every state.
  avoid_teacher.values[nn::layer_layout(avoid_spec).back().bias_offset + 1] = 5.0;
  const auto held = collect(env::GameId::kAvoid, avoid_spec, avoid_teacher, 400, 13);
  for (const auto& s : held) REQUIRE(nn::argmax(s.teacher_q.values()) == 1);

  DistillConfig cfg;
  cfg.loss = LossKind::kNll;
  cfg.total_budget = 1000;
  cfg.refresh_steps = 500;
  cfg.updates_per_refresh = 200;
  cfg.optimizer.learning_rate = 1e-3;
  cfg.eval_episodes = 1;
  cfg.holdout_samples = 50;
  const auto r = train_student(env::GameId::kAvoid, avoid_spec, avoid_teacher, avoid_spec, cfg);
  CHECK(argmax_agreement(avoid_spec, r.student.params, held) >= 0.99);
  CHECK(r.curve.back().argmax_agreement >= 0.99);
}

TEST_CASE("distillation is deterministic and its CSV has the expected columns") {
  const auto spec = small_spec(3);
  const auto teacher = nn::init_parameters(spec, 14);
  DistillConfig cfg;
  cfg.total_budget = 300;
  cfg.refresh_steps = 150;
  cfg.updates_per_refresh = 20;
  cfg.eval_episodes = 2;
  cfg.holdout_samples = 30;
  const auto a = train_student(env::GameId::kCatch, spec, teacher, spec, cfg);
  const auto b = train_student(env::GameId::kCatch, spec, teacher, spec, cfg);
  CHECK(a.student.params == b.student.params);
  const std::string csv = distill_curve_table(a.curve).to_string();
  CHECK(csv == distill_curve_table(b.curve).to_string());
  CHECK(csv.rfind("teacher_steps_consumed,updates,loss_mean,eval_score,argmax_agreement\n", 0) == 0);
  CHECK(a.curve.back().teacher_steps == 300);
  CHECK(a.curve.back().updates == 40);
}

TEST_CASE("pipelined distillation consumes the same budget") {
  const auto spec = small_spec(3);
  DistillConfig cfg;
  cfg.total_budget = 400;
  cfg.refresh_steps = 200;
  cfg.updates_per_refresh = 20;
  cfg.eval_episodes = 1;
  cfg.holdout_samples = 20;
  const auto r = train_student_pipelined(env::GameId::kCatch, spec, nn::init_parameters(spec, 3),
                                         spec, cfg);
  REQUIRE(!r.curve.empty());
  CHECK(r.curve.back().updates == 40);
}

TEST_CASE("config validation names the offending field") {
  DistillConfig cfg;
  cfg.tau = -1.0;
  try {
    cfg.validate();
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("tau") != std::string::npos);
  }
  const auto spec = small_spec(4);
  DistillConfig ok;
  CHECK_THROWS_AS(train_student(env::GameId::kCatch, spec, nn::init_parameters(spec, 1), spec, ok),
                  std::invalid_argument);
}

TEST_CASE("buffer snapshot lists samples oldest first") {
  const auto spec = small_spec(3);
  TeacherDataGenerator gen(env::GameId::kCatch, spec, nn::init_parameters(spec, 2), 0.05, 8, 3);
  DistillBuffer buf(5, 4);
  gen.generate(buf, 8);
  const CsvTable t = buffer_snapshot(buf);
  REQUIRE(t.rows() == 5);
  CHECK(t.data()[0].size() == 1 + 3 + static_cast<std::size_t>(env::kStackSize));
}
