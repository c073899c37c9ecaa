#include "pd/dqn/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pd/eval/eval.hpp"

namespace pd::dqn {

nn::NetworkSpec default_teacher_spec(int actions) {
  nn::NetworkSpec spec;
  spec.input_channels = env::kStackDepth;
  spec.input_height = env::kFrameHeight;
  spec.input_width = env::kFrameWidth;
  spec.conv_layers = {{16, 3, 1}, {32, 4, 2}};
  spec.dense_layers = {128};
  spec.output_units = actions;
  return spec;
}

DqnAgent::DqnAgent(nn::NetworkSpec spec, std::uint64_t seed, nn::RmsPropConfig optimizer,
                   double gamma)
    : DqnAgent(spec, nn::init_parameters(spec, seed), optimizer, gamma) {}

DqnAgent::DqnAgent(nn::NetworkSpec spec, nn::ParameterStore params, nn::RmsPropConfig optimizer,
                   double gamma)
    : spec_(std::move(spec)),
      params_(std::move(params)),
      target_(params_),
      optimizer_(params_.size(), optimizer),
      gamma_(gamma) {
  if (params_.size() != nn::count_parameters(spec_)) {
    throw std::invalid_argument("DqnAgent: parameters do not match spec");
  }
  set_gamma(gamma);
}

void DqnAgent::set_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("DqnAgent: gamma must be in [0, 1]");
  gamma_ = gamma;
}

void DqnAgent::set_epsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("DqnAgent: epsilon must be in [0, 1]");
  }
  epsilon_ = epsilon;
}

nn::QVector DqnAgent::q_values(const env::ObservationStack& stack) const {
  return nn::QVector(nn::forward(spec_, params_, stack.data()));
}

nn::QVector DqnAgent::target_q_values(std::span<const double> stack) const {
  return nn::QVector(nn::forward(spec_, target_, stack));
}

EpsilonGreedyChoice epsilon_greedy(std::span<const double> q, double epsilon, Rng& rng) {
  if (rng.uniform() < epsilon) {
    return {static_cast<int>(rng.uniform_int(q.size())), true};
  }
  return {static_cast<int>(nn::argmax(q)), false};
}

int act_epsilon_greedy(const DqnAgent& agent, const env::ObservationStack& stack, Rng& rng) {
  return epsilon_greedy(agent.q_values(stack).values(), agent.epsilon(), rng).action;
}

double td_target(const DqnAgent& agent, const Transition& t) {
  if (t.terminal) return t.reward;
  const nn::QVector next = agent.target_q_values(t.next_state.unpack());
  return t.reward + agent.gamma() * next[nn::argmax(next.values())];
}

double dqn_update(DqnAgent& agent, TransitionMemory& memory, std::size_t batch_size) {
  if (memory.empty()) throw std::logic_error("dqn_update: replay memory is empty");
  if (batch_size == 0) throw std::invalid_argument("dqn_update: batch size must be positive");
  const auto batch = memory.sample(batch_size);
  const int n = static_cast<int>(batch.size());
  const std::size_t actions = static_cast<std::size_t>(agent.spec().output_units);
  std::vector<double> states(env::kStackSize * batch.size());
  std::vector<double> next_states(env::kStackSize * batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    if (t.action < 0 || t.action >= agent.spec().output_units) {
      throw std::out_of_range("dqn_update: transition action out of range");
    }
    t.state.unpack_into(std::span<double>(states).subspan(i * env::kStackSize, env::kStackSize));
    t.next_state.unpack_into(
        std::span<double>(next_states).subspan(i * env::kStackSize, env::kStackSize));
  }
  const std::vector<double> next_q =
      nn::forward_batch(agent.spec(), agent.target_params(), next_states, n);
  thread_local nn::ForwardTrace trace;
  nn::forward_batch_traced(agent.spec(), agent.params(), states, n, trace);

  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> out_grad(actions * batch.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    double target = t.reward;
    if (!t.terminal) {
      const std::span<const double> q(next_q.data() + i * actions, actions);
      target += agent.gamma() * q[nn::argmax(q)];
    }
    const double delta = trace.output(static_cast<int>(i))[t.action] - target;
    loss += scale * delta * delta;
    // Only the taken action's output carries gradient.
    out_grad[i * actions + t.action] = 2.0 * scale * delta;
  }
  std::vector<double> grad(agent.params().size(), 0.0);
  nn::backward_traced(agent.spec(), agent.params(), trace, out_grad, grad);
  nn::rmsprop_step(agent.mutable_params().values, grad, agent.optimizer());
  return loss;
}

void TrainDqnConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("dqn config: " + what); };
  if (total_steps < 0) fail("total_steps must be >= 0");
  if (learning_starts < 0) fail("learning_starts must be >= 0");
  if (train_every < 1) fail("train_every must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (sync_interval < 1) fail("sync_interval must be >= 1");
  if (!(epsilon_start >= 0 && epsilon_start <= 1)) fail("epsilon_start must be in [0, 1]");
  if (!(epsilon_end >= 0 && epsilon_end <= 1)) fail("epsilon_end must be in [0, 1]");
  if (!(epsilon_anneal_fraction > 0 && epsilon_anneal_fraction <= 1)) {
    fail("epsilon_anneal_fraction must be in (0, 1]");
  }
  if (memory_capacity < 1) fail("memory_capacity must be >= 1");
  if (!(gamma >= 0 && gamma <= 1)) fail("gamma must be in [0, 1]");
  if (!(optimizer.learning_rate > 0)) fail("learning_rate must be positive");
  if (!(optimizer.decay > 0 && optimizer.decay < 1)) fail("rmsprop decay must be in (0, 1)");
  if (!(optimizer.epsilon > 0)) fail("rmsprop epsilon must be positive");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (!(eval_epsilon >= 0 && eval_epsilon <= 1)) fail("eval_epsilon must be in [0, 1]");
  if (eval_nullops < 0) fail("eval_nullops must be >= 0");
}

CsvTable curve_table(const std::vector<CurveRow>& curve) {
  CsvTable t({"env_steps", "updates", "eval_score_mean", "eval_score_std", "epsilon"});
  for (const auto& r : curve) {
    t.add_row({std::to_string(r.env_steps), std::to_string(r.updates),
               format_double(r.eval_score_mean), format_double(r.eval_score_std),
               format_double(r.epsilon)});
  }
  return t;
}

namespace {

nn::NetworkSpec resolve_spec(env::GameId game, const nn::NetworkSpec& spec) {
  nn::NetworkSpec s = spec.conv_layers.empty() && spec.dense_layers.empty()
                          ? default_teacher_spec(env::action_count(game))
                          : spec;
  if (s.output_units != env::action_count(game)) {
    throw std::invalid_argument("dqn config: network outputs do not match the game's actions");
  }
  return s;
}

}  // namespace

DqnTrainer::DqnTrainer(env::GameId game, TrainDqnConfig config)
    : game_(game),
      config_((config.validate(), std::move(config))),
      agent_(resolve_spec(game, config_.spec), derive_seed(config_.seed, "dqn_init"),
             config_.optimizer, config_.gamma),
      memory_(config_.memory_capacity, derive_seed(config_.seed, "dqn_memory")),
      state_(env::make_game(game, derive_seed(config_.seed, "dqn_env"))),
      stack_(state_.observe()),
      act_rng_(derive_seed(config_.seed, "dqn_act")) {
  agent_.set_epsilon(scheduled_epsilon(0));
}

double DqnTrainer::scheduled_epsilon(int step) const {
  const double horizon = config_.epsilon_anneal_fraction * config_.total_steps;
  if (horizon <= 0.0 || step >= horizon) return config_.epsilon_end;
  const double frac = step / horizon;
  return config_.epsilon_start + frac * (config_.epsilon_end - config_.epsilon_start);
}

void DqnTrainer::run_steps(int n) {
  for (int i = 0; i < n && !done(); ++i) {
    agent_.set_epsilon(scheduled_epsilon(env_steps_));
    const int action = act_epsilon_greedy(agent_, stack_, act_rng_);
    Transition t;
    t.state = stack_.pack();
    t.action = action;
    env::StepResult r = state_.step(action);
    stack_.push(r.observation);
    t.reward = r.reward;
    t.next_state = stack_.pack();
    t.terminal = r.terminal;
    memory_.push(std::move(t));
    ++env_steps_;
    if (r.terminal) {
      stack_ = env::ObservationStack(state_.reset());
      ++episodes_;
    }
    if (env_steps_ >= config_.learning_starts && env_steps_ % config_.train_every == 0) {
      dqn_update(agent_, memory_, static_cast<std::size_t>(config_.batch_size));
      ++updates_;
      if (updates_ % config_.sync_interval == 0) agent_.sync_target();
    }
  }
  agent_.set_epsilon(scheduled_epsilon(env_steps_));
}

std::uint64_t DqnTrainer::eval_seed() const { return derive_seed(config_.seed, "dqn_eval"); }

CurveRow DqnTrainer::evaluate_now() const {
  const eval::Policy policy = eval::network_policy(game_, agent_.spec(), agent_.params());
  const eval::EpisodeStats stats =
      eval::play_episodes(policy, config_.eval_episodes, config_.eval_epsilon,
                          eval_seed(), config_.eval_nullops);
  return CurveRow{env_steps_, updates_, stats.mean, stats.stddev, agent_.epsilon()};
}

TrainDqnResult train_dqn(env::GameId game, const TrainDqnConfig& config) {
  DqnTrainer trainer(game, config);
  std::vector<CurveRow> curve;
  curve.push_back(trainer.evaluate_now());
  while (!trainer.done()) {
    trainer.run_steps(config.eval_every);
    curve.push_back(trainer.evaluate_now());
  }
  return TrainDqnResult{trainer.agent(), std::move(curve)};
}

}  // namespace pd::dqn
