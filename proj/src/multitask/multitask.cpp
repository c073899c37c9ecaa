#include "pd/multitask/multitask.hpp"

#include <algorithm>
#include <stdexcept>

#include "pd/eval/eval.hpp"
#include "pd/nn/checkpoint.hpp"

namespace pd::multitask {

namespace {

std::string task_name(env::GameId game) { return std::string(env::game_name(game)); }

void check_rmsprop(const nn::RmsPropConfig& o, const char* where) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument(std::string(where) + ": " + what);
  };
  if (!(o.learning_rate > 0)) fail("learning_rate must be positive");
  if (!(o.decay > 0 && o.decay < 1)) fail("rmsprop decay must be in (0, 1)");
  if (!(o.epsilon > 0)) fail("rmsprop epsilon must be positive");
}

}  // namespace

nn::NetworkSpec default_trunk_spec(int width_scale) {
  if (width_scale < 1) throw std::invalid_argument("default_trunk_spec: width_scale must be >= 1");
  nn::NetworkSpec s;
  s.input_channels = env::kStackDepth;
  s.input_height = env::kFrameHeight;
  s.input_width = env::kFrameWidth;
  s.conv_layers = {{16 * width_scale, 3, 1}, {32 * width_scale, 4, 2}};
  s.output_units = 128 * width_scale;
  s.output_activation = nn::OutputActivation::kRelu;
  return s;
}

nn::NetworkSpec head_spec(int feature_dim, std::span<const int> hidden, int actions) {
  nn::NetworkSpec s;
  s.input_channels = feature_dim;
  s.dense_layers.assign(hidden.begin(), hidden.end());
  s.output_units = actions;
  s.validate();
  return s;
}

bool operator==(const TaskHead& a, const TaskHead& b) {
  return a.game == b.game && a.spec == b.spec && a.params == b.params;
}

bool operator==(const MultiTaskNetwork& a, const MultiTaskNetwork& b) {
  return a.trunk_spec_ == b.trunk_spec_ && a.trunk_params_ == b.trunk_params_ &&
         a.heads_ == b.heads_;
}

MultiTaskNetwork::MultiTaskNetwork(nn::NetworkSpec trunk_spec, nn::ParameterStore trunk_params,
                                   std::vector<TaskHead> heads)
    : trunk_spec_(std::move(trunk_spec)),
      trunk_params_(std::move(trunk_params)),
      heads_(std::move(heads)) {
  if (trunk_spec_.output_activation != nn::OutputActivation::kRelu) {
    throw std::invalid_argument("MultiTaskNetwork: trunk output must be rectified");
  }
  if (trunk_params_.size() != nn::count_parameters(trunk_spec_)) {
    throw std::invalid_argument("MultiTaskNetwork: trunk parameters do not match spec");
  }
  if (heads_.empty()) throw std::invalid_argument("MultiTaskNetwork: no task heads");
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const TaskHead& h = heads_[i];
    if (h.spec.input_size() != static_cast<std::size_t>(trunk_spec_.output_units) ||
        !h.spec.conv_layers.empty()) {
      throw std::invalid_argument("MultiTaskNetwork: head input does not match trunk features");
    }
    if (h.spec.output_units != env::action_count(h.game)) {
      throw std::invalid_argument("MultiTaskNetwork: head for " + task_name(h.game) +
                                  " must have one output per action");
    }
    if (h.params.size() != nn::count_parameters(h.spec)) {
      throw std::invalid_argument("MultiTaskNetwork: head parameters do not match spec");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (heads_[j].game == h.game) throw std::invalid_argument("MultiTaskNetwork: duplicate task");
    }
  }
}

MultiTaskNetwork MultiTaskNetwork::create(const nn::NetworkSpec& trunk_spec,
                                          const std::vector<env::GameId>& games,
                                          std::vector<int> head_hidden, std::uint64_t seed) {
  nn::ParameterStore trunk = nn::init_parameters(trunk_spec, derive_seed(seed, "trunk"));
  std::vector<TaskHead> heads;
  for (env::GameId g : games) {
    nn::NetworkSpec hs = head_spec(trunk_spec.output_units, head_hidden, env::action_count(g));
    heads.push_back({g, hs, nn::init_parameters(hs, derive_seed(seed, "head/" + task_name(g)))});
  }
  return MultiTaskNetwork(trunk_spec, std::move(trunk), std::move(heads));
}

MultiTaskNetwork MultiTaskNetwork::from_single(env::GameId game, const nn::NetworkSpec& spec,
                                               const nn::ParameterStore& params) {
  if (spec.dense_layers.empty()) {
    throw std::invalid_argument("from_single: network has no dense layer to split after");
  }
  nn::NetworkSpec trunk = spec;
  trunk.dense_layers.clear();
  trunk.output_units = spec.dense_layers.front();
  trunk.output_activation = nn::OutputActivation::kRelu;
  const std::vector<int> hidden(spec.dense_layers.begin() + 1, spec.dense_layers.end());
  nn::NetworkSpec hs = head_spec(trunk.output_units, hidden, spec.output_units);
  const std::size_t n_trunk = nn::count_parameters(trunk);
  if (params.size() != n_trunk + nn::count_parameters(hs)) {
    throw std::invalid_argument("from_single: parameters do not match spec");
  }
  nn::ParameterStore tp{{params.values.begin(), params.values.begin() + n_trunk}};
  nn::ParameterStore hp{{params.values.begin() + n_trunk, params.values.end()}};
  return MultiTaskNetwork(trunk, std::move(tp), {{game, hs, std::move(hp)}});
}

std::size_t MultiTaskNetwork::task_index(env::GameId game) const {
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    if (heads_[i].game == game) return i;
  }
  throw std::out_of_range("MultiTaskNetwork: no head for task " + task_name(game));
}

std::vector<env::GameId> MultiTaskNetwork::games() const {
  std::vector<env::GameId> out;
  for (const auto& h : heads_) out.push_back(h.game);
  return out;
}

nn::QVector MultiTaskNetwork::forward_task(env::GameId game, std::span<const double> stack) const {
  return nn::QVector(forward_task_batch(task_index(game), stack, 1));
}

std::vector<double> MultiTaskNetwork::forward_task_batch(std::size_t task,
                                                         std::span<const double> inputs,
                                                         int batch) const {
  const TaskHead& h = heads_.at(task);
  const std::vector<double> features = nn::forward_batch(trunk_spec_, trunk_params_, inputs, batch);
  return nn::forward_batch(h.spec, h.params, features, batch);
}

std::size_t MultiTaskNetwork::parameter_count() const {
  std::size_t n = trunk_params_.size();
  for (const auto& h : heads_) n += h.params.size();
  return n;
}

nn::NetworkSpec MultiTaskNetwork::task_spec(std::size_t task) const {
  const TaskHead& h = heads_.at(task);
  nn::NetworkSpec s = trunk_spec_;
  s.dense_layers = {trunk_spec_.output_units};
  s.dense_layers.insert(s.dense_layers.end(), h.spec.dense_layers.begin(), h.spec.dense_layers.end());
  s.output_units = h.spec.output_units;
  s.output_activation = h.spec.output_activation;
  return s;
}

nn::ParameterStore MultiTaskNetwork::task_params(std::size_t task) const {
  nn::ParameterStore p = trunk_params_;
  const auto& hv = heads_.at(task).params.values;
  p.values.insert(p.values.end(), hv.begin(), hv.end());
  return p;
}

std::string encode_multitask(const MultiTaskNetwork& net) {
  ByteWriter w;
  nn::write_container_header(w, nn::PayloadKind::kMultiTaskNetwork);
  nn::write_network(w, net.trunk_spec(), net.trunk_params());
  w.u32(static_cast<std::uint32_t>(net.task_count()));
  for (std::size_t i = 0; i < net.task_count(); ++i) {
    const TaskHead& h = net.head(i);
    w.u32(static_cast<std::uint32_t>(h.game));
    nn::write_network(w, h.spec, h.params);
  }
  return w.bytes();
}

MultiTaskNetwork decode_multitask(const std::string& bytes) {
  ByteReader r(bytes);
  nn::read_container_header(r, nn::PayloadKind::kMultiTaskNetwork);
  nn::NetworkSpec trunk_spec;
  nn::ParameterStore trunk_params;
  nn::read_network(r, trunk_spec, trunk_params);
  const std::uint32_t n = r.u32();
  if (n == 0 || n > 64) throw std::runtime_error("checkpoint: implausible task count");
  std::vector<TaskHead> heads;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t g = r.u32();
    if (g > static_cast<std::uint32_t>(env::GameId::kNavigate)) {
      throw std::runtime_error("checkpoint: unknown task id");
    }
    TaskHead h{static_cast<env::GameId>(g), {}, {}};
    nn::read_network(r, h.spec, h.params);
    heads.push_back(std::move(h));
  }
  if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes");
  return MultiTaskNetwork(std::move(trunk_spec), std::move(trunk_params), std::move(heads));
}

MultiTaskOptimizer::MultiTaskOptimizer(const MultiTaskNetwork& net, nn::RmsPropConfig config)
    : trunk(net.trunk_params().size(), config) {
  for (std::size_t i = 0; i < net.task_count(); ++i) heads.emplace_back(net.head(i).params.size(), config);
}

double train_task_batch(MultiTaskNetwork& net, MultiTaskOptimizer& opt, std::size_t task,
                        std::span<const double> inputs, int batch, const BatchLossFn& loss) {
  TaskHead& head = net.mutable_head(task);
  thread_local nn::ForwardTrace trunk_trace;
  thread_local nn::ForwardTrace head_trace;
  nn::forward_batch_traced(net.trunk_spec(), net.trunk_params(), inputs, batch, trunk_trace);
  nn::forward_batch_traced(head.spec, head.params, trunk_trace.output(), batch, head_trace);

  std::vector<double> out_grad(head_trace.output().size(), 0.0);
  const double value = loss(head_trace.output(), out_grad);

  std::vector<double> head_grad(head.params.size(), 0.0);
  std::vector<double> feature_grad(trunk_trace.output().size(), 0.0);
  nn::backward_traced(head.spec, head.params, head_trace, out_grad, head_grad, feature_grad);
  std::vector<double> trunk_grad(net.trunk_params().size(), 0.0);
  nn::backward_traced(net.trunk_spec(), net.trunk_params(), trunk_trace, feature_grad, trunk_grad);

  nn::rmsprop_step(net.mutable_trunk_params().values, trunk_grad, opt.trunk);
  nn::rmsprop_step(head.params.values, head_grad, opt.heads.at(task));
  return value;
}

TaskSchedule::TaskSchedule(std::size_t tasks) : episodes_(tasks, 0) {
  if (tasks == 0) throw std::invalid_argument("TaskSchedule: no tasks");
}

void TaskSchedule::next_episode() {
  ++episodes_[current_];
  current_ = (current_ + 1) % episodes_.size();
}

CsvTable multi_curve_table(const std::vector<MultiCurveRow>& rows) {
  CsvTable t({"steps", "updates", "task_id", "loss_mean", "eval_score"});
  for (const auto& r : rows) {
    t.add_row({std::to_string(r.steps), std::to_string(r.updates), r.task,
               format_double(r.loss_mean), format_double(r.eval_score)});
  }
  return t;
}

void MultiDistillConfig::validate() const {
  if (loss == distill::LossKind::kMse) {
    throw std::invalid_argument("multi-distill config: loss must be kl or nll");
  }
  as_single().validate();
}

distill::DistillConfig MultiDistillConfig::as_single() const {
  distill::DistillConfig c;
  c.loss = loss;
  c.tau = tau;
  c.refresh_steps = refresh_steps;
  c.updates_per_refresh = updates_per_refresh;
  c.batch_size = batch_size;
  c.optimizer = optimizer;
  c.total_budget = total_budget;
  c.buffer_capacity = buffer_capacity;
  c.teacher_epsilon = teacher_epsilon;
  c.max_nullops = max_nullops;
  c.eval_episodes = eval_episodes;
  c.eval_epsilon = eval_epsilon;
  c.seed = seed;
  return c;
}

namespace {

double task_eval(const MultiTaskNetwork& net, std::size_t task, int episodes, double epsilon,
                 std::uint64_t seed) {
  const eval::Policy policy =
      eval::network_policy(net.head(task).game, net.task_spec(task), net.task_params(task));
  return eval::play_episodes(policy, episodes, epsilon, seed).mean;
}

}  // namespace

MultiTrainResult multitask_distill(const std::vector<TeacherRef>& teachers, MultiTaskNetwork net,
                                   const MultiDistillConfig& config) {
  config.validate();
  const distill::DistillConfig single = config.as_single();
  const std::size_t k = teachers.size();
  if (k != net.task_count()) throw std::invalid_argument("multitask_distill: task/head mismatch");
  std::vector<distill::TeacherDataGenerator> generators;
  std::vector<distill::DistillBuffer> buffers;
  for (std::size_t i = 0; i < k; ++i) {
    const TeacherRef& t = teachers[i];
    if (net.head(i).game != t.game) throw std::invalid_argument("multitask_distill: task/head mismatch");
    const std::string name = task_name(t.game);
    generators.emplace_back(t.game, t.spec, t.params, config.teacher_epsilon, config.max_nullops,
                            derive_seed(config.seed, "teacher_data/" + name));
    buffers.emplace_back(config.buffer_capacity, derive_seed(config.seed, "distill_buffer/" + name));
  }
  MultiTaskOptimizer opt(net, config.optimizer);
  Rng task_rng(derive_seed(config.seed, "task_choice"));
  TaskSchedule schedule(k);
  MultiTrainResult result{net, {}, {}, std::vector<std::int64_t>(k, 0)};

  std::int64_t produced = 0;
  std::int64_t updates = 0;
  const std::size_t in = net.trunk_spec().input_size();
  std::vector<double> inputs;
  while (produced < config.total_budget) {
    const int n = static_cast<int>(
        std::min<std::int64_t>(config.refresh_steps, config.total_budget - produced));
    for (int s = 0; s < n; ++s) {
      const std::size_t t = schedule.current();
      generators[t].generate(buffers[t], 1);
      if (generators[t].at_episode_end()) schedule.next_episode();
    }
    produced += n;

    std::vector<double> loss_sum(k, 0.0);
    std::vector<int> loss_count(k, 0);
    for (int u = 0; u < config.updates_per_refresh; ++u) {
      // Each minibatch comes from one task's buffer, chosen uniformly among
      // the buffers that hold data.
      std::vector<std::size_t> ready;
      for (std::size_t i = 0; i < k; ++i) {
        if (!buffers[i].empty()) ready.push_back(i);
      }
      const std::size_t t = ready[task_rng.uniform_int(ready.size())];
      const auto batch = buffers[t].sample(static_cast<std::size_t>(config.batch_size));
      inputs.resize(in * batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i]->state.unpack_into(std::span<double>(inputs).subspan(i * in, in));
      }
      const std::size_t actions = batch.front()->teacher_q.size();
      const double scale = 1.0 / static_cast<double>(batch.size());
      const double loss = train_task_batch(
          result.net, opt, t, inputs, static_cast<int>(batch.size()),
          [&](std::span<const double> q, std::span<double> grad) {
            double total = 0.0;
            for (std::size_t i = 0; i < batch.size(); ++i) {
              const nn::LossResult r = distill::distill_loss(
                  config.loss, batch[i]->teacher_q.values(), q.subspan(i * actions, actions),
                  config.tau);
              total += scale * r.value;
              for (std::size_t a = 0; a < actions; ++a) grad[i * actions + a] = scale * r.grad[a];
            }
            return total;
          });
      loss_sum[t] += loss;
      ++loss_count[t];
      ++result.updates_per_task[t];
    }
    updates += config.updates_per_refresh;
    for (std::size_t t = 0; t < k; ++t) {
      MultiCurveRow row;
      row.steps = produced;
      row.updates = updates;
      row.task = task_name(result.net.head(t).game);
      row.loss_mean = loss_count[t] > 0 ? loss_sum[t] / loss_count[t] : 0.0;
      row.eval_score = task_eval(result.net, t, config.eval_episodes, config.eval_epsilon,
                                 derive_seed(single.seed, "distill_eval"));
      result.curve.push_back(row);
    }
  }
  result.episodes_per_task = schedule.episodes();
  for (const auto& b : buffers) result.memory_sizes.push_back(b.size());
  return result;
}

void MultiDqnConfig::validate() const {
  dqn::TrainDqnConfig c;
  c.total_steps = total_steps;
  c.learning_starts = learning_starts;
  c.train_every = train_every;
  c.batch_size = batch_size;
  c.sync_interval = sync_interval;
  c.epsilon_start = epsilon_start;
  c.epsilon_end = epsilon_end;
  c.epsilon_anneal_fraction = epsilon_anneal_fraction;
  c.memory_capacity = memory_capacity;
  c.gamma = gamma;
  c.optimizer = optimizer;
  c.eval_every = eval_every;
  c.eval_episodes = eval_episodes;
  c.eval_epsilon = eval_epsilon;
  c.validate();
  for (const auto& [game, g] : gamma_by_game) {
    if (!(g >= 0 && g <= 1)) throw std::invalid_argument("dqn config: gamma must be in [0, 1]");
  }
  check_rmsprop(optimizer, "multi-dqn config");
}

double MultiDqnConfig::gamma_for(env::GameId game) const {
  const auto it = gamma_by_game.find(game);
  return it == gamma_by_game.end() ? gamma : it->second;
}

MultiTrainResult multitask_dqn(MultiTaskNetwork net, const MultiDqnConfig& config) {
  config.validate();
  const std::size_t k = net.task_count();
  MultiTrainResult result{net, {}, {}, std::vector<std::int64_t>(k, 0)};
  MultiTaskNetwork target = net;
  MultiTaskOptimizer opt(net, config.optimizer);
  std::vector<dqn::TransitionMemory> memories;
  std::vector<env::GameState> games;
  std::vector<env::ObservationStack> stacks;
  for (std::size_t i = 0; i < k; ++i) {
    const std::string name = task_name(net.head(i).game);
    memories.emplace_back(config.memory_capacity, derive_seed(config.seed, "dqn_memory/" + name));
    games.push_back(env::make_game(net.head(i).game, derive_seed(config.seed, "dqn_env/" + name)));
    stacks.emplace_back(games.back().observe());
  }
  Rng act_rng(derive_seed(config.seed, "dqn_act"));
  TaskSchedule schedule(k);
  const double horizon = config.epsilon_anneal_fraction * config.total_steps;
  auto epsilon_at = [&](int step) {
    if (horizon <= 0.0 || step >= horizon) return config.epsilon_end;
    return config.epsilon_start + step / horizon * (config.epsilon_end - config.epsilon_start);
  };
  auto log_evals = [&](int steps, std::int64_t updates) {
    for (std::size_t t = 0; t < k; ++t) {
      MultiCurveRow row;
      row.steps = steps;
      row.updates = updates;
      row.task = task_name(result.net.head(t).game);
      row.eval_score = task_eval(result.net, t, config.eval_episodes, config.eval_epsilon,
                                 derive_seed(config.seed, "dqn_eval"));
      result.curve.push_back(row);
    }
  };

  std::int64_t updates = 0;
  const std::size_t in = net.trunk_spec().input_size();
  std::vector<double> states, next_states;
  log_evals(0, 0);
  for (int step = 1; step <= config.total_steps; ++step) {
    const std::size_t t = schedule.current();
    const env::GameId game = result.net.head(t).game;
    const nn::QVector q = result.net.forward_task(game, stacks[t].data());
    const int action = dqn::epsilon_greedy(q.values(), epsilon_at(step - 1), act_rng).action;
    dqn::Transition tr;
    tr.state = stacks[t].pack();
    tr.action = action;
    const env::StepResult r = games[t].step(action);
    stacks[t].push(r.observation);
    tr.reward = r.reward;
    tr.next_state = stacks[t].pack();
    tr.terminal = r.terminal;
    memories[t].push(std::move(tr));
    if (r.terminal) {
      stacks[t] = env::ObservationStack(games[t].reset());
      schedule.next_episode();
    }

    if (step >= config.learning_starts && step % config.train_every == 0) {
      // Q-learning on the task being played, through its own head.
      const auto batch = memories[t].sample(static_cast<std::size_t>(config.batch_size));
      const int n = static_cast<int>(batch.size());
      states.resize(in * batch.size());
      next_states.resize(in * batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i]->state.unpack_into(std::span<double>(states).subspan(i * in, in));
        batch[i]->next_state.unpack_into(std::span<double>(next_states).subspan(i * in, in));
      }
      const std::vector<double> next_q = target.forward_task_batch(t, next_states, n);
      const std::size_t actions = static_cast<std::size_t>(env::action_count(game));
      const double gamma = config.gamma_for(game);
      const double scale = 1.0 / n;
      train_task_batch(result.net, opt, t, states, n,
                       [&](std::span<const double> qs, std::span<double> grad) {
                         double loss = 0.0;
                         for (std::size_t i = 0; i < batch.size(); ++i) {
                           double y = batch[i]->reward;
                           if (!batch[i]->terminal) {
                             const std::span<const double> nq(next_q.data() + i * actions, actions);
                             y += gamma * nq[nn::argmax(nq)];
                           }
                           const double delta = qs[i * actions + batch[i]->action] - y;
                           loss += scale * delta * delta;
                           grad[i * actions + batch[i]->action] = 2.0 * scale * delta;
                         }
                         return loss;
                       });
      ++updates;
      ++result.updates_per_task[t];
      if (updates % config.sync_interval == 0) target = result.net;
    }
    if (step % config.eval_every == 0) log_evals(step, updates);
  }
  result.episodes_per_task = schedule.episodes();
  for (const auto& m : memories) result.memory_sizes.push_back(m.size());
  return result;
}

}  // namespace pd::multitask
