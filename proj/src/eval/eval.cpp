#include "pd/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "pd/nn/checkpoint.hpp"
#include "pd/nn/losses.hpp"

namespace pd::eval {

using env::GameState;
using env::ObservationStack;

Policy network_policy(env::GameId game, nn::NetworkSpec spec, nn::ParameterStore params) {
  if (spec.output_units != env::action_count(game)) {
    throw std::invalid_argument("network_policy: output units do not match the game's actions");
  }
  return Policy{game, [spec = std::move(spec), params = std::move(params)](
                          const GameState&, const ObservationStack& stack) {
                  return static_cast<int>(nn::argmax(nn::forward(spec, params, stack.data())));
                }};
}

Policy scripted_policy(env::GameId game) {
  return Policy{game, [](const GameState& s, const ObservationStack&) {
                  return env::scripted_action(s);
                }};
}

EpisodeStats EpisodeStats::from_scores(std::vector<double> scores) {
  EpisodeStats s;
  s.scores = std::move(scores);
  if (s.scores.empty()) return s;
  // Summing in sorted order makes the statistics independent of episode order.
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  if (sorted.size() > 1) {
    double ss = 0.0;
    for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
    s.ci95 = 1.96 * s.stddev / std::sqrt(n);
  }
  return s;
}

namespace {

int choose_action(const Policy& policy, const GameState& state, const ObservationStack& stack,
                  double epsilon, Rng& rng) {
  if (rng.uniform() < epsilon) return static_cast<int>(rng.uniform_int(state.action_count()));
  return policy.act(state, stack);
}

double play_from(const Policy& policy, GameState state, ObservationStack stack, double epsilon,
                 Rng& rng) {
  double total = 0.0;
  while (!state.terminal()) {
    const int a = choose_action(policy, state, stack, epsilon, rng);
    env::StepResult r = state.step(a);
    total += r.reward;
    stack.push(r.observation);
  }
  return total;
}

}  // namespace

EpisodeStats play_episodes(const Policy& policy, int episodes, double epsilon, std::uint64_t seed,
                           int max_nullops) {
  if (episodes < 0) throw std::invalid_argument("play_episodes: negative episode count");
  GameState game = env::make_game(policy.game, derive_seed(seed, "episodes"));
  Rng rng(derive_seed(seed, "explore"));
  std::vector<double> scores;
  scores.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    env::NullOpStart start = env::reset_with_nullops(game, rng, max_nullops);
    scores.push_back(play_from(policy, game, start.stack, epsilon, rng));
  }
  return EpisodeStats::from_scores(std::move(scores));
}

StartStatePool build_start_pool(env::GameId game, const Policy& reference, int n_states, Rng& rng) {
  if (n_states < 1) throw std::invalid_argument("build_start_pool: n_states must be >= 1");
  if (reference.game != game) throw std::invalid_argument("build_start_pool: policy/game mismatch");
  StartStatePool pool;
  pool.game = game;
  GameState state = env::make_game(game, rng.next_u64());
  const int cap = env::episode_cap(game);
  for (int i = 0; i < n_states; ++i) {
    std::vector<PoolEntry> visited;
    ObservationStack stack(state.reset());
    visited.push_back({state, stack, 0, 0});
    while (!state.terminal()) {
      if (state.step_count() > cap) {
        throw std::runtime_error("build_start_pool: reference episode did not terminate");
      }
      env::StepResult r = state.step(reference.act(state, stack));
      stack.push(r.observation);
      visited.push_back({state, stack, state.step_count(), 0});
    }
    const int length = state.step_count();
    // Terminal snapshots are never eligible: step t <= 0.2 * length < length.
    const int last = static_cast<int>(std::floor(kStartWindow * length));
    PoolEntry chosen = visited[rng.uniform_int(static_cast<std::size_t>(last) + 1)];
    chosen.source_length = length;
    pool.entries.push_back(std::move(chosen));
  }
  return pool;
}

std::string encode_start_pool(const StartStatePool& pool) {
  ByteWriter w;
  nn::write_container_header(w, nn::PayloadKind::kStartPool);
  w.u32(static_cast<std::uint32_t>(pool.game));
  w.u32(static_cast<std::uint32_t>(pool.entries.size()));
  for (const auto& e : pool.entries) {
    w.str(e.state.serialize());
    const env::PackedStack packed = e.stack.pack();
    w.str(std::string(packed.codes.begin(), packed.codes.end()));
    w.u32(static_cast<std::uint32_t>(e.source_step));
    w.u32(static_cast<std::uint32_t>(e.source_length));
  }
  return w.bytes();
}

StartStatePool decode_start_pool(const std::string& bytes) {
  ByteReader r(bytes);
  nn::read_container_header(r, nn::PayloadKind::kStartPool);
  StartStatePool pool;
  pool.game = static_cast<env::GameId>(r.u32());
  (void)env::game_name(pool.game);
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    GameState state = GameState::deserialize(r.str());
    const std::string codes = r.str();
    env::PackedStack packed;
    packed.codes.assign(codes.begin(), codes.end());
    PoolEntry e{std::move(state), ObservationStack::unpack(packed), 0, 0};
    e.source_step = static_cast<int>(r.u32());
    e.source_length = static_cast<int>(r.u32());
    pool.entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw std::runtime_error("decode_start_pool: trailing bytes");
  return pool;
}

EpisodeStats evaluate(const Policy& policy, const StartStatePool& pool, double epsilon,
                      std::uint64_t seed, int threads) {
  if (policy.game != pool.game) {
    throw std::invalid_argument("evaluate: pool is for " + std::string(env::game_name(pool.game)) +
                                ", policy for " + std::string(env::game_name(policy.game)));
  }
  if (pool.entries.empty()) throw std::invalid_argument("evaluate: empty start pool");
  std::vector<double> scores(pool.entries.size());
  auto run = [&](std::size_t i) {
    const PoolEntry& e = pool.entries[i];
    Rng rng(derive_seed(seed, e.state.serialize()));
    scores[i] = play_from(policy, e.state, e.stack, epsilon, rng);
  };
  if (threads <= 1) {
    for (std::size_t i = 0; i < scores.size(); ++i) run(i);
  } else {
    std::vector<std::jthread> workers;
    const std::size_t t = static_cast<std::size_t>(threads);
    for (std::size_t w = 0; w < t; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t i = w; i < scores.size(); i += t) run(i);
      });
    }
  }
  return EpisodeStats::from_scores(std::move(scores));
}

std::optional<double> relative_score(double score, double teacher_score) {
  if (!(teacher_score > 0.0)) return std::nullopt;
  return 100.0 * score / teacher_score;
}

double round_to_decimals(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

double geometric_mean(std::span<const double> percents) {
  if (percents.empty()) throw std::invalid_argument("geometric_mean: empty list");
  double log_sum = 0.0;
  for (double p : percents) {
    if (!(p > 0.0)) {
      throw std::invalid_argument("geometric_mean: entries must be positive (got " +
                                  format_double(p) + ")");
    }
    log_sum += std::log(p);
  }
  return std::exp(log_sum / static_cast<double>(percents.size()));
}

std::optional<double> EvaluationReport::aggregate() const {
  std::vector<double> pcts;
  for (const auto& t : tasks) {
    if (!t.relative_pct || !(*t.relative_pct > 0.0)) return std::nullopt;
    pcts.push_back(*t.relative_pct);
  }
  if (pcts.empty()) return std::nullopt;
  return geometric_mean(pcts);
}

CsvTable EvaluationReport::to_csv() const {
  CsvTable t({"experiment_id", "task_id", "score", "teacher_score", "relative_pct"});
  for (const auto& task : tasks) {
    t.add_row({experiment_id, task.task_id, format_fixed(task.score, 4),
               format_fixed(task.teacher_score, 4),
               task.relative_pct ? format_fixed(*task.relative_pct, 1) : ""});
  }
  const auto gm = aggregate();
  t.add_row({experiment_id, "geometric_mean", "", "", gm ? format_fixed(*gm, 1) : ""});
  return t;
}

LayerSelector parse_layer_selector(std::string_view name) {
  if (name == "first_conv") return LayerSelector::kFirstConv;
  if (name == "last_dense") return LayerSelector::kLastDense;
  throw std::invalid_argument("unknown layer selector '" + std::string(name) +
                              "' (expected first_conv or last_dense)");
}

std::size_t selected_layer(const nn::NetworkSpec& spec, LayerSelector selector) {
  if (selector == LayerSelector::kFirstConv) {
    if (spec.conv_layers.empty()) throw std::invalid_argument("network has no conv layer");
    return 0;
  }
  if (spec.dense_layers.empty()) throw std::invalid_argument("network has no hidden dense layer");
  return spec.conv_layers.size() + spec.dense_layers.size() - 1;
}

CsvTable activation_rows(std::span<const ActivationSample> samples,
                         const std::vector<std::vector<double>>& activations) {
  const std::size_t width = activations.empty() ? 0 : activations.front().size();
  std::vector<std::string> header{"task_id", "sample_id"};
  for (std::size_t j = 0; j < width; ++j) header.push_back("a" + std::to_string(j));
  CsvTable t(std::move(header));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<std::string> row{samples[i].task_id, std::to_string(i)};
    for (double v : activations[i]) row.push_back(format_double(v));
    t.add_row(std::move(row));
  }
  return t;
}

CsvTable export_activations(const nn::NetworkSpec& spec, const nn::ParameterStore& params,
                            std::span<const ActivationSample> samples, LayerSelector selector) {
  const std::size_t layer = selected_layer(spec, selector);
  std::vector<std::vector<double>> acts;
  acts.reserve(samples.size());
  for (const auto& s : samples) acts.push_back(nn::layer_activation(spec, params, s.stack.data(), layer));
  return activation_rows(samples, acts);
}

}  // namespace pd::eval
