#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pd/distill/distill.hpp"
#include "pd/dqn/agent.hpp"
#include "pd/env/game.hpp"
#include "pd/multitask/multitask.hpp"
#include "pd/nn/architectures.hpp"
#include "pd/online/online.hpp"

namespace pd::harness {

enum class Preset {
  kTrainTeacher,
  kLossCompare,
  kCompress,
  kMultiDistill,
  kMultiDqn,
  kOnline,
  kEvalOnly,
  kParamCount,
};

std::string_view preset_name(Preset p);
// Throws ConfigError for an unknown name.
Preset parse_preset(std::string_view name);
std::vector<Preset> all_presets();

// Everything one run needs besides the preset and the output directory.
// Text form: "[section]" headers and "key = value" lines; '#' starts a comment.
struct ExperimentConfig {
  // [experiment]
  std::vector<env::GameId> games = env::all_games();
  std::uint64_t seed = 1;
  int pool_size = 100;
  double eval_epsilon = 0.05;
  std::string teachers;  // directory of <game>.ckpt to reuse; empty: train them

  // [teacher], with per-game overrides in [teacher.<game>].
  dqn::TrainDqnConfig teacher;
  std::map<env::GameId, std::map<std::string, std::string>> teacher_overrides;

  // [distill]; total_budget is budget_fraction of the teacher's steps.
  distill::DistillConfig distill;
  double distill_budget_fraction = 0.5;

  // [compress]
  std::vector<nn::HiddenLayers> compress_students;

  // [multitask]
  int trunk_width_scale = 1;
  std::vector<int> head_hidden{32};
  multitask::MultiDistillConfig multi_distill;

  // [multi_dqn]
  multitask::MultiDqnConfig multi_dqn;

  // [online]; the DQN side uses the teacher config of `online_game`
  // apart from the two overrides below.
  env::GameId online_game = env::GameId::kCatch;
  std::vector<std::uint64_t> online_seeds{1, 2};
  int online_dqn_total_steps = 0;    // 0: the game's teacher setting
  int online_dqn_eval_episodes = 0;  // 0: the game's teacher setting
  online::OnlineConfig online;

  ExperimentConfig();

  // Teacher settings for one game with its overrides applied and the seed
  // derived from the experiment seed.
  dqn::TrainDqnConfig teacher_for(env::GameId game) const;
  distill::DistillConfig distill_for(env::GameId game) const;
  // DQN settings of the online run for one seed.
  dqn::TrainDqnConfig online_dqn_for(std::uint64_t seed) const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Unknown section or key, malformed value, or out-of-range value.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, int line, const std::string& message);
  const std::string& key() const { return key_; }
  int line() const { return line_; }  // 0 when not tied to a line

 private:
  std::string key_;
  int line_;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key of every section, so the text alone reconstructs the config.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace pd::harness
