#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pd/rng.hpp"

namespace pd::env {

enum class GameId : std::uint32_t { kCatch = 0, kAvoid = 1, kNavigate = 2 };

inline constexpr int kFrameHeight = 12;
inline constexpr int kFrameWidth = 12;
inline constexpr int kFramePixels = kFrameHeight * kFrameWidth;
inline constexpr int kStackDepth = 4;
inline constexpr int kStackSize = kStackDepth * kFramePixels;

std::string_view game_name(GameId id);
// Throws std::invalid_argument for anything but catch, avoid, navigate.
GameId parse_game_id(std::string_view name);
std::vector<GameId> all_games();

int action_count(GameId id);
int noop_action(GameId id);
int episode_cap(GameId id);

struct RewardBounds {
  double low;
  double high;
};
RewardBounds reward_bounds(GameId id);

// Pixel intensities are multiples of 1/255 so frames pack into bytes losslessly.
inline constexpr double pixel_level(int code) { return code / 255.0; }

struct Observation {
  std::vector<double> pixels;  // row-major kFrameHeight x kFrameWidth, values in [0, 1]
};

// Byte-packed frames for replay storage (code / 255 recovers each pixel).
struct PackedStack {
  std::vector<std::uint8_t> codes;

  std::vector<double> unpack() const;
  void unpack_into(std::span<double> out) const;
  friend bool operator==(const PackedStack&, const PackedStack&) = default;
};

// The last kStackDepth frames, oldest first, laid out channel-major.
class ObservationStack {
 public:
  ObservationStack();
  explicit ObservationStack(const Observation& first);

  void push(const Observation& frame);
  std::span<const double> data() const { return frames_; }
  // Frame i, 0 = oldest.
  std::span<const double> frame(int i) const;
  PackedStack pack() const;
  static ObservationStack unpack(const PackedStack& packed);

  friend bool operator==(const ObservationStack&, const ObservationStack&) = default;

 private:
  std::vector<double> frames_;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminal = false;
};

struct CatchState {
  int ball_row = 0;
  int ball_col = 0;
  int paddle_col = 0;
  friend bool operator==(const CatchState&, const CatchState&) = default;
};

struct AvoidState {
  std::array<int, 2> object_row{};
  std::array<int, 2> object_col{};
  int player_col = 0;
  friend bool operator==(const AvoidState&, const AvoidState&) = default;
};

struct NavigateState {
  int row = 0;
  int col = 0;
  std::uint32_t dug_mask = 0;  // bit i set: wall i of the fixed layout removed
  friend bool operator==(const NavigateState&, const NavigateState&) = default;
};

// Single-owner mutable game. Copying a GameState snapshots it completely,
// including the generator that draws respawn positions and new episodes.
class GameState {
 public:
  GameId id() const { return id_; }
  int action_count() const { return env::action_count(id_); }
  int step_count() const { return step_count_; }
  bool terminal() const { return terminal_; }

  Observation observe() const;
  // Throws std::out_of_range for an invalid action, std::logic_error when
  // the episode already ended.
  StepResult step(int action);
  // Starts a new episode from the internal generator.
  Observation reset();

  const std::variant<CatchState, AvoidState, NavigateState>& detail() const { return detail_; }

  std::string serialize() const;
  static GameState deserialize(const std::string& bytes);

  friend GameState make_game(GameId id, std::uint64_t seed);
  friend bool operator==(const GameState&, const GameState&) = default;

 private:
  GameState(GameId id, std::uint64_t seed);

  StepResult step_catch(int action);
  StepResult step_avoid(int action);
  StepResult step_navigate(int action);

  GameId id_;
  Rng rng_;
  int step_count_ = 0;
  bool terminal_ = false;
  std::variant<CatchState, AvoidState, NavigateState> detail_;
};

GameState make_game(GameId id, std::uint64_t seed);

struct NullOpStart {
  ObservationStack stack;
  int sampled = 0;  // k drawn uniformly from {0..max_nullops}
  int applied = 0;  // null-ops actually taken; fewer than k only if the episode would end
};

// Resets the game and plays k ~ Uniform{0..max_nullops} no-effect actions.
NullOpStart reset_with_nullops(GameState& state, Rng& rng, int max_nullops);

// Fixed wall cells of the navigate layout; dig removes them.
struct Cell {
  int row;
  int col;
};
std::span<const Cell> navigate_walls();
Cell navigate_goal();
Cell navigate_pit();

// Hand-coded reference policies. Catch and navigate are optimal; avoid
// never gets hit and greedily shoots reachable objects.
int scripted_action(const GameState& state);

// Steps to reach the goal from a navigate state under optimal play
// (-1 when unreachable).
int navigate_distance(const NavigateState& s);

}  // namespace pd::env
