#include "pd/env/game.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "pd/bytes.hpp"

namespace pd::env {

namespace {

constexpr int kH = kFrameHeight;
constexpr int kW = kFrameWidth;
constexpr int kBottom = kH - 1;

// Pixel codes (value = code / 255).
constexpr int kBallCode = 255;
constexpr int kPaddleCode = 153;
constexpr int kAgentCode = 255;
constexpr int kWallCode = 102;
constexpr int kGoalCode = 204;
constexpr int kPitCode = 51;

constexpr double kAvoidSurvive = 0.1;
constexpr double kAvoidHit = -1.0;
constexpr double kAvoidShot = 0.5;
constexpr double kNavigateStep = -0.01;

// Navigate layout: a wall down column 6 with a gap at the bottom rows.
constexpr std::array<Cell, 9> kWalls = {{{0, 6}, {1, 6}, {2, 6}, {3, 6}, {4, 6},
                                         {5, 6}, {6, 6}, {7, 6}, {8, 6}}};
constexpr Cell kGoal{1, 9};
constexpr Cell kPit{3, 8};

enum CatchAction { kCatchLeft = 0, kCatchStay = 1, kCatchRight = 2 };
enum AvoidAction { kAvoidLeft = 0, kAvoidStay = 1, kAvoidRight = 2, kAvoidFire = 3 };
enum NavigateAction { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kNoop = 4, kDig = 5 };

int clamp_col(int c) { return std::clamp(c, 0, kW - 1); }

int wall_index(int row, int col) {
  for (std::size_t i = 0; i < kWalls.size(); ++i) {
    if (kWalls[i].row == row && kWalls[i].col == col) return static_cast<int>(i);
  }
  return -1;
}

bool is_wall(const NavigateState& s, int row, int col) {
  const int i = wall_index(row, col);
  return i >= 0 && !(s.dug_mask & (1u << i));
}

bool in_bounds(int row, int col) { return row >= 0 && row < kH && col >= 0 && col < kW; }

// Deterministic navigate transition; returns the reward and whether the episode ended
// (cap handling is left to the caller).
std::pair<double, bool> navigate_transition(NavigateState& s, int action) {
  static constexpr int kDr[4] = {-1, 1, 0, 0};
  static constexpr int kDc[4] = {0, 0, -1, 1};
  if (action <= kRight) {
    const int r = s.row + kDr[action];
    const int c = s.col + kDc[action];
    if (in_bounds(r, c) && !is_wall(s, r, c)) {
      s.row = r;
      s.col = c;
    }
  } else if (action == kDig) {
    for (int d = 0; d < 4; ++d) {
      const int i = wall_index(s.row + kDr[d], s.col + kDc[d]);
      if (i >= 0 && !(s.dug_mask & (1u << i))) {
        s.dug_mask |= 1u << i;
        break;
      }
    }
  }
  if (s.row == kGoal.row && s.col == kGoal.col) return {1.0, true};
  if (s.row == kPit.row && s.col == kPit.col) return {-1.0, true};
  return {kNavigateStep, false};
}

// dist[mask * cells + cell]: optimal steps to the goal, pit treated as a dead end.
const std::vector<int>& navigate_distance_table() {
  static const std::vector<int> table = [] {
    constexpr int kCells = kH * kW;
    const int masks = 1 << kWalls.size();
    constexpr int kInf = std::numeric_limits<int>::max() / 2;
    std::vector<int> dist(static_cast<std::size_t>(masks) * kCells, kInf);
    auto at = [&](std::uint32_t mask, int row, int col) -> int& {
      return dist[static_cast<std::size_t>(mask) * kCells + row * kW + col];
    };
    for (int m = 0; m < masks; ++m) at(m, kGoal.row, kGoal.col) = 0;
    bool changed = true;
    while (changed) {
      changed = false;
      for (int m = 0; m < masks; ++m) {
        for (int row = 0; row < kH; ++row) {
          for (int col = 0; col < kW; ++col) {
            NavigateState s{row, col, static_cast<std::uint32_t>(m)};
            if (is_wall(s, row, col)) continue;
            if ((row == kGoal.row && col == kGoal.col) || (row == kPit.row && col == kPit.col)) {
              continue;
            }
            int best = at(m, row, col);
            for (int a = 0; a < 6; ++a) {
              NavigateState next = s;
              auto [reward, done] = navigate_transition(next, a);
              if (done && reward < 0) continue;
              best = std::min(best, 1 + at(next.dug_mask, next.row, next.col));
            }
            if (best < at(m, row, col)) {
              at(m, row, col) = best;
              changed = true;
            }
          }
        }
      }
    }
    for (int& d : dist) {
      if (d >= kInf) d = -1;
    }
    return dist;
  }();
  return table;
}

void put(std::vector<double>& pixels, int row, int col, int code) {
  pixels[static_cast<std::size_t>(row) * kW + col] = pixel_level(code);
}

}  // namespace

std::string_view game_name(GameId id) {
  switch (id) {
    case GameId::kCatch: return "catch";
    case GameId::kAvoid: return "avoid";
    case GameId::kNavigate: return "navigate";
  }
  throw std::invalid_argument("unknown game id");
}

GameId parse_game_id(std::string_view name) {
  if (name == "catch") return GameId::kCatch;
  if (name == "avoid") return GameId::kAvoid;
  if (name == "navigate") return GameId::kNavigate;
  throw std::invalid_argument("unknown game '" + std::string(name) +
                              "' (expected catch, avoid or navigate)");
}

std::vector<GameId> all_games() { return {GameId::kCatch, GameId::kAvoid, GameId::kNavigate}; }

int action_count(GameId id) {
  switch (id) {
    case GameId::kCatch: return 3;
    case GameId::kAvoid: return 4;
    case GameId::kNavigate: return 6;
  }
  throw std::invalid_argument("unknown game id");
}

int noop_action(GameId id) {
  switch (id) {
    case GameId::kCatch: return kCatchStay;
    case GameId::kAvoid: return kAvoidStay;
    case GameId::kNavigate: return kNoop;
  }
  throw std::invalid_argument("unknown game id");
}

int episode_cap(GameId id) {
  switch (id) {
    case GameId::kCatch: return 24;
    case GameId::kAvoid: return 60;
    case GameId::kNavigate: return 80;
  }
  throw std::invalid_argument("unknown game id");
}

RewardBounds reward_bounds(GameId id) {
  switch (id) {
    case GameId::kCatch: return {-1.0, 1.0};
    case GameId::kAvoid: return {kAvoidHit, kAvoidShot + kAvoidSurvive};
    case GameId::kNavigate: return {-1.0, 1.0};
  }
  throw std::invalid_argument("unknown game id");
}

std::span<const Cell> navigate_walls() { return kWalls; }
Cell navigate_goal() { return kGoal; }
Cell navigate_pit() { return kPit; }

// --- PackedStack / ObservationStack ---------------------------------------

std::vector<double> PackedStack::unpack() const {
  std::vector<double> out(codes.size());
  unpack_into(out);
  return out;
}

void PackedStack::unpack_into(std::span<double> out) const {
  if (out.size() != codes.size()) throw std::invalid_argument("PackedStack: size mismatch");
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = pixel_level(codes[i]);
}

ObservationStack::ObservationStack() : frames_(kStackSize, 0.0) {}

ObservationStack::ObservationStack(const Observation& first) : frames_(kStackSize) {
  if (first.pixels.size() != static_cast<std::size_t>(kFramePixels)) {
    throw std::invalid_argument("ObservationStack: frame has wrong size");
  }
  for (int f = 0; f < kStackDepth; ++f) {
    std::copy(first.pixels.begin(), first.pixels.end(), frames_.begin() + f * kFramePixels);
  }
}

void ObservationStack::push(const Observation& frame) {
  if (frame.pixels.size() != static_cast<std::size_t>(kFramePixels)) {
    throw std::invalid_argument("ObservationStack: frame has wrong size");
  }
  std::copy(frames_.begin() + kFramePixels, frames_.end(), frames_.begin());
  std::copy(frame.pixels.begin(), frame.pixels.end(), frames_.end() - kFramePixels);
}

std::span<const double> ObservationStack::frame(int i) const {
  if (i < 0 || i >= kStackDepth) throw std::out_of_range("ObservationStack: frame index");
  return std::span<const double>(frames_).subspan(static_cast<std::size_t>(i) * kFramePixels,
                                                  kFramePixels);
}

PackedStack ObservationStack::pack() const {
  PackedStack p;
  p.codes.resize(frames_.size());
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const long code = std::lround(frames_[i] * 255.0);
    if (code < 0 || code > 255 || pixel_level(static_cast<int>(code)) != frames_[i]) {
      throw std::invalid_argument("ObservationStack::pack: pixel is not a multiple of 1/255");
    }
    p.codes[i] = static_cast<std::uint8_t>(code);
  }
  return p;
}

ObservationStack ObservationStack::unpack(const PackedStack& packed) {
  if (packed.codes.size() != static_cast<std::size_t>(kStackSize)) {
    throw std::invalid_argument("ObservationStack::unpack: wrong size");
  }
  ObservationStack s;
  packed.unpack_into(s.frames_);
  return s;
}

// --- GameState ------------------------------------------------------------

GameState::GameState(GameId id, std::uint64_t seed)
    : id_(id), rng_(derive_seed(seed, game_name(id))) {}

GameState make_game(GameId id, std::uint64_t seed) {
  (void)game_name(id);  // rejects out-of-range ids
  GameState state(id, seed);
  state.reset();
  return state;
}

Observation GameState::reset() {
  step_count_ = 0;
  terminal_ = false;
  switch (id_) {
    case GameId::kCatch: {
      CatchState s;
      s.ball_row = 0;
      s.ball_col = static_cast<int>(rng_.uniform_int(kW));
      s.paddle_col = static_cast<int>(rng_.uniform_int(kW));
      detail_ = s;
      break;
    }
    case GameId::kAvoid: {
      AvoidState s;
      s.object_row = {0, kH / 2};
      s.object_col = {static_cast<int>(rng_.uniform_int(kW)),
                      static_cast<int>(rng_.uniform_int(kW))};
      s.player_col = static_cast<int>(rng_.uniform_int(kW));
      detail_ = s;
      break;
    }
    case GameId::kNavigate: {
      NavigateState s;
      std::vector<Cell> free;
      for (int r = 0; r < kH; ++r) {
        for (int c = 0; c < kW; ++c) {
          if (wall_index(r, c) >= 0) continue;
          if ((r == kGoal.row && c == kGoal.col) || (r == kPit.row && c == kPit.col)) continue;
          free.push_back({r, c});
        }
      }
      const Cell start = free[rng_.uniform_int(free.size())];
      s.row = start.row;
      s.col = start.col;
      detail_ = s;
      break;
    }
  }
  return observe();
}

Observation GameState::observe() const {
  Observation obs;
  obs.pixels.assign(kFramePixels, 0.0);
  auto& px = obs.pixels;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CatchState>) {
          put(px, kBottom, s.paddle_col, kPaddleCode);
          put(px, s.ball_row, s.ball_col, kBallCode);
        } else if constexpr (std::is_same_v<T, AvoidState>) {
          put(px, kBottom, s.player_col, kPaddleCode);
          for (int i = 0; i < 2; ++i) put(px, s.object_row[i], s.object_col[i], kBallCode);
        } else {
          for (std::size_t i = 0; i < kWalls.size(); ++i) {
            if (!(s.dug_mask & (1u << i))) put(px, kWalls[i].row, kWalls[i].col, kWallCode);
          }
          put(px, kGoal.row, kGoal.col, kGoalCode);
          put(px, kPit.row, kPit.col, kPitCode);
          put(px, s.row, s.col, kAgentCode);
        }
      },
      detail_);
  return obs;
}

StepResult GameState::step(int action) {
  if (terminal_) throw std::logic_error("step: episode is over, reset first");
  if (action < 0 || action >= action_count()) {
    throw std::out_of_range("step: action " + std::to_string(action) + " out of range for " +
                            std::string(game_name(id_)));
  }
  ++step_count_;
  StepResult r;
  switch (id_) {
    case GameId::kCatch: r = step_catch(action); break;
    case GameId::kAvoid: r = step_avoid(action); break;
    case GameId::kNavigate: r = step_navigate(action); break;
  }
  if (step_count_ >= episode_cap(id_)) r.terminal = true;
  terminal_ = r.terminal;
  r.observation = observe();
  return r;
}

StepResult GameState::step_catch(int action) {
  auto& s = std::get<CatchState>(detail_);
  StepResult r;
  s.paddle_col = clamp_col(s.paddle_col + (action - kCatchStay));
  ++s.ball_row;
  if (s.ball_row == kBottom) {
    r.reward = s.paddle_col == s.ball_col ? 1.0 : -1.0;
    r.terminal = true;
  }
  return r;
}

StepResult GameState::step_avoid(int action) {
  auto& s = std::get<AvoidState>(detail_);
  StepResult r;
  double reward = 0.0;
  if (action == kAvoidFire) {
    int target = -1;
    for (int i = 0; i < 2; ++i) {
      if (s.object_col[i] == s.player_col && (target < 0 || s.object_row[i] > s.object_row[target])) {
        target = i;
      }
    }
    if (target >= 0) {
      reward += kAvoidShot;
      // Respawns above the frame; the fall below brings it to the top row.
      s.object_row[target] = -1;
      s.object_col[target] = static_cast<int>(rng_.uniform_int(kW));
    }
  } else {
    s.player_col = clamp_col(s.player_col + (action - kAvoidStay));
  }
  bool hit = false;
  for (int i = 0; i < 2; ++i) {
    ++s.object_row[i];
    if (s.object_row[i] == kBottom) {
      if (s.object_col[i] == s.player_col) hit = true;
      s.object_row[i] = 0;
      s.object_col[i] = static_cast<int>(rng_.uniform_int(kW));
    }
  }
  if (hit) {
    r.reward = reward + kAvoidHit;
    r.terminal = true;
  } else {
    r.reward = reward + kAvoidSurvive;
  }
  return r;
}

StepResult GameState::step_navigate(int action) {
  auto& s = std::get<NavigateState>(detail_);
  StepResult r;
  auto [reward, done] = navigate_transition(s, action);
  r.reward = reward;
  r.terminal = done;
  return r;
}

std::string GameState::serialize() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(id_));
  w.str(rng_.serialize());
  w.u32(static_cast<std::uint32_t>(step_count_));
  w.u32(terminal_ ? 1 : 0);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CatchState>) {
          w.u32(static_cast<std::uint32_t>(s.ball_row));
          w.u32(static_cast<std::uint32_t>(s.ball_col));
          w.u32(static_cast<std::uint32_t>(s.paddle_col));
        } else if constexpr (std::is_same_v<T, AvoidState>) {
          for (int i = 0; i < 2; ++i) {
            w.u32(static_cast<std::uint32_t>(s.object_row[i]));
            w.u32(static_cast<std::uint32_t>(s.object_col[i]));
          }
          w.u32(static_cast<std::uint32_t>(s.player_col));
        } else {
          w.u32(static_cast<std::uint32_t>(s.row));
          w.u32(static_cast<std::uint32_t>(s.col));
          w.u32(s.dug_mask);
        }
      },
      detail_);
  return w.bytes();
}

GameState GameState::deserialize(const std::string& bytes) {
  ByteReader r(bytes);
  const auto id = static_cast<GameId>(r.u32());
  (void)game_name(id);
  GameState g(id, 0);
  g.rng_ = Rng::deserialize(r.str());
  g.step_count_ = static_cast<int>(r.u32());
  g.terminal_ = r.u32() != 0;
  auto i32 = [&] { return static_cast<int>(r.u32()); };
  switch (id) {
    case GameId::kCatch: {
      CatchState s;
      s.ball_row = i32();
      s.ball_col = i32();
      s.paddle_col = i32();
      g.detail_ = s;
      break;
    }
    case GameId::kAvoid: {
      AvoidState s;
      for (int i = 0; i < 2; ++i) {
        s.object_row[i] = i32();
        s.object_col[i] = i32();
      }
      s.player_col = i32();
      g.detail_ = s;
      break;
    }
    case GameId::kNavigate: {
      NavigateState s;
      s.row = i32();
      s.col = i32();
      s.dug_mask = r.u32();
      g.detail_ = s;
      break;
    }
  }
  if (!r.at_end()) throw std::runtime_error("GameState::deserialize: trailing bytes");
  return g;
}

// --- null-op starts -------------------------------------------------------

NullOpStart reset_with_nullops(GameState& state, Rng& rng, int max_nullops) {
  if (max_nullops < 0) throw std::invalid_argument("reset_with_nullops: max_nullops < 0");
  NullOpStart out;
  out.stack = ObservationStack(state.reset());
  out.sampled = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(max_nullops) + 1));
  const int noop = noop_action(state.id());
  for (int i = 0; i < out.sampled; ++i) {
    GameState probe = state;
    if (probe.step(noop).terminal) break;
    state = std::move(probe);
    out.stack.push(state.observe());
    ++out.applied;
  }
  return out;
}

// --- scripted policies ----------------------------------------------------

int navigate_distance(const NavigateState& s) {
  const auto& table = navigate_distance_table();
  return table[static_cast<std::size_t>(s.dug_mask) * kFramePixels + s.row * kW + s.col];
}

namespace {

int scripted_catch(const CatchState& s) {
  if (s.paddle_col < s.ball_col) return kCatchRight;
  if (s.paddle_col > s.ball_col) return kCatchLeft;
  return kCatchStay;
}

int scripted_avoid(const AvoidState& s) {
  for (int i = 0; i < 2; ++i) {
    if (s.object_col[i] == s.player_col) return kAvoidFire;
  }
  // Moving into a column whose object is one row above the floor gets hit.
  auto safe_column = [&](int col) {
    for (int i = 0; i < 2; ++i) {
      if (s.object_col[i] == col && s.object_row[i] + 1 >= kBottom) return false;
    }
    return true;
  };
  int target = -1;
  int best_gap = kW + 1;
  for (int i = 0; i < 2; ++i) {
    const int gap = std::abs(s.object_col[i] - s.player_col);
    // Arrive while the object is still above the last shootable row.
    if (s.object_row[i] + gap > kBottom - 1) continue;
    if (gap < best_gap || (gap == best_gap && s.object_row[i] > s.object_row[target])) {
      best_gap = gap;
      target = i;
    }
  }
  if (target < 0) return kAvoidStay;
  const int dir = s.object_col[target] > s.player_col ? 1 : -1;
  if (!safe_column(s.player_col + dir)) return kAvoidStay;
  return dir > 0 ? kAvoidRight : kAvoidLeft;
}

int scripted_navigate(const NavigateState& s) {
  int best_action = kNoop;
  int best = std::numeric_limits<int>::max();
  for (int a = 0; a < 6; ++a) {
    NavigateState next = s;
    auto [reward, done] = navigate_transition(next, a);
    if (done) {
      if (reward > 0) return a;
      continue;
    }
    const int d = navigate_distance(next);
    if (d >= 0 && d < best) {
      best = d;
      best_action = a;
    }
  }
  return best_action;
}

}  // namespace

int scripted_action(const GameState& state) {
  return std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CatchState>) {
          return scripted_catch(s);
        } else if constexpr (std::is_same_v<T, AvoidState>) {
          return scripted_avoid(s);
        } else {
          return scripted_navigate(s);
        }
      },
      state.detail());
}

}  // namespace pd::env
