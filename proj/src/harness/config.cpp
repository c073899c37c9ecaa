#include "pd/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pd/csv.hpp"

namespace pd::harness {

namespace {

constexpr Preset kPresets[] = {Preset::kTrainTeacher, Preset::kLossCompare, Preset::kCompress,
                               Preset::kMultiDistill, Preset::kMultiDqn,    Preset::kOnline,
                               Preset::kEvalOnly,     Preset::kParamCount};

// A value that failed to parse; the caller adds key and line.
struct BadValue {
  std::string message;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw BadValue{std::string("expected ") + what + ", got '" + s + "'"};
  }
  return v;
}

// Value codecs: text <-> typed value, with the text form canonical.
struct IntCodec {
  using T = int;
  static T parse(const std::string& s) { return parse_number<int>(s, "an integer"); }
  static std::string format(T v) { return std::to_string(v); }
};
struct SizeCodec {
  using T = std::size_t;
  static T parse(const std::string& s) { return parse_number<std::size_t>(s, "a non-negative integer"); }
  static std::string format(T v) { return std::to_string(v); }
};
struct U64Codec {
  using T = std::uint64_t;
  static T parse(const std::string& s) { return parse_number<std::uint64_t>(s, "an unsigned integer"); }
  static std::string format(T v) { return std::to_string(v); }
};
struct DoubleCodec {
  using T = double;
  static T parse(const std::string& s) { return parse_number<double>(s, "a number"); }
  static std::string format(T v) { return format_double(v); }
};
struct StringCodec {
  using T = std::string;
  static T parse(const std::string& s) { return s; }
  static std::string format(const T& v) { return v; }
};
struct LossCodec {
  using T = distill::LossKind;
  static T parse(const std::string& s) {
    try {
      return distill::parse_loss_kind(s);
    } catch (const std::invalid_argument&) {
      throw BadValue{"expected one of mse, nll, kl, got '" + s + "'"};
    }
  }
  static std::string format(T v) { return std::string(distill::loss_name(v)); }
};
struct GameCodec {
  using T = env::GameId;
  static T parse(const std::string& s) {
    try {
      return env::parse_game_id(s);
    } catch (const std::exception&) {
      throw BadValue{"unknown game '" + s + "'"};
    }
  }
  static std::string format(T v) { return std::string(env::game_name(v)); }
};
struct LayersCodec {
  using T = nn::HiddenLayers;
  static T parse(const std::string& s) {
    try {
      return nn::parse_hidden_layers(s);
    } catch (const std::invalid_argument& e) {
      throw BadValue{e.what()};
    }
  }
  static std::string format(const T& v) { return nn::format_hidden_layers(v); }
};
template <class Codec, char Sep>
struct ListCodec {
  using T = std::vector<typename Codec::T>;
  static T parse(const std::string& s) {
    T out;
    for (const auto& item : split(s, Sep)) out.push_back(Codec::parse(item));
    return out;
  }
  static std::string format(const T& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i > 0) out += Sep == ';' ? "; " : ", ";
      out += Codec::format(v[i]);
    }
    return out;
  }
};

// Hidden layers on the 4x12x12 input; no layers gives the empty spec, which
// the trainers read as "use the default".
nn::NetworkSpec spec_from_layers(const nn::HiddenLayers& h) {
  if (h.conv.empty() && h.dense.empty()) return {};
  nn::NetworkSpec s = nn::with_hidden_layers({}, h);
  s.input_channels = env::kStackDepth;
  s.input_height = env::kFrameHeight;
  s.input_width = env::kFrameWidth;
  return s;
}

template <class Target>
struct Field {
  std::string key;
  std::function<void(Target&, const std::string&)> set;
  std::function<std::string(const Target&)> get;
};

template <class Codec, class Target, class Access>
Field<Target> field(std::string key, Access access) {
  return {std::move(key),
          [access](Target& t, const std::string& s) { access(t) = Codec::parse(s); },
          [access](const Target& t) {
            Target copy = t;
            return Codec::format(access(copy));
          }};
}

#define PD_FIELD(codec, key, expr) \
  field<codec, Target>(key, [](Target& c) -> codec::T& { return expr; })

std::vector<Field<dqn::TrainDqnConfig>> teacher_fields() {
  using Target = dqn::TrainDqnConfig;
  return {
      {"layers",
       [](Target& c, const std::string& v) { c.spec = spec_from_layers(LayersCodec::parse(v)); },
       [](const Target& c) { return LayersCodec::format(nn::hidden_layers_of(c.spec)); }},
      PD_FIELD(IntCodec, "total_steps", c.total_steps),
      PD_FIELD(IntCodec, "learning_starts", c.learning_starts),
      PD_FIELD(IntCodec, "train_every", c.train_every),
      PD_FIELD(IntCodec, "batch_size", c.batch_size),
      PD_FIELD(IntCodec, "sync_interval", c.sync_interval),
      PD_FIELD(DoubleCodec, "epsilon_start", c.epsilon_start),
      PD_FIELD(DoubleCodec, "epsilon_end", c.epsilon_end),
      PD_FIELD(DoubleCodec, "epsilon_anneal_fraction", c.epsilon_anneal_fraction),
      PD_FIELD(SizeCodec, "memory_capacity", c.memory_capacity),
      PD_FIELD(DoubleCodec, "gamma", c.gamma),
      PD_FIELD(DoubleCodec, "learning_rate", c.optimizer.learning_rate),
      PD_FIELD(DoubleCodec, "rmsprop_decay", c.optimizer.decay),
      PD_FIELD(DoubleCodec, "rmsprop_epsilon", c.optimizer.epsilon),
      PD_FIELD(IntCodec, "eval_every", c.eval_every),
      PD_FIELD(IntCodec, "eval_episodes", c.eval_episodes),
      PD_FIELD(DoubleCodec, "eval_epsilon", c.eval_epsilon),
      PD_FIELD(IntCodec, "eval_nullops", c.eval_nullops),
  };
}

std::vector<Field<ExperimentConfig>> experiment_fields() {
  using Target = ExperimentConfig;
  using GameList = ListCodec<GameCodec, ','>;
  return {
      PD_FIELD(GameList, "games", c.games),
      PD_FIELD(U64Codec, "seed", c.seed),
      PD_FIELD(IntCodec, "pool_size", c.pool_size),
      PD_FIELD(DoubleCodec, "eval_epsilon", c.eval_epsilon),
      PD_FIELD(StringCodec, "teachers", c.teachers),
  };
}

std::vector<Field<ExperimentConfig>> distill_fields() {
  using Target = ExperimentConfig;
  return {
      PD_FIELD(LossCodec, "loss", c.distill.loss),
      PD_FIELD(DoubleCodec, "tau", c.distill.tau),
      PD_FIELD(IntCodec, "refresh_steps", c.distill.refresh_steps),
      PD_FIELD(IntCodec, "updates_per_refresh", c.distill.updates_per_refresh),
      PD_FIELD(IntCodec, "batch_size", c.distill.batch_size),
      PD_FIELD(DoubleCodec, "learning_rate", c.distill.optimizer.learning_rate),
      PD_FIELD(DoubleCodec, "rmsprop_decay", c.distill.optimizer.decay),
      PD_FIELD(DoubleCodec, "rmsprop_epsilon", c.distill.optimizer.epsilon),
      PD_FIELD(DoubleCodec, "budget_fraction", c.distill_budget_fraction),
      PD_FIELD(SizeCodec, "buffer_capacity", c.distill.buffer_capacity),
      PD_FIELD(DoubleCodec, "teacher_epsilon", c.distill.teacher_epsilon),
      PD_FIELD(IntCodec, "max_nullops", c.distill.max_nullops),
      PD_FIELD(IntCodec, "eval_episodes", c.distill.eval_episodes),
      PD_FIELD(DoubleCodec, "eval_epsilon", c.distill.eval_epsilon),
      PD_FIELD(IntCodec, "holdout_samples", c.distill.holdout_samples),
  };
}

std::vector<Field<ExperimentConfig>> compress_fields() {
  using Target = ExperimentConfig;
  using Students = ListCodec<LayersCodec, ';'>;
  return {PD_FIELD(Students, "students", c.compress_students)};
}

std::vector<Field<ExperimentConfig>> multitask_fields() {
  using Target = ExperimentConfig;
  using IntList = ListCodec<IntCodec, ','>;
  return {
      PD_FIELD(IntCodec, "trunk_width_scale", c.trunk_width_scale),
      PD_FIELD(IntList, "head_hidden", c.head_hidden),
      PD_FIELD(LossCodec, "loss", c.multi_distill.loss),
      PD_FIELD(DoubleCodec, "tau", c.multi_distill.tau),
      PD_FIELD(IntCodec, "refresh_steps", c.multi_distill.refresh_steps),
      PD_FIELD(IntCodec, "updates_per_refresh", c.multi_distill.updates_per_refresh),
      PD_FIELD(IntCodec, "batch_size", c.multi_distill.batch_size),
      PD_FIELD(DoubleCodec, "learning_rate", c.multi_distill.optimizer.learning_rate),
      PD_FIELD(DoubleCodec, "rmsprop_decay", c.multi_distill.optimizer.decay),
      PD_FIELD(DoubleCodec, "rmsprop_epsilon", c.multi_distill.optimizer.epsilon),
      PD_FIELD(IntCodec, "total_budget", c.multi_distill.total_budget),
      PD_FIELD(SizeCodec, "buffer_capacity", c.multi_distill.buffer_capacity),
      PD_FIELD(DoubleCodec, "teacher_epsilon", c.multi_distill.teacher_epsilon),
      PD_FIELD(IntCodec, "max_nullops", c.multi_distill.max_nullops),
      PD_FIELD(IntCodec, "eval_episodes", c.multi_distill.eval_episodes),
      PD_FIELD(DoubleCodec, "eval_epsilon", c.multi_distill.eval_epsilon),
  };
}

std::vector<Field<ExperimentConfig>> multi_dqn_fields() {
  using Target = ExperimentConfig;
  std::vector<Field<Target>> f{
      PD_FIELD(IntCodec, "total_steps", c.multi_dqn.total_steps),
      PD_FIELD(IntCodec, "learning_starts", c.multi_dqn.learning_starts),
      PD_FIELD(IntCodec, "train_every", c.multi_dqn.train_every),
      PD_FIELD(IntCodec, "batch_size", c.multi_dqn.batch_size),
      PD_FIELD(IntCodec, "sync_interval", c.multi_dqn.sync_interval),
      PD_FIELD(DoubleCodec, "epsilon_start", c.multi_dqn.epsilon_start),
      PD_FIELD(DoubleCodec, "epsilon_end", c.multi_dqn.epsilon_end),
      PD_FIELD(DoubleCodec, "epsilon_anneal_fraction", c.multi_dqn.epsilon_anneal_fraction),
      PD_FIELD(SizeCodec, "memory_capacity", c.multi_dqn.memory_capacity),
      PD_FIELD(DoubleCodec, "gamma", c.multi_dqn.gamma),
      PD_FIELD(DoubleCodec, "learning_rate", c.multi_dqn.optimizer.learning_rate),
      PD_FIELD(DoubleCodec, "rmsprop_decay", c.multi_dqn.optimizer.decay),
      PD_FIELD(DoubleCodec, "rmsprop_epsilon", c.multi_dqn.optimizer.epsilon),
      PD_FIELD(IntCodec, "eval_every", c.multi_dqn.eval_every),
      PD_FIELD(IntCodec, "eval_episodes", c.multi_dqn.eval_episodes),
      PD_FIELD(DoubleCodec, "eval_epsilon", c.multi_dqn.eval_epsilon),
  };
  for (env::GameId g : env::all_games()) {
    f.push_back({"gamma." + std::string(env::game_name(g)),
                 [g](Target& c, const std::string& s) {
                   // Empty means "use gamma".
                   if (s.empty()) {
                     c.multi_dqn.gamma_by_game.erase(g);
                   } else {
                     c.multi_dqn.gamma_by_game[g] = DoubleCodec::parse(s);
                   }
                 },
                 [g](const Target& c) {
                   const auto it = c.multi_dqn.gamma_by_game.find(g);
                   return it == c.multi_dqn.gamma_by_game.end() ? std::string()
                                                                : DoubleCodec::format(it->second);
                 }});
  }
  return f;
}

std::vector<Field<ExperimentConfig>> online_fields() {
  using Target = ExperimentConfig;
  using SeedList = ListCodec<U64Codec, ','>;
  return {
      PD_FIELD(GameCodec, "game", c.online_game),
      PD_FIELD(SeedList, "seeds", c.online_seeds),
      PD_FIELD(IntCodec, "dqn_total_steps", c.online_dqn_total_steps),
      PD_FIELD(IntCodec, "dqn_eval_episodes", c.online_dqn_eval_episodes),
      {"student_layers",
       [](Target& c, const std::string& v) {
         c.online.student_spec = spec_from_layers(LayersCodec::parse(v));
       },
       [](const Target& c) { return LayersCodec::format(nn::hidden_layers_of(c.online.student_spec)); }},
      PD_FIELD(LossCodec, "loss", c.online.loss),
      PD_FIELD(DoubleCodec, "tau", c.online.tau),
      PD_FIELD(IntCodec, "teacher_steps_per_block", c.online.teacher_steps_per_block),
      PD_FIELD(IntCodec, "updates_per_block", c.online.updates_per_block),
      PD_FIELD(IntCodec, "batch_size", c.online.batch_size),
      PD_FIELD(DoubleCodec, "learning_rate", c.online.optimizer.learning_rate),
      PD_FIELD(DoubleCodec, "rmsprop_decay", c.online.optimizer.decay),
      PD_FIELD(DoubleCodec, "rmsprop_epsilon", c.online.optimizer.epsilon),
      PD_FIELD(SizeCodec, "buffer_capacity", c.online.buffer_capacity),
      PD_FIELD(DoubleCodec, "teacher_epsilon", c.online.teacher_epsilon),
      PD_FIELD(IntCodec, "max_nullops", c.online.max_nullops),
  };
}

#undef PD_FIELD

// Checks that do not fit a single module's validate().
void validate_experiment(const ExperimentConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  if (c.games.empty()) fail("games must not be empty");
  std::set<env::GameId> seen(c.games.begin(), c.games.end());
  if (seen.size() != c.games.size()) fail("games must not repeat");
  if (c.pool_size < 1) fail("pool_size must be >= 1");
  if (!(c.eval_epsilon >= 0 && c.eval_epsilon <= 1)) fail("eval_epsilon must be in [0, 1]");
  if (!(c.distill_budget_fraction > 0 && c.distill_budget_fraction <= 1)) {
    fail("budget_fraction must be in (0, 1]");
  }
  if (c.trunk_width_scale < 1) fail("trunk_width_scale must be >= 1");
  for (int h : c.head_hidden) {
    if (h < 1) fail("head_hidden entries must be >= 1");
  }
  if (c.online_seeds.empty()) fail("seeds must not be empty");
  if (c.online_dqn_total_steps < 0) fail("dqn_total_steps must be >= 0");
  if (c.online_dqn_eval_episodes < 0) fail("dqn_eval_episodes must be >= 0");
}

std::string section_for(env::GameId g) { return "teacher." + std::string(env::game_name(g)); }

}  // namespace

std::string_view preset_name(Preset p) {
  switch (p) {
    case Preset::kTrainTeacher: return "train-teacher";
    case Preset::kLossCompare: return "loss-compare";
    case Preset::kCompress: return "compress";
    case Preset::kMultiDistill: return "multi-distill";
    case Preset::kMultiDqn: return "multi-dqn";
    case Preset::kOnline: return "online";
    case Preset::kEvalOnly: return "eval-only";
    case Preset::kParamCount: return "param-count";
  }
  return "?";
}

Preset parse_preset(std::string_view name) {
  for (Preset p : kPresets) {
    if (preset_name(p) == name) return p;
  }
  throw ConfigError("preset", 0, "unknown preset '" + std::string(name) + "'");
}

std::vector<Preset> all_presets() { return {std::begin(kPresets), std::end(kPresets)}; }

ConfigError::ConfigError(std::string key, int line, const std::string& message)
    : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                         (key.empty() ? std::string() : "key '" + key + "': ") + message),
      key_(std::move(key)),
      line_(line) {}

ExperimentConfig::ExperimentConfig() {
  teacher_overrides[env::GameId::kCatch] = {{"total_steps", "15000"}};
  teacher_overrides[env::GameId::kAvoid] = {
      {"gamma", "0.9"}, {"total_steps", "160000"}, {"train_every", "2"}};
  teacher_overrides[env::GameId::kNavigate] = {{"gamma", "0.95"}, {"total_steps", "40000"}};
  compress_students = {nn::parse_hidden_layers("conv8@3/1 conv16@4/2 fc48")};
  multi_dqn.gamma_by_game = {{env::GameId::kAvoid, 0.9}, {env::GameId::kNavigate, 0.95}};
  distill.optimizer.learning_rate = 1e-3;
  multi_distill.optimizer.learning_rate = 1e-3;
  multi_distill.total_budget = 60000;
  multi_dqn.total_steps = 60000;
  online_dqn_total_steps = 25000;
  online_dqn_eval_episodes = 100;
  online.optimizer.learning_rate = 1e-3;
  online.buffer_capacity = 5000;
  online.updates_per_block = 2000;
}

dqn::TrainDqnConfig ExperimentConfig::teacher_for(env::GameId game) const {
  dqn::TrainDqnConfig c = teacher;
  const auto it = teacher_overrides.find(game);
  if (it != teacher_overrides.end()) {
    const auto fields = teacher_fields();
    for (const auto& [key, value] : it->second) {
      for (const auto& f : fields) {
        if (f.key == key) f.set(c, value);
      }
    }
  }
  if (!c.spec.conv_layers.empty() || !c.spec.dense_layers.empty()) {
    c.spec.output_units = env::action_count(game);
  }
  c.seed = derive_seed(seed, "teacher/" + std::string(env::game_name(game)));
  return c;
}

dqn::TrainDqnConfig ExperimentConfig::online_dqn_for(std::uint64_t seed) const {
  dqn::TrainDqnConfig d = teacher_for(online_game);
  if (online_dqn_total_steps > 0) d.total_steps = online_dqn_total_steps;
  if (online_dqn_eval_episodes > 0) d.eval_episodes = online_dqn_eval_episodes;
  d.seed = derive_seed(seed, "online_dqn");
  d.validate();
  return d;
}

distill::DistillConfig ExperimentConfig::distill_for(env::GameId game) const {
  distill::DistillConfig c = distill;
  c.total_budget = std::max(
      1, static_cast<int>(distill_budget_fraction * teacher_for(game).total_steps + 0.5));
  c.seed = derive_seed(seed, "distill/" + std::string(env::game_name(game)));
  return c;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  const auto teacher = teacher_fields();
  const std::map<std::string, std::vector<Field<ExperimentConfig>>> sections{
      {"experiment", experiment_fields()}, {"distill", distill_fields()},
      {"compress", compress_fields()},     {"multitask", multitask_fields()},
      {"multi_dqn", multi_dqn_fields()},   {"online", online_fields()},
  };

  std::string section;
  std::set<std::string> seen_keys;
  std::set<std::string> seen_sections;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(std::string_view(raw).substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("", line, "malformed section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      bool known = sections.count(section) > 0 || section == "teacher";
      for (env::GameId g : env::all_games()) known = known || section == section_for(g);
      if (!known) throw ConfigError(section, line, "unknown section");
      if (!seen_sections.insert(section).second) {
        throw ConfigError(section, line, "section appears twice");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("", line, "expected 'key = value'");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    const std::string value = trim(std::string_view(s).substr(eq + 1));
    if (section.empty()) throw ConfigError(key, line, "key outside any section");
    if (!seen_keys.insert(section + "/" + key).second) {
      throw ConfigError(key, line, "duplicate key in [" + section + "]");
    }

    try {
      if (section == "teacher") {
        const auto f = std::find_if(teacher.begin(), teacher.end(),
                                    [&](const auto& x) { return x.key == key; });
        if (f == teacher.end()) throw ConfigError(key, line, "unknown key in [teacher]");
        f->set(c.teacher, value);
        c.teacher.validate();
      } else if (section.starts_with("teacher.")) {
        const env::GameId g = env::parse_game_id(section.substr(8));
        const auto f = std::find_if(teacher.begin(), teacher.end(),
                                    [&](const auto& x) { return x.key == key; });
        if (f == teacher.end()) throw ConfigError(key, line, "unknown key in [" + section + "]");
        dqn::TrainDqnConfig probe = c.teacher;
        f->set(probe, value);
        probe.validate();
        c.teacher_overrides[g][key] = f->get(probe);
      } else {
        const auto& fields = sections.at(section);
        const auto f = std::find_if(fields.begin(), fields.end(),
                                    [&](const auto& x) { return x.key == key; });
        if (f == fields.end()) throw ConfigError(key, line, "unknown key in [" + section + "]");
        f->set(c, value);
        validate_experiment(c);
        c.distill.validate();
        c.multi_distill.validate();
        c.multi_dqn.validate();
        c.online.validate();
      }
    } catch (const BadValue& e) {
      throw ConfigError(key, line, e.message);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key, line, std::string("out of range: ") + e.what());
    }
  }
  // Per-game overrides must also hold against the final [teacher] values.
  for (env::GameId g : env::all_games()) {
    try {
      c.teacher_for(g).validate();
    } catch (const std::exception& e) {
      throw ConfigError(section_for(g), 0, e.what());
    }
  }
  try {
    c.online_dqn_for(1);
  } catch (const std::exception& e) {
    throw ConfigError("online", 0, e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", 0, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto write_section = [&](const std::string& name, const auto& fields, const auto& target) {
    os << "[" << name << "]\n";
    for (const auto& f : fields) os << f.key << " = " << f.get(target) << "\n";
    os << "\n";
  };
  write_section("experiment", experiment_fields(), c);
  write_section("teacher", teacher_fields(), c.teacher);
  for (const auto& [g, overrides] : c.teacher_overrides) {
    os << "[" << section_for(g) << "]\n";
    for (const auto& [k, v] : overrides) os << k << " = " << v << "\n";
    os << "\n";
  }
  write_section("distill", distill_fields(), c);
  write_section("compress", compress_fields(), c);
  write_section("multitask", multitask_fields(), c);
  write_section("multi_dqn", multi_dqn_fields(), c);
  write_section("online", online_fields(), c);
  return os.str();
}

}  // namespace pd::harness
