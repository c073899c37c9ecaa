#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "pd/harness/config.hpp"
#include "pd/harness/run.hpp"
#include "pd/rng.hpp"

namespace fs = std::filesystem;
using namespace pd;
using namespace pd::harness;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pd_harness_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ConfigError parse_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e;
  }
  FAIL("expected a ConfigError for: " << text);
  return ConfigError("", 0, "");
}

}  // namespace

TEST_CASE("empty config resolves to the documented defaults") {
  const ExperimentConfig c = parse_config("");
  CHECK(c == ExperimentConfig{});
  CHECK(c.games == env::all_games());
  CHECK(c.seed == 1);
  CHECK(c.distill.loss == distill::LossKind::kKl);
  CHECK(c.distill.tau == doctest::Approx(0.01));
  CHECK(parse_config("# only a comment\n\n   \n") == c);
}

TEST_CASE("range errors name the key and the line") {
  const ConfigError e = parse_error("[distill]\nloss = kl\ntau = -1\n");
  CHECK(e.key() == "tau");
  CHECK(e.line() == 3);
  CHECK(std::string(e.what()).find("tau") != std::string::npos);
  CHECK(std::string(e.what()).find("line 3") != std::string::npos);
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK(parse_error("[distill]\ntemperature = 0.1\n").key() == "temperature");
  CHECK(parse_error("[distill]\ntemperature = 0.1\n").line() == 2);
  CHECK(parse_error("[nonsense]\n").line() == 1);
  CHECK(parse_error("seed = 3\n").key() == "seed");
  CHECK(parse_error("[experiment]\nseed = 3\nseed = 4\n").line() == 3);
  CHECK(parse_error("[experiment]\n[experiment]\n").line() == 2);
  CHECK(parse_error("[teacher.pong]\n").line() == 1);
  CHECK(parse_error("[experiment]\nseed\n").line() == 2);
}

TEST_CASE("type mismatches are rejected") {
  CHECK(parse_error("[experiment]\nseed = many\n").key() == "seed");
  CHECK(parse_error("[teacher]\ntotal_steps = 1.5\n").key() == "total_steps");
  CHECK(parse_error("[distill]\nloss = hinge\n").key() == "loss");
  CHECK(parse_error("[experiment]\ngames = catch,pong\n").key() == "games");
  CHECK(parse_error("[teacher]\nlayers = conv16@3\n").key() == "layers");
}

TEST_CASE("values land in their fields") {
  const ExperimentConfig c = parse_config(
      "[experiment]\n"
      "games = catch, navigate\n"
      "seed = 99  # trailing comment\n"
      "[teacher]\n"
      "learning_rate = 0.001\n"
      "[teacher.catch]\n"
      "total_steps = 5000\n"
      "[distill]\n"
      "loss = mse\n"
      "budget_fraction = 0.25\n"
      "[compress]\n"
      "students = conv4@3/1 fc16; fc32\n"
      "[multi_dqn]\n"
      "gamma.avoid =\n"
      "[online]\n"
      "seeds = 5, 6, 7\n");
  CHECK(c.games == std::vector{env::GameId::kCatch, env::GameId::kNavigate});
  CHECK(c.seed == 99);
  CHECK(c.teacher.optimizer.learning_rate == 0.001);
  CHECK(c.teacher_for(env::GameId::kCatch).total_steps == 5000);
  CHECK(c.teacher_for(env::GameId::kCatch).optimizer.learning_rate == 0.001);
  CHECK(c.distill.loss == distill::LossKind::kMse);
  CHECK(c.distill_for(env::GameId::kCatch).total_budget == 1250);
  REQUIRE(c.compress_students.size() == 2);
  CHECK(c.compress_students[1].conv.empty());
  CHECK(c.compress_students[1].dense == std::vector{32});
  CHECK(c.multi_dqn.gamma_by_game.count(env::GameId::kAvoid) == 0);
  CHECK(c.online_seeds == std::vector<std::uint64_t>{5, 6, 7});
}

TEST_CASE("per-game teacher settings get distinct seeds") {
  const ExperimentConfig c;
  CHECK(c.teacher_for(env::GameId::kCatch).seed != c.teacher_for(env::GameId::kAvoid).seed);
  CHECK(c.teacher_for(env::GameId::kAvoid).gamma == 0.9);
  CHECK(c.distill_for(env::GameId::kCatch).seed != c.teacher_for(env::GameId::kCatch).seed);
}

TEST_CASE("parse(serialize(config)) == config") {
  CHECK(parse_config(serialize_config(ExperimentConfig{})) == ExperimentConfig{});
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    ExperimentConfig c;
    c.seed = rng.next_u64();
    c.pool_size = 1 + static_cast<int>(rng.uniform_int(500));
    c.eval_epsilon = rng.uniform();
    c.teacher.gamma = rng.uniform();
    c.teacher.optimizer.learning_rate = 1e-6 + rng.uniform() * 1e-2;
    c.distill.tau = 1e-3 + rng.uniform();
    c.distill.loss = static_cast<distill::LossKind>(rng.uniform_int(3));
    c.distill_budget_fraction = 0.01 + rng.uniform();
    c.head_hidden = {1 + static_cast<int>(rng.uniform_int(64))};
    c.multi_distill.tau = 1e-3 + rng.uniform();
    c.multi_dqn.gamma_by_game[env::GameId::kCatch] = rng.uniform();
    c.online_seeds = {rng.next_u64(), rng.next_u64()};
    c.teacher_overrides[env::GameId::kNavigate]["batch_size"] =
        std::to_string(1 + rng.uniform_int(64));
    if (trial % 2) c.teachers = "some dir/with spaces";
    const std::string text = serialize_config(c);
    const ExperimentConfig back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize_config(back) == text);
  }
}

TEST_CASE("presets round-trip through their names") {
  for (Preset p : all_presets()) CHECK(parse_preset(preset_name(p)) == p);
  CHECK_THROWS_AS(parse_preset("train"), ConfigError);
}

TEST_CASE("run id depends on preset and config only") {
  ExperimentConfig c;
  CHECK(run_id(Preset::kParamCount, c) == run_id(Preset::kParamCount, c));
  CHECK(run_id(Preset::kParamCount, c) != run_id(Preset::kOnline, c));
  ExperimentConfig d = c;
  d.seed = 2;
  CHECK(run_id(Preset::kParamCount, c) != run_id(Preset::kParamCount, d));
}

TEST_CASE("param-count run writes only inside its directory") {
  const fs::path root = scratch_dir("param_count");
  const fs::path out = root / "run";
  std::ostringstream printed;
  RunOptions opt;
  opt.out = &printed;
  const RunSummary s = run_experiment(Preset::kParamCount, ExperimentConfig{}, out, opt);
  CHECK(printed.str().find("teacher 1693362") != std::string::npos);
  CHECK(printed.str().find("net3 61954") != std::string::npos);

  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), out);
    CHECK(!rel.empty());
    CHECK(rel.native().rfind("..", 0) != 0);
  }
  CHECK(files == s.artifacts.size() + 1);

  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["run_id"] == s.run_id);
  CHECK(manifest["preset"] == "param-count");
  CHECK(parse_config(manifest["config"].get<std::string>()) == ExperimentConfig{});
  const std::string csv = slurp(out / "reports/param_counts.csv");
  CHECK(csv.rfind("network,input,layers,outputs,parameters\n", 0) == 0);
  CHECK(csv.find("atari-net1,4x84x84,conv16@8/4 conv32@4/2 conv32@3/1 fc256,18,427874") !=
        std::string::npos);
}

TEST_CASE("eval-only without teachers is a config error") {
  const fs::path out = scratch_dir("eval_only");
  CHECK_THROWS_AS(run_experiment(Preset::kEvalOnly, ExperimentConfig{}, out / "run"), ConfigError);
  ExperimentConfig c;
  c.teachers = (out / "missing").string();
  CHECK_THROWS_AS(run_experiment(Preset::kEvalOnly, c, out / "run"), ConfigError);
}

#ifdef PD_CLI_PATH
TEST_CASE("cli exit codes") {
  const fs::path dir = scratch_dir("cli");
  const std::string cli = std::string("\"") + PD_CLI_PATH + "\"";
  auto run = [&](const std::string& args) {
    const int status =
        std::system((cli + " " + args + " > \"" + (dir / "log.txt").string() + "\" 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  std::ofstream(dir / "bad.ini") << "[distill]\ntau = -1\n";
  std::ofstream(dir / "good.ini") << "[experiment]\nseed = 7\n";
  std::ofstream(dir / "no_teachers.ini") << "[experiment]\nteachers = " << (dir / "none").string()
                                         << "\n";

  CHECK(run("param-count --config \"" + (dir / "good.ini").string() + "\" --out \"" +
            (dir / "out").string() + "\"") == 0);
  CHECK(run("param-count --config \"" + (dir / "bad.ini").string() + "\"") == 1);
  CHECK(slurp(dir / "log.txt").find("tau") != std::string::npos);
  CHECK(run("no-such-preset") == 1);
  CHECK(run("param-count --seed x") == 1);
  CHECK(run("param-count --config \"" + (dir / "absent.ini").string() + "\"") == 1);
  CHECK(run("eval-only --config \"" + (dir / "no_teachers.ini").string() + "\" --out \"" +
            (dir / "out").string() + "\"") == 1);
  // A teachers directory holding a file that is not a checkpoint fails at runtime.
  fs::create_directories(dir / "junk");
  std::ofstream(dir / "junk" / "catch.ckpt") << "not a checkpoint";
  std::ofstream(dir / "junk.ini") << "[experiment]\ngames = catch\nteachers = "
                                  << (dir / "junk").string() << "\n";
  CHECK(run("eval-only --config \"" + (dir / "junk.ini").string() + "\" --out \"" +
            (dir / "out").string() + "\"") == 2);
}
#endif
