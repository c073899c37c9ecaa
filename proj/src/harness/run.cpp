#include "pd/harness/run.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <type_traits>

#include "json.hpp"
#include "pd/eval/eval.hpp"
#include "pd/multitask/multitask.hpp"
#include "pd/nn/checkpoint.hpp"

namespace pd::harness {

namespace {

namespace fs = std::filesystem;

std::string game_str(env::GameId g) { return std::string(env::game_name(g)); }

struct Teacher {
  nn::NetworkSpec spec;
  nn::ParameterStore params;
  double score = 0.0;  // on the start pool
};

class Context {
 public:
  Context(const ExperimentConfig& config, fs::path out, const RunOptions& options)
      : config_(config), out_(std::move(out)), options_(options) {}

  const ExperimentConfig& config() const { return config_; }

  void log(const std::string& line) const {
    if (options_.log) *options_.log << line << std::endl;
  }
  void print(const std::string& line) const {
    if (options_.out) *options_.out << line << std::endl;
  }

  void write_csv(const std::string& rel, const CsvTable& table) {
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    table.write(p);
    artifacts_.push_back(rel);
  }

  void write_bytes(const std::string& rel, const std::string& bytes) {
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    nn::write_file(p, bytes);
    artifacts_.push_back(rel);
  }

  const eval::StartStatePool& pool(env::GameId g) {
    auto it = pools_.find(g);
    if (it == pools_.end()) {
      Rng rng(derive_seed(config_.seed, "pool/" + game_str(g)));
      it = pools_.emplace(g, eval::build_start_pool(g, eval::scripted_policy(g), config_.pool_size, rng))
               .first;
    }
    return it->second;
  }

  double pool_score(const eval::Policy& policy) {
    return eval::evaluate(policy, pool(policy.game), config_.eval_epsilon,
                          derive_seed(config_.seed, "pool_eval"), options_.threads)
        .mean;
  }

  double pool_score(env::GameId g, const nn::NetworkSpec& spec, const nn::ParameterStore& params) {
    return pool_score(eval::network_policy(g, spec, params));
  }

  // Loads <teachers>/<game>.ckpt when a teacher directory is configured,
  // else trains the teacher and saves it with its curve.
  const Teacher& teacher(env::GameId g) {
    auto it = teachers_.find(g);
    if (it != teachers_.end()) return it->second;
    Teacher t;
    if (!config_.teachers.empty()) {
      const fs::path p = fs::path(config_.teachers) / (game_str(g) + ".ckpt");
      if (!fs::exists(p)) {
        throw ConfigError("teachers", 0, "missing teacher checkpoint " + p.string());
      }
      nn::load_checkpoint(p, t.spec, t.params);
      if (t.spec.output_units != env::action_count(g)) {
        throw ConfigError("teachers", 0, "checkpoint " + p.string() + " does not fit " + game_str(g));
      }
      log("loaded teacher " + p.string());
    } else {
      const dqn::TrainDqnConfig tc = config_.teacher_for(g);
      log("training teacher for " + game_str(g) + " (" + std::to_string(tc.total_steps) + " steps)");
      const dqn::TrainDqnResult r = timed("train_teacher", g, [&] { return dqn::train_dqn(g, tc); });
      t.spec = r.agent.spec();
      t.params = r.agent.params();
      write_csv("curves/teacher_" + game_str(g) + ".csv", dqn::curve_table(r.curve));
      write_bytes("teachers/" + game_str(g) + ".ckpt", nn::encode_checkpoint(t.spec, t.params));
    }
    t.score = pool_score(g, t.spec, t.params);
    log("teacher " + game_str(g) + " pool score " + format_fixed(t.score, 3));
    return teachers_.emplace(g, std::move(t)).first->second;
  }

  // Wall time of one stage, kept out of the CSVs so they stay reproducible.
  template <class F>
  std::invoke_result_t<F> timed(const std::string& stage, env::GameId g, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    auto result = f();
    timings_.push_back({stage, game_str(g),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    return result;
  }
  void add_timing(const std::string& stage, const std::string& task, double seconds) {
    timings_.push_back({stage, task, seconds});
  }
  const std::vector<StageTiming>& timings() const { return timings_; }

  int threads() const { return options_.threads; }
  std::vector<std::string> take_artifacts() { return std::move(artifacts_); }

 private:
  const ExperimentConfig& config_;
  fs::path out_;
  RunOptions options_;
  std::map<env::GameId, eval::StartStatePool> pools_;
  std::map<env::GameId, Teacher> teachers_;
  std::vector<std::string> artifacts_;
  std::vector<StageTiming> timings_;
};

eval::TaskResult task_result(env::GameId g, double score, double teacher_score) {
  return {game_str(g), score, teacher_score, eval::relative_score(score, teacher_score)};
}

void append(CsvTable& into, const CsvTable& from) {
  for (const auto& row : from.data()) into.add_row(row);
}

std::string pct_text(const std::optional<double>& v) {
  return v ? format_fixed(*v, 1) + "%" : std::string("n/a");
}

void train_teacher(Context& ctx) {
  CsvTable t({"task_id", "teacher_score", "scripted_score", "random_score", "pct_of_scripted"});
  for (env::GameId g : ctx.config().games) {
    const Teacher& teacher = ctx.teacher(g);
    const eval::Policy scripted = eval::scripted_policy(g);
    const double scripted_score = ctx.pool_score(scripted);
    const double random_score = eval::evaluate(scripted, ctx.pool(g), 1.0,
                                               derive_seed(ctx.config().seed, "pool_eval"),
                                               ctx.threads())
                                    .mean;
    const auto pct = eval::relative_score(teacher.score, scripted_score);
    t.add_row({game_str(g), format_double(teacher.score), format_double(scripted_score),
               format_double(random_score), pct ? format_double(*pct) : ""});
    ctx.print(game_str(g) + ": teacher " + format_fixed(teacher.score, 3) + ", scripted " +
              format_fixed(scripted_score, 3) + " (" + pct_text(pct) + ")");
  }
  ctx.write_csv("reports/teacher_sanity.csv", t);
}

void loss_compare(Context& ctx) {
  CsvTable all({"experiment_id", "task_id", "score", "teacher_score", "relative_pct"});
  for (distill::LossKind loss : {distill::LossKind::kMse, distill::LossKind::kNll, distill::LossKind::kKl}) {
    eval::EvaluationReport report;
    report.experiment_id = "dist-" + std::string(distill::loss_name(loss));
    report.epsilon = ctx.config().eval_epsilon;
    report.episodes_per_evaluation = ctx.config().pool_size;
    for (env::GameId g : ctx.config().games) {
      const Teacher& teacher = ctx.teacher(g);
      distill::DistillConfig dc = ctx.config().distill_for(g);
      dc.loss = loss;
      ctx.log("distilling " + game_str(g) + " with " + std::string(distill::loss_name(loss)));
      const auto r = ctx.timed("distill_" + std::string(distill::loss_name(loss)), g, [&] {
        return distill::train_student(g, teacher.spec, teacher.params, teacher.spec, dc);
      });
      ctx.write_csv("curves/distill_" + std::string(distill::loss_name(loss)) + "_" + game_str(g) + ".csv",
                    distill::distill_curve_table(r.curve));
      report.tasks.push_back(
          task_result(g, ctx.pool_score(g, r.student.spec, r.student.params), teacher.score));
    }
    append(all, report.to_csv());
    ctx.print(report.experiment_id + " geometric mean " + pct_text(report.aggregate()));
  }
  ctx.write_csv("reports/loss_compare.csv", all);
}

void compress(Context& ctx) {
  CsvTable all({"experiment_id", "task_id", "score", "teacher_score", "relative_pct"});
  for (env::GameId g : ctx.config().games) {
    const Teacher& teacher = ctx.teacher(g);
    std::vector<nn::NetworkSpec> students;
    for (const auto& h : ctx.config().compress_students) {
      nn::NetworkSpec s = nn::with_hidden_layers(teacher.spec, h);
      students.push_back(s);
    }
    ctx.log("compressing " + game_str(g) + " into " + std::to_string(students.size()) + " students");
    distill::DistillConfig dc = ctx.config().distill_for(g);
    dc.loss = distill::LossKind::kKl;
    const auto rows = ctx.timed("compress", g, [&] {
      return distill::compression_study(g, teacher.spec, teacher.params, students, dc, ctx.pool(g),
                                        teacher.score, ctx.config().eval_epsilon);
    });
    ctx.write_csv("reports/compress_" + game_str(g) + ".csv", distill::compression_table(rows));
    for (const auto& r : rows) {
      all.add_row({r.spec, game_str(g), format_double(r.score), format_double(r.teacher_score),
                   r.relative_pct ? format_double(*r.relative_pct) : ""});
      ctx.print(game_str(g) + " " + r.spec + ": " + format_fixed(100.0 * r.parameter_ratio, 1) +
                "% of teacher parameters, " + pct_text(r.relative_pct));
    }
  }
  ctx.write_csv("reports/compress.csv", all);
}

multitask::MultiTaskNetwork fresh_multitask(const ExperimentConfig& c) {
  return multitask::MultiTaskNetwork::create(multitask::default_trunk_spec(c.trunk_width_scale),
                                             c.games, c.head_hidden, derive_seed(c.seed, "multi_init"));
}

void multitask_report(Context& ctx, const std::string& id, const multitask::MultiTaskNetwork& net) {
  eval::EvaluationReport report;
  report.experiment_id = id;
  report.epsilon = ctx.config().eval_epsilon;
  report.episodes_per_evaluation = ctx.config().pool_size;
  for (std::size_t t = 0; t < net.task_count(); ++t) {
    const env::GameId g = net.head(t).game;
    report.tasks.push_back(task_result(
        g, ctx.pool_score(g, net.task_spec(t), net.task_params(t)), ctx.teacher(g).score));
  }
  ctx.write_csv("reports/" + id + ".csv", report.to_csv());
  ctx.print(id + " geometric mean " + pct_text(report.aggregate()));
}

void multi_distill(Context& ctx) {
  const ExperimentConfig& c = ctx.config();
  std::vector<multitask::TeacherRef> teachers;
  for (env::GameId g : c.games) {
    const Teacher& t = ctx.teacher(g);
    teachers.push_back({g, t.spec, t.params});
  }
  multitask::MultiDistillConfig mc = c.multi_distill;
  mc.seed = derive_seed(c.seed, "multi_distill");
  ctx.log("multi-task distillation over " + std::to_string(c.games.size()) + " games");
  const auto start = std::chrono::steady_clock::now();
  const auto r = multitask::multitask_distill(teachers, fresh_multitask(c), mc);
  ctx.add_timing("multi_distill", "all",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  ctx.write_csv("curves/multi_distill.csv", multitask::multi_curve_table(r.curve));
  ctx.write_bytes("checkpoints/multi_distill.ckpt", multitask::encode_multitask(r.net));
  multitask_report(ctx, "multi-dist-" + std::string(distill::loss_name(mc.loss)), r.net);
}

void multi_dqn(Context& ctx) {
  const ExperimentConfig& c = ctx.config();
  multitask::MultiDqnConfig mc = c.multi_dqn;
  mc.seed = derive_seed(c.seed, "multi_dqn");
  ctx.log("multi-task DQN over " + std::to_string(c.games.size()) + " games");
  const auto start = std::chrono::steady_clock::now();
  const auto r = multitask::multitask_dqn(fresh_multitask(c), mc);
  ctx.add_timing("multi_dqn", "all",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  ctx.write_csv("curves/multi_dqn.csv", multitask::multi_curve_table(r.curve));
  ctx.write_bytes("checkpoints/multi_dqn.ckpt", multitask::encode_multitask(r.net));
  multitask_report(ctx, "multi-dqn", r.net);
}

void online_run(Context& ctx) {
  const ExperimentConfig& c = ctx.config();
  const env::GameId g = c.online_game;
  for (std::uint64_t s : c.online_seeds) {
    online::OnlineConfig oc = c.online;
    oc.dqn = c.online_dqn_for(s);
    oc.seed = derive_seed(s, "online_student");
    if (!oc.student_spec.conv_layers.empty() || !oc.student_spec.dense_layers.empty()) {
      oc.student_spec.output_units = env::action_count(g);
    }
    ctx.log("online distillation on " + game_str(g) + ", seed " + std::to_string(s));
    const auto r = ctx.timed("online_seed" + std::to_string(s), g, [&] { return online::online_distill(g, oc); });
    ctx.write_csv("curves/online_" + game_str(g) + "_seed" + std::to_string(s) + ".csv",
                  online::online_table(r.rows));
    ctx.print("seed " + std::to_string(s) + ": final dqn " + format_fixed(r.rows.back().dqn_eval, 3) +
              ", best " + format_fixed(r.rows.back().best_so_far, 3) + ", student " +
              format_fixed(r.rows.back().student_eval, 3));
  }
}

void eval_only(Context& ctx) {
  const ExperimentConfig& c = ctx.config();
  if (c.teachers.empty()) {
    throw ConfigError("teachers", 0, "eval-only needs [experiment] teachers = <checkpoint dir>");
  }
  eval::EvaluationReport report;
  report.experiment_id = "teacher-vs-scripted";
  report.epsilon = c.eval_epsilon;
  report.episodes_per_evaluation = c.pool_size;
  for (env::GameId g : c.games) {
    const Teacher& t = ctx.teacher(g);
    report.tasks.push_back(task_result(g, t.score, ctx.pool_score(eval::scripted_policy(g))));
    std::vector<eval::ActivationSample> samples;
    const auto& pool = ctx.pool(g);
    for (std::size_t i = 0; i < pool.entries.size() && i < 20; ++i) {
      samples.push_back({game_str(g), pool.entries[i].stack});
    }
    for (auto [sel, name] : {std::pair{eval::LayerSelector::kFirstConv, "first_conv"},
                             std::pair{eval::LayerSelector::kLastDense, "last_dense"}}) {
      if (sel == eval::LayerSelector::kFirstConv && t.spec.conv_layers.empty()) continue;
      ctx.write_csv("activations/" + game_str(g) + "_" + name + ".csv",
                    eval::export_activations(t.spec, t.params, samples, sel));
    }
  }
  ctx.write_csv("reports/eval_report.csv", report.to_csv());
  for (const auto& task : report.tasks) {
    ctx.print(task.task_id + ": " + format_fixed(task.score, 3) + " (" + pct_text(task.relative_pct) +
              " of scripted)");
  }
}

void param_count(Context& ctx) {
  const ExperimentConfig& c = ctx.config();
  CsvTable t({"network", "input", "layers", "outputs", "parameters"});
  auto add = [&](const std::string& name, const nn::NetworkSpec& s) {
    const std::size_t n = nn::count_parameters(s);
    t.add_row({name,
               std::to_string(s.input_channels) + "x" + std::to_string(s.input_height) + "x" +
                   std::to_string(s.input_width),
               nn::format_hidden_layers(nn::hidden_layers_of(s)), std::to_string(s.output_units),
               std::to_string(n)});
    return n;
  };
  for (const auto& ns : nn::atari_reference_specs()) {
    ctx.print(ns.name + " " + std::to_string(add("atari-" + ns.name, ns.spec)));
  }
  for (const auto& [name, shape] : nn::atari_multitask_shapes()) {
    const std::size_t n = shape.parameter_count();
    int actions = 0;
    for (int a : shape.action_counts) actions += a;
    t.add_row({"atari-" + name, "4x84x84",
               nn::format_hidden_layers(nn::hidden_layers_of(shape.trunk)) + " fc" +
                   std::to_string(shape.trunk.output_units) + " | " +
                   std::to_string(shape.action_counts.size()) + " x fc" +
                   std::to_string(shape.head_hidden),
               std::to_string(actions), std::to_string(n)});
    ctx.print(name + " " + std::to_string(n));
  }
  for (env::GameId g : c.games) {
    nn::NetworkSpec ts = c.teacher_for(g).spec;
    if (ts.conv_layers.empty() && ts.dense_layers.empty()) {
      ts = dqn::default_teacher_spec(env::action_count(g));
    }
    add("teacher-" + game_str(g), ts);
    for (const auto& h : c.compress_students) {
      add("student-" + game_str(g) + " " + nn::format_hidden_layers(h), nn::with_hidden_layers(ts, h));
    }
  }
  const auto net = fresh_multitask(c);
  add("multitask-trunk", net.trunk_spec());
  for (std::size_t i = 0; i < net.task_count(); ++i) {
    add("multitask-head-" + game_str(net.head(i).game), net.head(i).spec);
  }
  ctx.print("multitask shared fraction " +
            format_fixed(100.0 * static_cast<double>(net.shared_parameter_count()) /
                             static_cast<double>(net.parameter_count()),
                         1) +
            "%");
  ctx.write_csv("reports/param_counts.csv", t);
}

}  // namespace

std::string run_id(Preset preset, const ExperimentConfig& config) {
  // FNV-1a, 64-bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::string text = std::string(preset_name(preset)) + "\n" + serialize_config(config);
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

int threads_from_env() {
  const char* v = std::getenv("PD_THREADS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end != v && *end == '\0' && n > 0 && n <= 1024) ? static_cast<int>(n) : 1;
}

RunSummary run_experiment(Preset preset, const ExperimentConfig& config, const fs::path& out_dir,
                          const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  Context ctx(config, out_dir, options);
  ctx.log(std::string(preset_name(preset)) + " -> " + out_dir.string());
  switch (preset) {
    case Preset::kTrainTeacher: train_teacher(ctx); break;
    case Preset::kLossCompare: loss_compare(ctx); break;
    case Preset::kCompress: compress(ctx); break;
    case Preset::kMultiDistill: multi_distill(ctx); break;
    case Preset::kMultiDqn: multi_dqn(ctx); break;
    case Preset::kOnline: online_run(ctx); break;
    case Preset::kEvalOnly: eval_only(ctx); break;
    case Preset::kParamCount: param_count(ctx); break;
  }
  RunSummary summary;
  summary.run_id = run_id(preset, config);
  summary.artifacts = ctx.take_artifacts();
  summary.timings = ctx.timings();
  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::ordered_json manifest;
  manifest["run_id"] = summary.run_id;
  manifest["preset"] = std::string(preset_name(preset));
  manifest["seed"] = config.seed;
  manifest["threads"] = options.threads;
  manifest["wall_time_seconds"] = summary.wall_seconds;
  manifest["artifacts"] = summary.artifacts;
  for (const auto& t : ctx.timings()) {
    manifest["timings"].push_back({{"stage", t.stage}, {"task", t.task}, {"seconds", t.seconds}});
  }
  manifest["config"] = serialize_config(config);
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << "\n";
  return summary;
}

}  // namespace pd::harness
