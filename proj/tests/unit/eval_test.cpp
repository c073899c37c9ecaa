#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pd/eval/eval.hpp"
#include "published_scores.hpp"

using namespace pd;
using namespace pd::eval;

TEST_CASE("relative_score basics") {
  CHECK(*relative_score(50.0, 100.0) == 50.0);
  CHECK(*relative_score(16.3, 16.3) == doctest::Approx(100.0).epsilon(1e-15));
  CHECK(!relative_score(3.0, 0.0).has_value());
  CHECK(!relative_score(3.0, -2.0).has_value());
  CHECK(*relative_score(-1.0, 2.0) == -50.0);
}

TEST_CASE("geometric_mean properties") {
  CHECK(geometric_mean(std::vector<double>{100, 100, 100}) == doctest::Approx(100.0));
  CHECK(geometric_mean(std::vector<double>{50, 200}) == doctest::Approx(100.0));
  CHECK(geometric_mean(std::vector<double>{42.0}) == doctest::Approx(42.0).epsilon(1e-15));
  CHECK_THROWS_AS(geometric_mean(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(geometric_mean(std::vector<double>{10, 0}), std::invalid_argument);
  CHECK_THROWS_AS(geometric_mean(std::vector<double>{10, -3}), std::invalid_argument);
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng.uniform_int(8));
    for (auto& x : v) x = 1.0 + 200.0 * rng.uniform();
    const double g = geometric_mean(v);
    CHECK(g <= *std::max_element(v.begin(), v.end()) * (1 + 1e-12));
    CHECK(g >= *std::min_element(v.begin(), v.end()) * (1 - 1e-12));
    const double arithmetic = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    CHECK(g <= arithmetic * (1 + 1e-12));
    std::vector<double> shuffled = v;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(geometric_mean(shuffled) == doctest::Approx(g).epsilon(1e-13));
  }
}

TEST_CASE("round_to_decimals") {
  CHECK(round_to_decimals(94.7029, 1) == doctest::Approx(94.7));
  CHECK(round_to_decimals(108.3198, 1) == doctest::Approx(108.3));
  CHECK(round_to_decimals(0.05, 0) == 0.0);
}

TEST_CASE("published percentages agree with their raw scores up to rounding") {
  // Raw scores are printed to one decimal, so the underlying values lie in
  // [raw - 0.05, raw + 0.05]. Every printed percentage must be attainable
  // from some pair in that box.
  for (const auto& col : testing::published_columns()) {
    for (const auto& c : col.cells) {
      const double lo = 100.0 * (c.student - 0.05) / (c.teacher + 0.05);
      const double hi = 100.0 * (c.student + 0.05) / (c.teacher - 0.05);
      CAPTURE(col.column);
      CAPTURE(c.game);
      CHECK(c.printed_pct >= lo - 0.05);
      CHECK(c.printed_pct <= hi + 0.05);
    }
  }
}

TEST_CASE("published geometric means follow from the raw scores") {
  for (const auto& col : testing::published_columns()) {
    if (col.printed_geomean == 0.0) continue;
    std::vector<double> pct;
    for (const auto& c : col.cells) pct.push_back(*relative_score(c.student, c.teacher));
    CAPTURE(col.column);
    CHECK(std::abs(geometric_mean(pct) - col.printed_geomean) <= 0.05);
  }
}

TEST_CASE("EpisodeStats uses the sample standard deviation") {
  const auto s = EpisodeStats::from_scores({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.ci95 == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0));
  const auto one = EpisodeStats::from_scores({7.0});
  CHECK(one.mean == 7.0);
  CHECK(one.stddev == 0.0);
}

TEST_CASE("start pool states come from the first 20% of reference episodes") {
  for (env::GameId game : env::all_games()) {
    Rng rng(3);
    const StartStatePool pool = build_start_pool(game, scripted_policy(game), 40, rng);
    REQUIRE(pool.entries.size() == 40);
    for (const auto& e : pool.entries) {
      CHECK(e.source_step >= 0);
      CHECK(e.source_step <= static_cast<int>(std::floor(kStartWindow * e.source_length)));
      CHECK(!e.state.terminal());
      CHECK(e.state.id() == game);
    }
    const StartStatePool back = decode_start_pool(encode_start_pool(pool));
    REQUIRE(back.entries.size() == pool.entries.size());
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
      CHECK(back.entries[i].state == pool.entries[i].state);
      CHECK(back.entries[i].stack == pool.entries[i].stack);
    }
  }
}

TEST_CASE("evaluate: scripted catch from pool starts always scores +1 at epsilon 0") {
  Rng rng(4);
  const auto policy = scripted_policy(env::GameId::kCatch);
  const StartStatePool pool = build_start_pool(env::GameId::kCatch, policy, 30, rng);
  const EpisodeStats s = evaluate(policy, pool, 0.0, 1);
  CHECK(s.mean == 1.0);
  CHECK(s.stddev == 0.0);
}

TEST_CASE("evaluate is independent of pool order and thread count") {
  Rng rng(5);
  const auto policy = scripted_policy(env::GameId::kAvoid);
  StartStatePool pool = build_start_pool(env::GameId::kAvoid, policy, 24, rng);
  const EpisodeStats a = evaluate(policy, pool, 0.3, 9);
  const EpisodeStats threaded = evaluate(policy, pool, 0.3, 9, 3);
  CHECK(a.scores == threaded.scores);
  std::reverse(pool.entries.begin(), pool.entries.end());
  const EpisodeStats b = evaluate(policy, pool, 0.3, 9);
  CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-14));
  CHECK(evaluate(policy, pool, 0.3, 9).scores == evaluate(policy, pool, 0.3, 9).scores);
}

TEST_CASE("network_policy picks the argmax action") {
  nn::NetworkSpec spec;
  spec.input_channels = env::kStackDepth;
  spec.input_height = env::kFrameHeight;
  spec.input_width = env::kFrameWidth;
  spec.output_units = 3;
  nn::ParameterStore params = nn::zero_parameters(spec);
  // Bias of output 2 wins for every input.
  params.values[params.size() - 1] = 1.0;
  const Policy p = network_policy(env::GameId::kCatch, spec, params);
  env::GameState g = env::make_game(env::GameId::kCatch, 1);
  CHECK(p.act(g, env::ObservationStack(g.observe())) == 2);
  // Ties resolve to the lowest index.
  params.values[params.size() - 1] = 0.0;
  const Policy tie = network_policy(env::GameId::kCatch, spec, params);
  CHECK(tie.act(g, env::ObservationStack(g.observe())) == 0);
}

TEST_CASE("EvaluationReport aggregates and writes CSV") {
  EvaluationReport r;
  r.experiment_id = "exp";
  r.tasks = {{"catch", 0.9, 0.9, 100.0}, {"avoid", 5.0, 10.0, 50.0}, {"navigate", 0.5, 0.25, 200.0}};
  CHECK(*r.aggregate() == doctest::Approx(100.0));
  const std::string csv = r.to_csv().to_string();
  CHECK(csv.rfind("experiment_id,task_id,score,teacher_score,relative_pct\n", 0) == 0);
  CHECK(csv.find("geometric_mean") != std::string::npos);
  r.tasks[1].relative_pct.reset();
  CHECK(!r.aggregate().has_value());
}

TEST_CASE("activation export selects the first conv and last dense layers") {
  const nn::NetworkSpec spec = [] {
    nn::NetworkSpec s;
    s.input_channels = env::kStackDepth;
    s.input_height = env::kFrameHeight;
    s.input_width = env::kFrameWidth;
    s.conv_layers = {{2, 4, 4}};
    s.dense_layers = {5, 6};
    s.output_units = 3;
    return s;
  }();
  CHECK(selected_layer(spec, LayerSelector::kFirstConv) == 0);
  CHECK(selected_layer(spec, LayerSelector::kLastDense) == 2);
  const auto params = nn::init_parameters(spec, 1);
  env::GameState g = env::make_game(env::GameId::kCatch, 2);
  std::vector<ActivationSample> samples{{"catch", env::ObservationStack(g.observe())}};
  const CsvTable t = export_activations(spec, params, samples, LayerSelector::kLastDense);
  REQUIRE(t.rows() == 1);
  CHECK(t.data()[0].size() == 2 + 6);
  CHECK(parse_layer_selector("first_conv") == LayerSelector::kFirstConv);
  CHECK_THROWS_AS(parse_layer_selector("middle"), std::invalid_argument);
  nn::NetworkSpec dense_only = spec;
  dense_only.conv_layers.clear();
  CHECK_THROWS(selected_layer(dense_only, LayerSelector::kFirstConv));
}
