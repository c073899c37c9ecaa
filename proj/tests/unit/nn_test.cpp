#include <cmath>
#include <cstring>
#include <functional>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "pd/nn/architectures.hpp"
#include "pd/nn/checkpoint.hpp"
#include "pd/nn/losses.hpp"
#include "pd/nn/network.hpp"
#include "pd/nn/rmsprop.hpp"

using namespace pd;
using namespace pd::nn;

namespace {

NetworkSpec atari_spec(int c1, int c2, int c3, int fc) {
  NetworkSpec s;
  s.input_channels = 4;
  s.input_height = 84;
  s.input_width = 84;
  s.conv_layers = {{c1, 8, 4}, {c2, 4, 2}, {c3, 3, 1}};
  s.dense_layers = {fc};
  s.output_units = 18;
  return s;
}

NetworkSpec small_dense() {
  NetworkSpec s;
  s.input_channels = 5;
  s.dense_layers = {7};
  s.output_units = 4;
  return s;
}

NetworkSpec small_conv() {
  NetworkSpec s;
  s.input_channels = 2;
  s.input_height = 6;
  s.input_width = 6;
  s.conv_layers = {{3, 3, 1}, {2, 2, 2}};
  s.dense_layers = {5};
  s.output_units = 4;
  return s;
}

}  // namespace

TEST_CASE("count_parameters matches the published architectures") {
  CHECK(count_parameters(atari_spec(32, 64, 64, 512)) == 1693362);
  CHECK(count_parameters(atari_spec(16, 32, 32, 256)) == 427874);
  CHECK(count_parameters(atari_spec(16, 16, 16, 128)) == 113346);
  CHECK(count_parameters(atari_spec(16, 16, 16, 64)) == 61954);
}

TEST_CASE("count_parameters of a 1-in 1-out dense layer is 2") {
  NetworkSpec s;
  s.output_units = 1;
  CHECK(count_parameters(s) == 2);
}

TEST_CASE("count_parameters equals the closed-form layer sum") {
  const NetworkSpec s = small_conv();
  // conv 2->3 @3x3: 54 + 3; 6x6 -> 4x4. conv 3->2 @2x2/2: 24 + 2; 4x4 -> 2x2.
  // dense 8->5: 40 + 5. output 5->4: 20 + 4.
  CHECK(count_parameters(s) == 57 + 26 + 45 + 24);
}

TEST_CASE("invalid specs are rejected") {
  NetworkSpec s = small_conv();
  s.conv_layers.push_back({4, 3, 1});  // 2x2 input, 3x3 kernel
  CHECK_THROWS_AS(count_parameters(s), std::invalid_argument);
  NetworkSpec t = small_conv();
  t.conv_layers[0].stride = 4;  // stride > kernel
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  NetworkSpec u = small_dense();
  u.output_units = 0;
  CHECK_THROWS_AS(u.validate(), std::invalid_argument);
}

TEST_CASE("forward of a zero network is zero and shape errors throw") {
  const NetworkSpec s = small_conv();
  const ParameterStore zero = zero_parameters(s);
  Rng rng(3);
  const auto input = testing::random_vector(rng, s.input_size());
  for (double q : forward(s, zero, input)) CHECK(q == 0.0);
  CHECK_THROWS_AS(forward(s, zero, std::vector<double>(5)), std::invalid_argument);
  ParameterStore short_params{std::vector<double>(3)};
  CHECK_THROWS_AS(forward(s, short_params, input), std::invalid_argument);
}

TEST_CASE("forward matches the scalar reference and is deterministic") {
  Rng rng(11);
  for (const NetworkSpec& s : {small_dense(), small_conv()}) {
    const ParameterStore p = init_parameters(s, 42);
    const auto input = testing::random_vector(rng, s.input_size());
    const auto a = forward(s, p, input);
    const auto b = forward(s, p, input);
    CHECK(a == b);
    const auto ref = testing::reference_forward(s, p.values, input);
    REQUIRE(ref.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("2-layer dense forward matches a by-hand computation") {
  NetworkSpec s;
  s.input_channels = 2;
  s.dense_layers = {2};
  s.output_units = 1;
  // hidden: W = [[1, -2], [0.5, 3]], b = [0.1, -4]; output: [2, -1], b = 0.25
  ParameterStore p{{1, -2, 0.5, 3, 0.1, -4, 2, -1, 0.25}};
  const std::vector<double> x{0.3, 0.7};
  const double h0 = std::max(0.0, 1 * 0.3 - 2 * 0.7 + 0.1);   // -1.0 -> 0
  const double h1 = std::max(0.0, 0.5 * 0.3 + 3 * 0.7 - 4.0);  // -1.75 -> 0
  CHECK(forward(s, p, x)[0] == doctest::Approx(2 * h0 - h1 + 0.25));
  const std::vector<double> y{2.0, 1.0};
  const double g0 = std::max(0.0, 2.0 - 2.0 + 0.1);
  const double g1 = std::max(0.0, 1.0 + 3.0 - 4.0);
  CHECK(forward(s, p, y)[0] == doctest::Approx(2 * g0 - g1 + 0.25));
}

TEST_CASE("init_parameters is seeded and bounded") {
  const NetworkSpec s = small_conv();
  CHECK(init_parameters(s, 7) == init_parameters(s, 7));
  CHECK(!(init_parameters(s, 7) == init_parameters(s, 8)));
  const ParameterStore p = init_parameters(s, 7);
  for (const auto& l : layer_layout(s)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
    for (std::size_t i = 0; i < l.weight_count(); ++i) {
      CHECK(std::abs(p.values[l.weight_offset + i]) < bound);
    }
    for (int b = 0; b < l.out_channels; ++b) CHECK(p.values[l.bias_offset + b] == 0.0);
  }
}

TEST_CASE("softmax_temperature basics") {
  const ProbVector u = softmax_temperature(std::vector<double>{1.0, 1.0, 1.0}, 0.5);
  for (double p : u.values()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const ProbVector sharp = softmax_temperature(std::vector<double>{1.0, 0.9}, 0.01);
  // exp(10) / (1 + exp(10))
  CHECK(sharp[0] >= 0.9999);
  CHECK(sharp[0] == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-14));
  const ProbVector a = softmax_temperature(std::vector<double>{0.3, -1.2, 2.0}, 0.1);
  const ProbVector b = softmax_temperature(std::vector<double>{100.3, 98.8, 102.0}, 0.1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  CHECK_THROWS_AS(softmax_temperature(std::vector<double>{1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_temperature(std::vector<double>{1.0}, -1.0), std::invalid_argument);
}

TEST_CASE("loss_mse values") {
  auto r = loss_mse(std::vector<double>{1, 0}, std::vector<double>{0, 0});
  CHECK(r.value == 1.0);
  CHECK(r.grad == std::vector<double>{-2.0, 0.0});
  auto z = loss_mse(std::vector<double>{0.5, 2}, std::vector<double>{0.5, 2});
  CHECK(z.value == 0.0);
  CHECK(z.grad == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(loss_mse(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST_CASE("loss_nll values") {
  CHECK(loss_nll(std::vector<double>{0.2, 0.2, 0.2, 0.2}, 1).value ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(loss_nll(std::vector<double>{0.0, 50.0, 0.0}, 1).value <= 1e-9);
  CHECK_THROWS_AS(loss_nll(std::vector<double>{0.0, 1.0}, 2), std::out_of_range);
}

TEST_CASE("loss_kl values") {
  CHECK(loss_kl(std::vector<double>{0, 0}, std::vector<double>{0, 0}, 1.0).value == 0.0);
  const std::vector<double> qt{1.0, 0.9, 0.0};
  const double tau = 0.01;
  std::vector<double> qs(3);
  for (int i = 0; i < 3; ++i) qs[i] = qt[i] / tau;
  CHECK(loss_kl(qt, qs, tau).value <= 1e-12);

  // Straight-line evaluation for qT = [1, 0.9, 0], qS = 0, tau = 0.01:
  // p = softmax([100, 90, 0]) and s = 1/3 each, so KL = sum p ln p + ln 3.
  const double e1 = std::exp(-10.0), e2 = std::exp(-100.0);
  const double z = 1.0 + e1 + e2;
  const double p0 = 1.0 / z, p1 = e1 / z, p2 = e2 / z;
  const double expected = p0 * std::log(p0) + p1 * std::log(p1) + p2 * std::log(p2) + std::log(3.0);
  const auto r = loss_kl(qt, std::vector<double>{0, 0, 0}, tau);
  CHECK(r.value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r.grad[0] == doctest::Approx(1.0 / 3.0 - p0).epsilon(1e-12));
  CHECK_THROWS_AS(loss_kl(qt, std::vector<double>{0, 0}, tau), std::invalid_argument);
  CHECK_THROWS_AS(loss_kl(qt, qs, 0.0), std::invalid_argument);
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.uniform_int(6);
    const auto qt = testing::random_vector(rng, k, 2.0);
    const auto qs = testing::random_vector(rng, k, 2.0);
    const std::size_t best = argmax(qt);
    struct Case {
      std::function<LossResult(const std::vector<double>&)> f;
    };
    const std::vector<Case> cases = {
        {[&](const std::vector<double>& s) { return loss_mse(qt, s); }},
        {[&](const std::vector<double>& s) { return loss_nll(s, best); }},
        {[&](const std::vector<double>& s) { return loss_kl(qt, s, 1.0); }},
        {[&](const std::vector<double>& s) { return loss_kl(qt, s, 0.1); }},
        {[&](const std::vector<double>& s) { return loss_kl(qt, s, 0.01); }},
    };
    for (const auto& c : cases) {
      const auto analytic = c.f(qs).grad;
      const auto numeric =
          testing::central_difference([&](const std::vector<double>& s) { return c.f(s).value; }, qs);
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(testing::gradient_close(analytic[i], numeric[i], 1e-6, 1e-8));
      }
    }
  }
}

TEST_CASE("backward of a zero output gradient is zero") {
  const NetworkSpec s = small_conv();
  const ParameterStore p = init_parameters(s, 1);
  Rng rng(2);
  const auto g = backward(s, p, testing::random_vector(rng, s.input_size()),
                          std::vector<double>(s.output_units, 0.0));
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("backward on a 1-1 dense network equals the chain rule") {
  NetworkSpec s;
  s.output_units = 1;
  ParameterStore p{{0.7, -0.2}};  // q = w x + b
  const double x = 1.5;
  const double dq = 3.0;
  const auto g = backward(s, p, std::vector<double>{x}, std::vector<double>{dq});
  CHECK(g[0] == doctest::Approx(dq * x));
  CHECK(g[1] == doctest::Approx(dq));
}

TEST_CASE("backward matches central differences on conv and dense networks") {
  Rng rng(17);
  for (const NetworkSpec& s : {small_dense(), small_conv()}) {
    for (int trial = 0; trial < 10; ++trial) {
      ParameterStore p = init_parameters(s, 100 + trial);
      for (auto& v : p.values) v += 0.05 * (2 * rng.uniform() - 1);  // non-zero biases
      const auto input = testing::random_vector(rng, s.input_size());
      const auto qt = testing::random_vector(rng, s.output_units);
      auto loss_of = [&](const std::vector<double>& theta) {
        return loss_mse(qt, forward(s, ParameterStore{theta}, input)).value;
      };
      const auto out = forward(s, p, input);
      const auto analytic = backward(s, p, input, loss_mse(qt, out).grad);
      const auto numeric = testing::central_difference(loss_of, p.values);
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        CHECK(testing::gradient_close(analytic[i], numeric[i]));
      }
    }
  }
}

TEST_CASE("input gradient matches central differences") {
  const NetworkSpec s = small_conv();
  const ParameterStore p = init_parameters(s, 9);
  Rng rng(4);
  const auto input = testing::random_vector(rng, s.input_size());
  const std::vector<double> w{0.3, -1.0, 0.5, 2.0};
  auto f = [&](const std::vector<double>& x) {
    const auto q = forward(s, p, x);
    double acc = 0;
    for (std::size_t i = 0; i < q.size(); ++i) acc += w[i] * q[i];
    return acc;
  };
  ForwardTrace trace;
  forward_traced(s, p, input, trace);
  std::vector<double> pg(p.size(), 0.0), ig(input.size(), 0.0);
  backward_traced(s, p, trace, w, pg, ig);
  const auto numeric = testing::central_difference(f, input);
  for (std::size_t i = 0; i < ig.size(); ++i) CHECK(testing::gradient_close(ig[i], numeric[i]));
}

TEST_CASE("rmsprop_step closed forms") {
  RmsPropConfig cfg{1e-3, 0.95, 1e-6};
  {
    RmsPropState st(1, cfg);
    std::vector<double> theta{0.5};
    const double g = 0.2;
    rmsprop_step(theta, std::vector<double>{g}, st);
    CHECK(theta[0] - 0.5 == doctest::Approx(-cfg.learning_rate * g /
                                            std::sqrt((1 - cfg.decay) * g * g + cfg.epsilon)));
  }
  {
    RmsPropState st(2, cfg);
    st.mean_square = {0.4, 1.0};
    std::vector<double> theta{1.0, -1.0};
    rmsprop_step(theta, std::vector<double>{0.0, 0.0}, st);
    CHECK(theta == std::vector<double>{1.0, -1.0});
    CHECK(st.mean_square[0] == doctest::Approx(0.4 * 0.95));
    CHECK(st.mean_square[1] == doctest::Approx(0.95));
  }
  RmsPropState st(2, cfg);
  std::vector<double> theta{1.0, 2.0};
  CHECK_THROWS_AS(rmsprop_step(theta, std::vector<double>{1.0}, st), std::invalid_argument);
}

TEST_CASE("training steps are bit-deterministic") {
  auto run = [] {
    const NetworkSpec s = small_conv();
    ParameterStore p = init_parameters(s, 3);
    RmsPropState st(p.size(), {});
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
      const auto x = testing::random_vector(rng, s.input_size());
      const auto qt = testing::random_vector(rng, s.output_units);
      const auto g = backward(s, p, x, loss_kl(qt, forward(s, p, x), 0.01).grad);
      rmsprop_step(p.values, g, st);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is bit-exact and validates its header") {
  const NetworkSpec s = small_conv();
  ParameterStore p = init_parameters(s, 12);
  p.values[0] = -0.0;
  p.values[1] = std::numeric_limits<double>::denorm_min();
  const std::string bytes = encode_checkpoint(s, p);
  CHECK(bytes.substr(0, 4) == "PDST");
  NetworkSpec s2;
  ParameterStore p2;
  decode_checkpoint(bytes, s2, p2);
  CHECK(s2 == s);
  REQUIRE(p2.size() == p.size());
  CHECK(std::memcmp(p2.values.data(), p.values.data(), p.size() * sizeof(double)) == 0);
  CHECK(std::signbit(p2.values[0]));

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad, s2, p2), std::runtime_error);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3), s2, p2), std::runtime_error);
}

TEST_CASE("batched forward and backward equal per-sample passes") {
  const NetworkSpec s = small_conv();
  const ParameterStore p = init_parameters(s, 21);
  Rng rng(22);
  const int batch = 5;
  const auto inputs = testing::random_vector(rng, s.input_size() * batch);
  const auto out_grads = testing::random_vector(rng, static_cast<std::size_t>(s.output_units) * batch);
  ForwardTrace trace;
  forward_batch_traced(s, p, inputs, batch, trace);
  std::vector<double> batched(p.size(), 0.0), batched_in(inputs.size(), 0.0);
  backward_traced(s, p, trace, out_grads, batched, batched_in);

  std::vector<double> summed(p.size(), 0.0);
  for (int b = 0; b < batch; ++b) {
    const std::span<const double> x(inputs.data() + b * s.input_size(), s.input_size());
    const std::span<const double> g(out_grads.data() + b * s.output_units, s.output_units);
    const auto q = forward(s, p, x);
    for (int a = 0; a < s.output_units; ++a) CHECK(trace.output(b)[a] == doctest::Approx(q[a]).epsilon(1e-13));
    ForwardTrace single;
    forward_traced(s, p, x, single);
    std::vector<double> in_grad(s.input_size(), 0.0);
    backward_traced(s, p, single, g, summed, in_grad);
    for (std::size_t j = 0; j < in_grad.size(); ++j) {
      CHECK(batched_in[b * s.input_size() + j] == doctest::Approx(in_grad[j]).epsilon(1e-12));
    }
  }
  for (std::size_t i = 0; i < summed.size(); ++i) CHECK(batched[i] == doctest::Approx(summed[i]).epsilon(1e-12));
}

TEST_CASE("multi-task totals pin only the summed action counts") {
  const auto shapes = atari_multitask_shapes();
  REQUIRE(shapes.size() == 2);
  CHECK(shapes[0].second.parameter_count() == 1882668);
  CHECK(shapes[1].second.parameter_count() == 6756721);
  // Each extra action adds head_hidden + 1 parameters, so any split with the
  // same total gives the same count.
  MultiTaskShape other = shapes[0].second;
  other.action_counts = {4, 4, 4};
  CHECK(other.parameter_count() == 1882668);
  other.action_counts = {3, 3, 7};
  CHECK(other.parameter_count() == 1882668 + 129);
}
