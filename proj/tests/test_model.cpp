#include <cmath>
#include <random>

#include "doctest.h"
#include "oracle.hpp"
#include "tecno/model.hpp"

using namespace tecno;
using tecno::testing::dot;
using tecno::testing::max_relative_error;
using tecno::testing::measured_receptive_field;
using tecno::testing::min_relu_margin;
using tecno::testing::min_target_prob;
using tecno::testing::numeric_gradient;
using tecno::testing::random_labels;
using tecno::testing::random_params;
using tecno::testing::random_tensor;

namespace {

ArchConfig tiny_arch(std::size_t in, std::size_t classes, std::size_t layers = 2, std::size_t stages = 2,
                     std::size_t hidden = 3) {
  ArchConfig a;
  a.input_dim = in;
  a.num_classes = classes;
  a.num_layers = layers;
  a.num_stages = stages;
  a.hidden_dim = hidden;
  return a;
}

void set_identity(ConvKernel<double>& k) {
  std::fill(k.weights.begin(), k.weights.end(), 0.0);
  std::fill(k.bias.begin(), k.bias.end(), 0.0);
  for (std::size_t c = 0; c < std::min(k.out_channels, k.in_channels); ++c) k.w(c, c, k.kernel_size - 1) = 1.0;
}

std::size_t stage_size(const StageParams<double>& s) {
  std::size_t n = s.input_projection.weights.size() + s.input_projection.bias.size();
  for (const auto& l : s.layers)
    n += l.dilated.weights.size() + l.dilated.bias.size() + l.pointwise.weights.size() + l.pointwise.bias.size();
  return n + s.output_head.weights.size() + s.output_head.bias.size();
}

std::vector<double> flat_grads(const ModelParams<double>& g) { return flatten(g); }

}  // namespace

TEST_CASE("receptive field formula") {
  CHECK(receptive_field(1) == 3);
  CHECK(receptive_field(2) == 7);
  CHECK(receptive_field(9) == 1023);
  CHECK(receptive_field(10) == 2047);
  CHECK_THROWS_AS(receptive_field(0), DomainError);
  CHECK_THROWS_AS(receptive_field(63), DomainError);
  CHECK(ArchConfig::dilation_of_layer(0) == 1);
  CHECK(ArchConfig::dilation_of_layer(8) == 256);
}

TEST_CASE("measured receptive field of one stage equals 2^(N+1) - 1") {
  std::mt19937_64 rng(101);
  for (std::size_t layers = 1; layers <= 4; ++layers) {
    const auto params = random_params<double>(tiny_arch(3, 4, layers, 1, 4), rng, 0.8);
    const std::size_t rf = receptive_field(layers);
    CHECK(measured_receptive_field(params.stages[0], 3, rf + 10, rng, 6) == rf);
  }
}

TEST_CASE("arch validation") {
  CHECK_NOTHROW(tiny_arch(2, 2).validate());
  CHECK_THROWS_AS(tiny_arch(0, 2).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_arch(2, 1).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_arch(2, 2, 0).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_arch(2, 2, 2, 0).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_arch(2, 2, 2, 2, 0).validate(), ConfigError);
}

TEST_CASE("parameter layout") {
  const auto arch = tiny_arch(5, 4, 3, 2, 6);
  const auto params = zero_params<double>(arch);
  const std::size_t h = 6, n = 3, c = 4;
  const std::size_t body = n * (h * h * 3 + h + h * h + h) + h * c + c;
  CHECK(params.parameter_count() == (5 * h + h + body) + (c * h + h + body));
  CHECK(flatten(params).size() == params.parameter_count());
  CHECK(params.stages[1].input_projection.in_channels == c);
  for (std::size_t l = 0; l < n; ++l) CHECK(params.stages[0].layers[l].dilated.dilation == (std::size_t{1} << l));

  std::mt19937_64 rng(7);
  const auto random = random_params<double>(arch, rng);
  auto copy = zero_params<double>(arch);
  const auto flat = flatten(random);
  assign_flat(copy, std::span<const double>(flat));
  CHECK(copy == random);
  const std::vector<double> short_flat(flat.size() - 1);
  CHECK_THROWS_AS(assign_flat(copy, std::span<const double>(short_flat)), ShapeError);
}

TEST_CASE("init is seeded, He-uniform bounded, with zero biases") {
  const auto arch = tiny_arch(16, 5, 6, 2, 32);
  const auto a = init_params<float>(arch, 42);
  const auto b = init_params<float>(arch, 42);
  const auto c = init_params<float>(arch, 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  auto check_kernel = [](const ConvKernel<float>& k) {
    const double bound = std::sqrt(6.0 / static_cast<double>(k.in_channels * k.kernel_size));
    double widest = 0.0;
    for (float w : k.weights) widest = std::max(widest, std::abs(static_cast<double>(w)));
    CHECK(widest <= bound);
    CHECK(widest > 0.5 * bound);
    for (float v : k.bias) CHECK(v == 0.0f);
  };
  for (const auto& stage : a.stages) {
    check_kernel(stage.input_projection);
    for (const auto& layer : stage.layers) {
      check_kernel(layer.dilated);
      check_kernel(layer.pointwise);
    }
    check_kernel(stage.output_head);
  }
}

TEST_CASE("residual layer: zero weights give the identity") {
  std::mt19937_64 rng(3);
  const auto d = random_tensor<double>(4, 9, rng);
  const ResidualLayer<double> layer{ConvKernel<double>(4, 4, 3, 2), ConvKernel<double>(4, 4, 1, 1)};
  CHECK(dilated_residual_forward(d, layer).output == d);
}

TEST_CASE("residual layer: identity convolutions double a non-negative input") {
  std::mt19937_64 rng(5);
  auto d = random_tensor<double>(3, 8, rng);
  for (double& v : d.values()) v = std::abs(v);
  ResidualLayer<double> layer{ConvKernel<double>(3, 3, 3, 4), ConvKernel<double>(3, 3, 1, 1)};
  set_identity(layer.dilated);
  set_identity(layer.pointwise);
  const auto out = dilated_residual_forward(d, layer).output;
  for (std::size_t n = 0; n < d.size(); ++n) CHECK(out.values()[n] == 2.0 * d.values()[n]);
}

TEST_CASE("stage 2 consumes stage-1 probabilities") {
  const std::size_t classes = 3;
  std::mt19937_64 rng(9);
  auto params = random_params<double>(tiny_arch(4, classes, 2, 2, classes), rng);
  auto& s2 = params.stages[1];
  set_identity(s2.input_projection);
  for (auto& layer : s2.layers) {
    std::fill(layer.dilated.weights.begin(), layer.dilated.weights.end(), 0.0);
    std::fill(layer.dilated.bias.begin(), layer.dilated.bias.end(), 0.0);
    std::fill(layer.pointwise.weights.begin(), layer.pointwise.weights.end(), 0.0);
    std::fill(layer.pointwise.bias.begin(), layer.pointwise.bias.end(), 0.0);
  }
  set_identity(s2.output_head);
  const auto x = random_tensor<double>(4, 11, rng);
  const auto preds = multistage_forward(x, params);
  CHECK(preds.per_stage_logits[1] == preds.per_stage_probs[0]);
  const auto expected = softmax_time(preds.per_stage_probs[0]);
  for (std::size_t n = 0; n < expected.size(); ++n)
    CHECK(preds.per_stage_probs[1].values()[n] == doctest::Approx(expected.values()[n]).epsilon(1e-15));
}

TEST_CASE("untraced forward equals the traced forward bit for bit") {
  std::mt19937_64 rng(13);
  const auto params = random_params<float>(tiny_arch(5, 4, 4, 3, 8), rng);
  const auto x = random_tensor<float>(5, 40, rng);
  const auto fast = multistage_forward(x, params);
  const auto traced = multistage_trace(x, params).predictions;
  CHECK(fast.per_stage_logits == traced.per_stage_logits);
  CHECK(fast.per_stage_probs == traced.per_stage_probs);
}

TEST_CASE("multistage model is causal") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = random_params<double>(tiny_arch(3, 4, 3, 2, 5), rng);
    const std::size_t steps = 2 + rng() % 30, t = rng() % (steps - 1);
    const auto a = random_tensor<double>(3, steps, rng);
    auto b = a;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t u = t + 1; u < steps; ++u) b(c, u) += 5.0;
    const auto pa = multistage_forward(a, params).final_probs();
    const auto pb = multistage_forward(b, params).final_probs();
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t u = 0; u <= t; ++u) CHECK(pa(c, u) == pb(c, u));
  }
}

TEST_CASE("multistage loss values") {
  SUBCASE("uniform predictions give ln 2") {
    const auto params = zero_params<double>(tiny_arch(3, 2, 2, 2, 3));
    const SeqTensor<double> x(3, 2, 1.0);
    const auto preds = multistage_forward(x, params);
    const std::vector<double> w = {1.0, 1.0};
    const auto loss = multistage_loss(preds, LabelSequence{0, 1}, std::span<const double>(w));
    CHECK(std::abs(loss.total - std::log(2.0)) <= 1e-12);
    CHECK(loss.per_stage.size() == 2);
  }
  SUBCASE("total is the mean of the per-stage weighted cross-entropies") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t stages = 1 + rng() % 4, classes = 2 + rng() % 4, steps = 1 + rng() % 20;
      const auto params = random_params<double>(tiny_arch(3, classes, 2, stages, 4), rng);
      const auto x = random_tensor<double>(3, steps, rng);
      const auto labels = random_labels(steps, classes, rng);
      std::vector<double> w(classes);
      for (double& v : w) v = 0.2 + static_cast<double>(rng() % 30) / 10.0;
      const auto preds = multistage_forward(x, params);
      const auto loss = multistage_loss(preds, labels, std::span<const double>(w));
      double sum = 0.0;
      for (std::size_t m = 0; m < stages; ++m) {
        const double per = weighted_ce(preds.per_stage_probs[m], labels, std::span<const double>(w)).loss;
        CHECK(loss.per_stage[m] == doctest::Approx(per).epsilon(1e-14));
        sum += per;
      }
      CHECK(loss.total == doctest::Approx(sum / static_cast<double>(stages)).epsilon(1e-14));
    }
  }
}

TEST_CASE("multistage backward matches central finite differences") {
  std::mt19937_64 rng(23);
  int checked = 0;
  while (checked < 20) {
    const std::size_t in = 1 + rng() % 4, classes = 2 + rng() % 3, steps = 1 + rng() % 8;
    auto params = random_params<double>(tiny_arch(in, classes, 2, 2, 3), rng, 0.7);
    const auto x = random_tensor<double>(in, steps, rng);
    if (min_relu_margin(multistage_trace(x, params)) < 1e-4) continue;
    const auto labels = random_labels(steps, classes, rng);
    if (min_target_prob(multistage_forward(x, params), labels) < 1e-6) continue;
    std::vector<double> w(classes);
    for (double& v : w) v = 0.5 + static_cast<double>(rng() % 20) / 10.0;
    const std::span<const double> ws(w);

    const auto analytic = multistage_backward(x, params, labels, ws);
    auto flat = flatten(params);
    const auto numeric = numeric_gradient(flat, [&] {
      assign_flat(params, std::span<const double>(flat));
      return multistage_loss(multistage_forward(x, params), labels, ws).total;
    });
    assign_flat(params, std::span<const double>(flat));
    CHECK(max_relative_error(flat_grads(analytic.grads), numeric) < 1e-4);
    CHECK(analytic.loss.total == doctest::Approx(multistage_loss(multistage_forward(x, params), labels, ws).total));
    ++checked;
  }
}

TEST_CASE("detached backward: stage 1 only sees its own loss") {
  std::mt19937_64 rng(29);
  int checked = 0;
  while (checked < 10) {
    const std::size_t in = 2, classes = 3, steps = 6;
    auto params = random_params<double>(tiny_arch(in, classes, 2, 2, 3), rng, 0.7);
    const auto x = random_tensor<double>(in, steps, rng);
    if (min_relu_margin(multistage_trace(x, params)) < 1e-4) continue;
    const auto labels = random_labels(steps, classes, rng);
    if (min_target_prob(multistage_forward(x, params), labels) < 1e-6) continue;
    const std::vector<double> w = {1.0, 2.0, 0.5};
    const std::span<const double> ws(w);
    const auto full = multistage_backward(x, params, labels, ws, false);
    const auto detached = multistage_backward(x, params, labels, ws, true);
    CHECK(detached.grads.stages[1] == full.grads.stages[1]);

    auto flat = flatten(params);
    const auto numeric = numeric_gradient(flat, [&] {
      assign_flat(params, std::span<const double>(flat));
      return multistage_loss(multistage_forward(x, params), labels, ws).per_stage[0] / 2.0;
    });
    assign_flat(params, std::span<const double>(flat));
    const auto analytic = flat_grads(detached.grads);
    const std::size_t stage1 = stage_size(params.stages[0]);
    std::vector<double> a1(analytic.begin(), analytic.begin() + static_cast<long>(stage1));
    std::vector<double> n1(numeric.begin(), numeric.begin() + static_cast<long>(stage1));
    CHECK(max_relative_error(a1, n1) < 1e-4);
    ++checked;
  }
}

TEST_CASE("gradient linearity in the class weights and zero weights") {
  std::mt19937_64 rng(31);
  const auto params = random_params<double>(tiny_arch(3, 3, 2, 2, 4), rng);
  const auto x = random_tensor<double>(3, 10, rng);
  const auto labels = random_labels(10, 3, rng);
  const std::vector<double> w = {0.5, 1.5, 2.0}, w2 = {1.0, 3.0, 4.0}, zero = {0.0, 0.0, 0.0};
  const auto g = flat_grads(multistage_backward(x, params, labels, std::span<const double>(w)).grads);
  const auto g2 = flat_grads(multistage_backward(x, params, labels, std::span<const double>(w2)).grads);
  for (std::size_t n = 0; n < g.size(); ++n) CHECK(g2[n] == doctest::Approx(2.0 * g[n]).epsilon(1e-12));
  const auto gz = flat_grads(multistage_backward(x, params, labels, std::span<const double>(zero)).grads);
  for (double v : gz) CHECK(v == 0.0);
}

TEST_CASE("argmax prefers the lowest index on ties") {
  SeqTensor<float> p(3, 3);
  p(0, 0) = 0.2f, p(1, 0) = 0.4f, p(2, 0) = 0.4f;
  p(0, 1) = 0.5f, p(1, 1) = 0.5f, p(2, 1) = 0.0f;
  p(0, 2) = 0.1f, p(1, 2) = 0.2f, p(2, 2) = 0.7f;
  CHECK(argmax_labels(p) == LabelSequence{1, 0, 2});
}

TEST_CASE("shape and label errors") {
  const auto params = zero_params<double>(tiny_arch(3, 2));
  CHECK_THROWS_AS(multistage_forward(SeqTensor<double>(4, 5), params), ShapeError);
  const std::vector<double> w = {1.0, 1.0};
  CHECK_THROWS_AS(multistage_backward(SeqTensor<double>(3, 5), params, LabelSequence{0, 1}, std::span<const double>(w)),
                  ShapeError);
  CHECK_THROWS_AS(
      multistage_backward(SeqTensor<double>(3, 2), params, LabelSequence{0, 5}, std::span<const double>(w)),
      LabelError);
}
