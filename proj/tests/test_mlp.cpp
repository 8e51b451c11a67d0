#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "canids/mlp.hpp"

using namespace canids;

namespace {

// Independent scalar reimplementation of the forward pass: plain loops and
// std::nearbyint instead of the library's GEMM factoring and rounding helper.
VecX oracle_forward(const FakeQuantMlp& model, const VecX& features) {
  auto fq = [](double x, const QuantSpec& s) {
    double q = std::nearbyint(x / s.scale);
    q = std::min(q, static_cast<double>(s.qmax()));
    q = std::max(q, static_cast<double>(s.qmin()));
    return q * s.scale;
  };
  std::vector<double> x(static_cast<std::size_t>(features.size()));
  for (Eigen::Index i = 0; i < features.size(); ++i)
    x[static_cast<std::size_t>(i)] = fq(features(i), model.input_quant);

  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto& layer = model.layers[l];
    const bool last = l + 1 == model.layer_count();
    std::vector<double> y(static_cast<std::size_t>(layer.weights.rows()));
    const double s_out = layer.weight_quant.scale * layer_input_scale(model, l);
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      double z = 0.0;
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
        z += fq(layer.weights(i, j), layer.weight_quant) *
             x[static_cast<std::size_t>(j)];
      if (last) {
        // the library snaps the final bias to the accumulator grid so the
        // integer engine can carry it; mirror that here
        z += std::nearbyint(layer.bias(i) / s_out) * s_out;
        y[static_cast<std::size_t>(i)] = z;
      } else {
        z += layer.bias(i);
        const double a = z > 0.0 ? z : 0.0;
        y[static_cast<std::size_t>(i)] = fq(a, *layer.act_quant);
      }
    }
    x = std::move(y);
  }
  VecX out(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = x[i];
  return out;
}

FakeQuantMlp random_calibrated(const std::vector<int>& dims, std::uint64_t seed) {
  Rng rng(seed);
  FakeQuantMlp model = make_mlp(dims, 4, 4, rng);
  for (auto& layer : model.layers)
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
      layer.bias(i) = 0.1 * rng.normal();
  MatX batch(dims.front(), 64);
  for (Eigen::Index j = 0; j < batch.cols(); ++j)
    for (Eigen::Index i = 0; i < batch.rows(); ++i) batch(i, j) = rng.uniform();
  calibrate_scales(model, batch);
  return model;
}

}  // namespace

TEST_CASE("all-zero weights and biases give zero logits and a Normal tie") {
  Rng rng(1);
  FakeQuantMlp model = make_mlp({6, 4, 2}, 4, 4, rng);
  for (auto& layer : model.layers) layer.weights.setZero();
  MatX batch = MatX::Constant(6, 8, 0.5);
  calibrate_scales(model, batch);

  VecX features = VecX::Constant(6, 0.3);
  const VecX logits = forward(model, features);
  CHECK(logits(0) == 0.0);
  CHECK(logits(1) == 0.0);
  CHECK(predict_from_logits(logits) == Label::Normal);
}

TEST_CASE("identity single-layer model returns the fake-quantised input") {
  FakeQuantMlp model;
  model.layer_dims = {2, 2};
  model.input_quant = input_quant_spec();
  MlpLayer layer;
  layer.weights = MatX::Identity(2, 2);
  layer.bias = VecX::Zero(2);
  layer.weight_quant = QuantSpec{4, true, 1.0};
  model.layers.push_back(layer);
  model.calibrated = true;

  VecX features(2);
  features << 0.34, 0.77;
  const VecX logits = forward(model, features);
  for (int i = 0; i < 2; ++i)
    CHECK(logits(i) == fake_quant(features(i), model.input_quant));
}

TEST_CASE("forward matches an independent naive oracle") {
  for (std::uint64_t seed : {2u, 3u, 4u, 5u, 6u}) {
    FakeQuantMlp model = random_calibrated({10, 12, 6, 2}, seed);
    Rng rng(seed + 100);
    for (int trial = 0; trial < 50; ++trial) {
      VecX features(10);
      for (int i = 0; i < 10; ++i) features(i) = rng.uniform();
      const VecX got = forward(model, features);
      const VecX want = oracle_forward(model, features);
      REQUIRE(got.size() == want.size());
      for (Eigen::Index i = 0; i < got.size(); ++i)
        REQUIRE(got(i) == doctest::Approx(want(i)).epsilon(1e-6));
    }
  }
}

TEST_CASE("predict_from_logits: strict inequality flags attack, tie stays normal") {
  VecX tie(2);
  tie << 1.25, 1.25;
  CHECK(predict_from_logits(tie) == Label::Normal);
  VecX attack(2);
  attack << 0.0, 1e-12;
  CHECK(predict_from_logits(attack) == Label::Attack);
  VecX normal(2);
  normal << 5.0, 4.0;
  CHECK(predict_from_logits(normal) == Label::Normal);
}

TEST_CASE("weight scale calibration: {-1, 1} weights give maxabs/qmax") {
  Rng rng(7);
  FakeQuantMlp model = make_mlp({4, 3, 2}, 4, 4, rng);
  for (auto& layer : model.layers)
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
        layer.weights(i, j) = ((i + j) % 2 == 0) ? 1.0 : -1.0;
  refresh_weight_scales(model);
  for (const auto& layer : model.layers)
    CHECK(layer.weight_quant.scale == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("all-zero layer gets the scale floor") {
  Rng rng(8);
  FakeQuantMlp model = make_mlp({4, 3, 2}, 4, 4, rng);
  model.layers[0].weights.setZero();
  refresh_weight_scales(model);
  CHECK(model.layers[0].weight_quant.scale == 1e-8);
}

TEST_CASE("constant input batch pins the activation scale to max/qmax") {
  FakeQuantMlp model;
  model.layer_dims = {1, 1, 2};
  model.input_quant = input_quant_spec();
  MlpLayer hidden;
  hidden.weights = MatX::Constant(1, 1, 1.0);
  hidden.bias = VecX::Zero(1);
  hidden.weight_quant = QuantSpec{4, true, 1.0};
  hidden.act_quant = QuantSpec{4, false, 1.0};
  MlpLayer last;
  last.weights = MatX::Ones(2, 1);
  last.bias = VecX::Zero(2);
  last.weight_quant = QuantSpec{4, true, 1.0};
  model.layers = {hidden, last};

  MatX batch = MatX::Constant(1, 16, 0.5);
  calibrate_scales(model, batch);
  // weight scale becomes 1/7, code 7; input 0.5 -> code 128; the observed
  // activation is 7 * 128 * (1/7) * (1/255) = 128/255
  const double expect_max = 128.0 / 255.0;
  CHECK(model.layers[0].act_running_max == doctest::Approx(expect_max));
  CHECK(model.layers[0].act_quant->scale == doctest::Approx(expect_max / 15.0));
}

TEST_CASE("activation scale EMA follows the running max") {
  FakeQuantMlp model = random_calibrated({4, 3, 2}, 21);
  const double before = model.layers[0].act_running_max;
  update_act_scales(model, {2.0 * before}, 0.9);
  const double want = 0.9 * before + 0.1 * (2.0 * before);
  CHECK(model.layers[0].act_running_max == doctest::Approx(want));
  CHECK(model.layers[0].act_quant->scale == doctest::Approx(want / 15.0));
  CHECK_THROWS_AS(update_act_scales(model, {1.0, 2.0}, 0.9), LengthMismatch);
}

TEST_CASE("forward validates dimensions and calibration") {
  Rng rng(9);
  FakeQuantMlp model = make_mlp({4, 3, 2}, 4, 4, rng);
  VecX short_input = VecX::Zero(3);
  VecX ok_input = VecX::Zero(4);
  CHECK_THROWS_AS(forward(model, ok_input), NotCalibrated);
  MatX batch = MatX::Constant(4, 4, 0.5);
  calibrate_scales(model, batch);
  CHECK_THROWS_AS(forward(model, short_input), DimensionMismatch);
  CHECK_NOTHROW(forward(model, ok_input));
}

TEST_CASE("make_mlp rejects bad shapes and widths") {
  Rng rng(10);
  CHECK_THROWS_AS(make_mlp({4}, 4, 4, rng), ValidationError);
  CHECK_THROWS_AS(make_mlp({4, 0, 2}, 4, 4, rng), ValidationError);
  CHECK_THROWS_AS(make_mlp({4, 3, 2}, 1, 4, rng), ValidationError);
  CHECK_THROWS_AS(make_mlp({4, 3, 2}, 4, 64, rng), ValidationError);
}

TEST_CASE("hidden layers carry activation quantisers, the final layer does not") {
  Rng rng(11);
  const FakeQuantMlp model = make_mlp({40, 64, 32, 2}, 4, 4, rng);
  REQUIRE(model.layer_count() == 3);
  CHECK(model.layers[0].act_quant.has_value());
  CHECK(model.layers[1].act_quant.has_value());
  CHECK(!model.layers[2].act_quant.has_value());
  CHECK(model.weight_bits() == 4);
  CHECK(model.act_bits() == 4);
  CHECK(model.input_quant.bits == 8);
}
