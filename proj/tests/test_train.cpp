#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>

#include "canids/lower.hpp"
#include "canids/train.hpp"

using namespace canids;

namespace {

// Separable toy problem: attack iff the first input code >= 128, with a
// margin around the boundary so a 4-bit model can represent the split.
FeatureDataset toy_set(std::size_t n, std::uint64_t seed, int dim = 4) {
  Rng rng(seed);
  FeatureDataset d;
  d.feature_dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector fv;
    fv.values = VecX(dim);
    fv.codes.resize(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
      std::uint8_t c;
      do {
        c = static_cast<std::uint8_t>(rng.uniform_below(256));
      } while (j == 0 && c > 112 && c < 144);
      fv.codes[static_cast<std::size_t>(j)] = c;
      fv.values(j) = c / 255.0;
    }
    d.append(fv, fv.codes[0] >= 128 ? Label::Attack : Label::Normal);
  }
  return d;
}

bool same_weights(const FakeQuantMlp& a, const FakeQuantMlp& b) {
  if (a.layer_count() != b.layer_count()) return false;
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    if ((a.layers[l].weights.array() != b.layers[l].weights.array()).any())
      return false;
    if ((a.layers[l].bias.array() != b.layers[l].bias.array()).any())
      return false;
    if (a.layers[l].weight_quant.scale != b.layers[l].weight_quant.scale)
      return false;
    if (a.layers[l].act_quant.has_value() != b.layers[l].act_quant.has_value())
      return false;
    if (a.layers[l].act_quant &&
        a.layers[l].act_quant->scale != b.layers[l].act_quant->scale)
      return false;
    if (a.layers[l].act_running_max != b.layers[l].act_running_max) return false;
  }
  return true;
}

double dataset_accuracy(const FakeQuantMlp& model, const FeatureDataset& data) {
  std::size_t hits = 0;
  MatX x(data.feature_dim, 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint8_t* s = data.sample(i);
    for (int j = 0; j < data.feature_dim; ++j) x(j, 0) = s[j];
    const MatX logits = forward_batch(model, x);
    const Label got =
        logits(1, 0) > logits(0, 0) ? Label::Attack : Label::Normal;
    if (got == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("training solves a separable toy problem") {
  FeatureDataset data = toy_set(2000, 42);
  Rng rng(1);
  FakeQuantMlp model = make_mlp({4, 16, 2}, 4, 4, rng);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 3e-3;
  cfg.seed = 1;
  const TrainResult res = train(model, data, cfg);
  REQUIRE(res.trace.size() == 50);
  CHECK(res.trace.back().accuracy >= 0.99);
  CHECK(dataset_accuracy(model, data) >= 0.99);
}

TEST_CASE("loss decreases over the first epochs") {
  FeatureDataset data = toy_set(2000, 7);
  Rng rng(2);
  FakeQuantMlp model = make_mlp({4, 16, 2}, 4, 4, rng);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 2;
  const TrainResult res = train(model, data, cfg);
  REQUIRE(res.trace.size() == 5);
  for (std::size_t i = 1; i < res.trace.size(); ++i)
    CHECK(res.trace[i].loss < res.trace[i - 1].loss);
}

TEST_CASE("zero learning rate freezes the model and reports a flat trace") {
  FeatureDataset data = toy_set(600, 9);
  Rng rng(3);
  FakeQuantMlp model = make_mlp({4, 8, 2}, 4, 4, rng);
  MatX calib(4, 64);
  Rng crng(4);
  for (Eigen::Index j = 0; j < calib.cols(); ++j)
    for (Eigen::Index i = 0; i < calib.rows(); ++i) calib(i, j) = crng.uniform();
  calibrate_scales(model, calib);

  const FakeQuantMlp before = model;
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 0.0;
  const TrainResult res = train(model, data, cfg);
  CHECK(same_weights(before, model));
  REQUIRE(res.trace.size() == 4);
  for (std::size_t i = 1; i < res.trace.size(); ++i) {
    CHECK(res.trace[i].loss == res.trace[0].loss);
    CHECK(res.trace[i].accuracy == res.trace[0].accuracy);
  }
}

TEST_CASE("same seed reproduces the run bit for bit") {
  FeatureDataset data = toy_set(1500, 11);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 77;

  Rng rng_a(5);
  FakeQuantMlp a = make_mlp({4, 12, 2}, 4, 4, rng_a);
  const TrainResult ra = train(a, data, cfg);

  Rng rng_b(5);
  FakeQuantMlp b = make_mlp({4, 12, 2}, 4, 4, rng_b);
  const TrainResult rb = train(b, data, cfg);

  CHECK(same_weights(a, b));
  REQUIRE(ra.trace.size() == rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i) {
    CHECK(ra.trace[i].loss == rb.trace[i].loss);
    CHECK(ra.trace[i].accuracy == rb.trace[i].accuracy);
  }
}

TEST_CASE("analytic gradients match central differences away from kinks") {
  // Wide quantisers (40-bit) keep the fake-quant staircase fine, but the loss
  // still carries O(s_act) jitter from activation rounding and central
  // differences divide that by 2h, so the step has to be generous. The kink
  // margin is 10x the step so a perturbed weight cannot push any
  // pre-activation across a ReLU or clip corner; inflated scales keep every
  // weight and activation strictly inside its representable range so the STE
  // gates stay constant under the perturbation.
  const std::vector<int> dims = {8, 10, 6, 2};
  const double h = 1e-3;
  const double margin = 1e-2;
  const std::array<double, 2> cw = {0.7, 1.3};
  Rng rng(123);

  int accepted = 0;
  int attempts = 0;
  while (accepted < 10 && attempts < 500) {
    ++attempts;
    FakeQuantMlp model = make_mlp(dims, 40, 40, rng);
    for (auto& layer : model.layers)
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
        layer.bias(i) = 0.05 * rng.normal();
    MatX calib(dims.front(), 32);
    for (Eigen::Index j = 0; j < calib.cols(); ++j)
      for (Eigen::Index i = 0; i < calib.rows(); ++i)
        calib(i, j) = rng.uniform();
    calibrate_scales(model, calib);
    for (auto& layer : model.layers) {
      layer.weight_quant.scale *= 1.05;
      if (layer.act_quant) layer.act_quant->scale *= 1.05;
    }

    MatX x(dims.front(), 3);
    std::vector<Label> labels(3);
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < dims.front(); ++i)
        x(i, j) = static_cast<double>(rng.uniform_below(256));
      labels[static_cast<std::size_t>(j)] =
          rng.uniform_below(2) ? Label::Attack : Label::Normal;
    }

    BatchCache cache;
    const BatchGradients g = loss_gradients(model, x, labels, cw, &cache);

    bool near_kink = false;
    for (std::size_t l = 0; l + 1 < model.layer_count() && !near_kink; ++l) {
      const double clip =
          static_cast<double>(model.layers[l].act_quant->qmax()) *
          model.layers[l].act_quant->scale;
      for (Eigen::Index j = 0; j < cache.z[l].cols() && !near_kink; ++j)
        for (Eigen::Index i = 0; i < cache.z[l].rows(); ++i) {
          if (std::abs(cache.z[l](i, j)) < margin ||
              std::abs(cache.act[l](i, j) - clip) < margin) {
            near_kink = true;
            break;
          }
        }
    }
    if (near_kink) continue;

    double grad_sq = 0.0;
    for (std::size_t l = 0; l < model.layer_count(); ++l)
      grad_sq += g.dw[l].squaredNorm() + g.db[l].squaredNorm();
    if (grad_sq < 1e-8) continue;  // nothing meaningful to compare
    ++accepted;

    auto loss_at = [&] { return loss_gradients(model, x, labels, cw).loss; };
    double num = 0.0, den_a = 0.0, den_f = 0.0;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      auto& layer = model.layers[l];
      for (Eigen::Index i = 0; i < layer.weights.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) {
          const double save = layer.weights(i, j);
          layer.weights(i, j) = save + h;
          const double lp = loss_at();
          layer.weights(i, j) = save - h;
          const double lm = loss_at();
          layer.weights(i, j) = save;
          const double fd = (lp - lm) / (2.0 * h);
          const double an = g.dw[l](i, j);
          num += (an - fd) * (an - fd);
          den_a += an * an;
          den_f += fd * fd;
        }
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
        const double save = layer.bias(i);
        layer.bias(i) = save + h;
        const double lp = loss_at();
        layer.bias(i) = save - h;
        const double lm = loss_at();
        layer.bias(i) = save;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = g.db[l](i);
        num += (an - fd) * (an - fd);
        den_a += an * an;
        den_f += fd * fd;
      }
    }
    const double rel = std::sqrt(num) /
                       std::max({std::sqrt(den_a), std::sqrt(den_f), 1e-12});
    CHECK(rel <= 1e-4);
  }
  // the kink filter must not starve the check
  CHECK(accepted == 10);
}

TEST_CASE("loss_gradients leaves the model untouched") {
  FeatureDataset data = toy_set(8, 13);
  Rng rng(6);
  FakeQuantMlp model = make_mlp({4, 6, 2}, 4, 4, rng);
  MatX calib(4, 16);
  for (Eigen::Index j = 0; j < calib.cols(); ++j)
    for (Eigen::Index i = 0; i < calib.rows(); ++i) calib(i, j) = rng.uniform();
  calibrate_scales(model, calib);
  const FakeQuantMlp before = model;

  MatX x(4, static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int j = 0; j < 4; ++j)
      x(j, static_cast<Eigen::Index>(i)) = data.sample(i)[j];
  const BatchGradients g = loss_gradients(model, x, data.labels, {1.0, 1.0});
  CHECK(std::isfinite(g.loss));
  CHECK(g.loss > 0.0);
  CHECK(same_weights(before, model));
}

TEST_CASE("chronological split keeps order and sizes") {
  FeatureDataset data;
  data.feature_dim = 2;
  for (int i = 0; i < 10; ++i) {
    FeatureVector fv;
    fv.values = VecX::Zero(2);
    fv.codes = {static_cast<std::uint8_t>(i), 0};
    data.append(fv, i % 2 ? Label::Attack : Label::Normal);
  }
  const auto [head, tail] = split_dataset(data, 0.7);
  REQUIRE(head.size() == 7);
  REQUIRE(tail.size() == 3);
  CHECK(head.sample(0)[0] == 0);
  CHECK(head.sample(6)[0] == 6);
  CHECK(tail.sample(0)[0] == 7);
  CHECK(tail.sample(2)[0] == 9);
  for (std::size_t i = 0; i < head.size(); ++i)
    CHECK(head.labels[i] == data.labels[i]);
  CHECK_THROWS_AS(split_dataset(data, 1.5), ValidationError);
}

TEST_CASE("dse row equals the train + lower + evaluate composition") {
  FeatureDataset data = toy_set(2000, 3);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 9;

  const auto rows = dse_sweep({3}, data, 0.7, {8}, cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].bits == 3);

  const auto [head, tail] = split_dataset(data, 0.7);
  Rng rng(cfg.seed);
  FakeQuantMlp model = make_mlp({4, 8, 2}, 3, 3, rng);
  train(model, head, cfg);
  const IntMlp lowered = lower(model);
  std::vector<Label> preds;
  InferScratch scratch;
  for (std::size_t i = 0; i < tail.size(); ++i)
    preds.push_back(
        infer(lowered, {tail.sample(i), static_cast<std::size_t>(4)}, scratch)
            .label);
  const ConfusionMatrix cm = confusion(preds, tail.labels);
  CHECK(rows[0].cm.tp == cm.tp);
  CHECK(rows[0].cm.fp == cm.fp);
  CHECK(rows[0].cm.tn == cm.tn);
  CHECK(rows[0].cm.fn == cm.fn);
}

TEST_CASE("dse sweep orders rows by bit width") {
  FeatureDataset data = toy_set(800, 21);
  TrainConfig cfg;
  cfg.epochs = 3;
  const auto rows = dse_sweep({8, 2, 4}, data, 0.7, {6}, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].bits == 2);
  CHECK(rows[1].bits == 4);
  CHECK(rows[2].bits == 8);
}

TEST_CASE("training rejects bad inputs") {
  FeatureDataset empty;
  empty.feature_dim = 4;
  Rng rng(8);
  FakeQuantMlp model = make_mlp({4, 6, 2}, 4, 4, rng);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(model, empty, cfg), EmptyDataset);

  FeatureDataset data = toy_set(50, 15, 6);
  CHECK_THROWS_AS(train(model, data, cfg), DimensionMismatch);

  TrainConfig bad = cfg;
  bad.epochs = 0;
  FeatureDataset ok = toy_set(50, 15, 4);
  CHECK_THROWS_AS(train(model, ok, bad), ValidationError);
  CHECK_THROWS_AS(dse_sweep({}, ok, 0.7, {6}, cfg), ValidationError);
}
