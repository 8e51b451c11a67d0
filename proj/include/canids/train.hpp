#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "canids/metrics.hpp"
#include "canids/mlp.hpp"
#include "canids/types.hpp"

namespace canids {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.9;
  std::uint64_t seed = 1;
  bool class_weighting = true;  // inverse class frequency

  bool valid() const {
    return epochs > 0 && batch_size > 0 && learning_rate >= 0.0 &&
           beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 &&
           adam_eps > 0.0 && ema_decay > 0.0 && ema_decay < 1.0;
  }
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> trace;
};

/// Input codes + labels for a set of windows, stored flat (one byte per
/// feature) so multi-million-window logs stay cheap.
struct FeatureDataset {
  int feature_dim = 0;
  std::vector<std::uint8_t> codes;
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
  const std::uint8_t* sample(std::size_t i) const {
    return codes.data() + i * static_cast<std::size_t>(feature_dim);
  }
  void append(const FeatureVector& fv, Label label);
};

/// Slide a W-frame window over the stream and featurize every emission.
FeatureDataset windows_to_features(const std::vector<CanFrame>& frames,
                                   int window);

/// One batch of class-weighted cross-entropy: loss, logits, and the gradients
/// w.r.t. every master weight and bias (straight-through estimators applied at
/// both quantisers). Loss and gradients are the weighted mean over the batch.
/// Pure: never touches the model's scales or statistics.
struct BatchGradients {
  double loss = 0.0;
  double weight_sum = 0.0;  // summed class weights, for epoch aggregation
  MatX logits;
  std::vector<MatX> dw;  // per layer, same shape as the master weights
  std::vector<VecX> db;
};

BatchGradients loss_gradients(const FakeQuantMlp& model, const MatX& input_codes,
                              std::span<const Label> labels,
                              const std::array<double, 2>& class_w,
                              BatchCache* cache = nullptr);

/// Minimise class-weighted cross-entropy with Adam; gradients pass the fake
/// quantisers via the straight-through estimator. Calibrates the model first
/// if needed. Fixed seed => bit-reproducible trace and weights. A zero
/// learning rate freezes all model state (weights and quantiser statistics)
/// and just reports the loss. Throws EmptyDataset / DivergenceDetected.
TrainResult train(FakeQuantMlp& model, const FeatureDataset& data,
                  const TrainConfig& config);

struct DseRow {
  int bits = 0;
  Metrics holdout;
  ConfusionMatrix cm;
};

/// Train one model per bit width (weights and activations at `bits`, input
/// fixed at 8) on the leading `split` fraction, evaluate the lowered model on
/// the rest. Every run restarts from the same seed. Rows sorted by bits.
std::vector<DseRow> dse_sweep(const std::vector<int>& bit_widths,
                              const FeatureDataset& data, double split,
                              const std::vector<int>& hidden_dims,
                              const TrainConfig& config);

/// Chronological split helper: first fraction for training, rest for holdout.
std::pair<FeatureDataset, FeatureDataset> split_dataset(
    const FeatureDataset& data, double fraction);

}  // namespace canids
