#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "canids/mlp.hpp"
#include "canids/types.hpp"

namespace canids {

struct AccumulatorBound {
  std::int64_t min = 0;
  std::int64_t max = 0;
};

/// One lowered hidden layer: integer weight codes plus per-neuron sorted
/// threshold tables. The output code of a neuron is the number of thresholds
/// <= accumulator; bias and all scales are absorbed into the thresholds.
struct IntHiddenLayer {
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      weights;
  std::vector<std::vector<std::int64_t>> thresholds;  // [neuron][level-1]
  std::vector<AccumulatorBound> bounds;               // per neuron
};

/// Final layer: integer weights + integer bias in the accumulator domain.
/// output_scale is the positive real scale of one integer logit unit; the
/// class decision compares the integer logits directly.
struct IntFinalLayer {
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      weights;
  std::vector<std::int64_t> bias;
  double output_scale = 1.0;
  std::vector<AccumulatorBound> bounds;  // per neuron, bias included
};

/// Integer-only deployable model. Immutable after lowering; inference is pure
/// and safe to call concurrently.
struct IntMlp {
  std::vector<int> layer_dims;
  std::vector<IntHiddenLayer> hidden;
  IntFinalLayer final_layer;
  int weight_bits = 4;
  int act_bits = 4;
  QuantSpec input_quant;

  // provenance
  int window = kDefaultWindow;
  std::string attack;
  std::string source_checkpoint_sha256;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
};

/// Lower a calibrated, trained model: weights become their integer codes and
/// each hidden neuron gets threshold tables derived by exact binary search of
/// the monotone requantiser over the neuron's reachable accumulator range.
/// Throws NotCalibrated; requires weight/act bits <= 16.
IntMlp lower(const FakeQuantMlp& model);

struct InferScratch {
  std::vector<std::int64_t> a;
  std::vector<std::int64_t> b;
};

struct IntVerdict {
  Label label = Label::Normal;
  std::int64_t logit_normal = 0;
  std::int64_t logit_attack = 0;
};

/// Integer-only inference. Hidden path is multiplication-accumulate plus
/// threshold ranking; no floating-point operation anywhere on it. Equal
/// integer logits classify as Normal.
IntVerdict infer(const IntMlp& model, std::span<const std::uint8_t> codes,
                 InferScratch& scratch);
IntVerdict infer(const IntMlp& model, std::span<const std::uint8_t> codes);

/// Interval arithmetic over the input code ranges: per-layer accumulator
/// bounds covering every reachable value (final layer includes the bias).
std::vector<AccumulatorBound> accumulator_bounds(const IntMlp& model);

struct EquivalenceReport {
  std::size_t samples = 0;
  std::size_t mismatches = 0;
  double max_scaled_logit_diff = 0.0;
  std::vector<std::uint8_t> first_witness;  // input codes of first mismatch
};

/// Sample n random 8-bit input vectors and compare the integer verdict with
/// the fake-quant forward argmax; also tracks the worst logit discrepancy in
/// scaled units. The lowering correctness gate.
EquivalenceReport verify_equivalence(const FakeQuantMlp& model,
                                     const IntMlp& int_model,
                                     std::size_t n_samples,
                                     std::uint64_t seed);

}  // namespace canids
