#pragma once

#include <optional>
#include <vector>

#include "canids/quant.hpp"
#include "canids/rng.hpp"
#include "canids/types.hpp"

namespace canids {

struct MlpLayer {
  MatX weights;  // out x in, real-valued master copy
  VecX bias;
  QuantSpec weight_quant;                 // signed, per-layer scale
  std::optional<QuantSpec> act_quant;     // unsigned, hidden layers only
  double act_running_max = 0.0;           // EMA state behind act_quant.scale
};

/// Fake-quantised MLP. Hidden path: a = ReLU(fq_w(W) x + b), x' = fq_act(a);
/// the final layer emits real logits (no activation quantiser). The input is
/// quantised with input_quant before layer 0.
struct FakeQuantMlp {
  std::vector<int> layer_dims;  // e.g. {40, 64, 32, 2}
  std::vector<MlpLayer> layers;
  QuantSpec input_quant;
  bool calibrated = false;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  std::size_t layer_count() const { return layers.size(); }
  int weight_bits() const { return layers.front().weight_quant.bits; }
  int act_bits() const;
};

/// He-initialised model, weights at weight_bits signed / activations at
/// act_bits unsigned, input at the shared 8-bit spec. Scales start at 1 and
/// are meaningless until calibrate_scales.
FakeQuantMlp make_mlp(const std::vector<int>& dims, int weight_bits,
                      int act_bits, Rng& rng);

// ---------------------------------------------------------------------------
// Scalar semantics shared between the training forward and the lowered
// integer engine. Both sides must round identically, so these are the only
// places where a layer's arithmetic is written out.
// ---------------------------------------------------------------------------

/// Scale of the values feeding layer l (input spec for l == 0, else the
/// previous layer's activation scale).
double layer_input_scale(const FakeQuantMlp& model, std::size_t l);

/// Combined accumulator scale s_w * s_in for layer l.
double layer_combined_scale(const FakeQuantMlp& model, std::size_t l);

/// Hidden-layer requantiser: activation code for an integer accumulator.
/// code = clamp(round_half_even(ReLU(acc * s_comb + bias) / s_act), 0, qmax).
/// Monotone non-decreasing in acc while s_comb > 0.
inline std::int64_t requant_act_code(double acc, double s_comb, double bias,
                                     const QuantSpec& act) {
  const double z = acc * s_comb + bias;
  const double a = z > 0.0 ? z : 0.0;
  return quantize(a, act);
}

/// Final-layer bias on the accumulator grid, and the logit it produces.
inline std::int64_t final_bias_code(double bias, double s_out) {
  return static_cast<std::int64_t>(round_half_even(bias / s_out));
}
inline double final_logit(double acc_plus_bias_code, double s_out) {
  return acc_plus_bias_code * s_out;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// Everything the backward pass needs, kept per layer for one batch.
struct BatchCache {
  std::vector<MatX> inputs_deq;   // dequantised input to each layer
  std::vector<MatX> weights_deq;  // fq_w(W) per layer
  std::vector<MatX> z;            // hidden pre-activations (real)
  std::vector<MatX> act;          // hidden ReLU outputs, pre-quantisation
  MatX logits;
};

/// Batched forward in the code domain: input_codes is dims[0] x B of integer
/// values held as doubles. Returns logits (out x B).
MatX forward_batch(const FakeQuantMlp& model, const MatX& input_codes,
                   BatchCache* cache = nullptr);

/// Forward for one feature vector of floats in [0,1]. Applies the input
/// quantiser, then the hidden path. Throws DimensionMismatch / NotCalibrated.
VecX forward(const FakeQuantMlp& model, const Eigen::Ref<const VecX>& features);

/// Argmax with the tie rule: equal logits classify as Normal.
Label predict_from_logits(const Eigen::Ref<const VecX>& logits);
Label predict(const FakeQuantMlp& model, const Eigen::Ref<const VecX>& features);

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Weight scales from per-layer maxabs / qmax; activation scales from the
/// observed per-layer ReLU maxima of sample_batch (dims[0] x N floats).
/// A degenerate all-zero layer gets the 1e-8 scale floor.
void calibrate_scales(FakeQuantMlp& model,
                      const Eigen::Ref<const MatX>& sample_batch);

/// Recompute weight scales from the current master weights.
void refresh_weight_scales(FakeQuantMlp& model);

/// EMA update of activation running maxima (decay 0.9 by default), then
/// refresh the activation scales. batch_max has one entry per hidden layer.
void update_act_scales(FakeQuantMlp& model, const std::vector<double>& batch_max,
                       double decay);

/// Integer weight codes of one layer, held as doubles for exact GEMM.
MatX weight_codes(const MlpLayer& layer);

inline constexpr double kScaleFloor = 1e-8;

}  // namespace canids
