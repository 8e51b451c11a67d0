#include "canids/lower.hpp"

#include <algorithm>
#include <string>

namespace canids {
namespace {

struct CodeRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

/// Per-neuron accumulator interval given the input code range.
template <typename WeightMatrix>
std::vector<AccumulatorBound> neuron_bounds(const WeightMatrix& w, CodeRange in) {
  std::vector<AccumulatorBound> bounds(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    std::int64_t lo = 0, hi = 0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const std::int64_t c = static_cast<std::int64_t>(w(i, j));
      if (c >= 0) {
        lo += c * in.lo;
        hi += c * in.hi;
      } else {
        lo += c * in.hi;
        hi += c * in.lo;
      }
    }
    bounds[static_cast<std::size_t>(i)] = {lo, hi};
  }
  return bounds;
}

/// Smallest accumulator in [b.min, b.max] whose requantised code reaches k,
/// or b.max + 1 when the neuron never gets there. Binary search over the
/// monotone code function; no closed-form rounding.
std::vector<std::int64_t> derive_thresholds(const AccumulatorBound& b,
                                            double s_comb, double bias,
                                            const QuantSpec& act) {
  const std::int64_t n_thr = act.qmax();
  std::vector<std::int64_t> thr(static_cast<std::size_t>(n_thr));
  const auto code_at = [&](std::int64_t a) {
    return requant_act_code(static_cast<double>(a), s_comb, bias, act);
  };
  for (std::int64_t k = 1; k <= n_thr; ++k) {
    auto& slot = thr[static_cast<std::size_t>(k - 1)];
    if (code_at(b.max) < k) {
      slot = b.max + 1;
      continue;
    }
    if (code_at(b.min) >= k) {
      slot = b.min;
      continue;
    }
    std::int64_t lo = b.min, hi = b.max;  // code(lo) < k <= code(hi)
    while (lo + 1 < hi) {
      const std::int64_t mid = lo + (hi - lo) / 2;
      if (code_at(mid) >= k)
        hi = mid;
      else
        lo = mid;
    }
    slot = hi;
  }
  return thr;
}

}  // namespace

IntMlp lower(const FakeQuantMlp& model) {
  if (!model.calibrated) throw NotCalibrated("cannot lower an uncalibrated model");
  if (model.weight_bits() > 16)
    throw ValidationError("lowering supports weight widths up to 16 bits");
  for (const auto& layer : model.layers)
    if (layer.act_quant && layer.act_quant->bits > 16)
      throw ValidationError("lowering supports activation widths up to 16 bits");

  IntMlp out;
  out.layer_dims = model.layer_dims;
  out.weight_bits = model.weight_bits();
  out.act_bits = model.act_bits();
  out.input_quant = model.input_quant;

  CodeRange in{model.input_quant.qmin(), model.input_quant.qmax()};
  const std::size_t n_layers = model.layer_count();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = model.layers[l];
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        wq(layer.weights.rows(), layer.weights.cols());
    for (Eigen::Index i = 0; i < wq.rows(); ++i)
      for (Eigen::Index j = 0; j < wq.cols(); ++j)
        wq(i, j) = static_cast<std::int32_t>(
            quantize(layer.weights(i, j), layer.weight_quant));

    auto bounds = neuron_bounds(wq, in);
    const double s_comb = layer_combined_scale(model, l);

    if (l + 1 < n_layers) {
      const QuantSpec& act = *layer.act_quant;
      IntHiddenLayer hl;
      hl.weights = std::move(wq);
      hl.bounds = bounds;
      hl.thresholds.reserve(bounds.size());
      for (Eigen::Index i = 0; i < hl.weights.rows(); ++i)
        hl.thresholds.push_back(derive_thresholds(
            bounds[static_cast<std::size_t>(i)], s_comb, layer.bias(i), act));
      out.hidden.push_back(std::move(hl));
      in = {0, act.qmax()};
    } else {
      IntFinalLayer fl;
      fl.weights = std::move(wq);
      fl.output_scale = s_comb;
      fl.bias.resize(static_cast<std::size_t>(layer.bias.size()));
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
        fl.bias[static_cast<std::size_t>(i)] = final_bias_code(layer.bias(i), s_comb);
        bounds[static_cast<std::size_t>(i)].min += fl.bias[static_cast<std::size_t>(i)];
        bounds[static_cast<std::size_t>(i)].max += fl.bias[static_cast<std::size_t>(i)];
      }
      fl.bounds = std::move(bounds);
      out.final_layer = std::move(fl);
    }
  }
  return out;
}

IntVerdict infer(const IntMlp& model, std::span<const std::uint8_t> codes,
                 InferScratch& scratch) {
  if (static_cast<int>(codes.size()) != model.input_dim())
    throw DimensionMismatch("input code length " + std::to_string(codes.size()) +
                            ", model expects " + std::to_string(model.input_dim()));

  auto& cur = scratch.a;
  auto& next = scratch.b;
  cur.assign(codes.begin(), codes.end());

  for (const auto& hl : model.hidden) {
    const Eigen::Index rows = hl.weights.rows();
    const Eigen::Index cols = hl.weights.cols();
    next.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
      const std::int32_t* w = hl.weights.data() + i * cols;
      std::int64_t acc = 0;
      for (Eigen::Index j = 0; j < cols; ++j) acc += w[j] * cur[static_cast<std::size_t>(j)];
      const auto& thr = hl.thresholds[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(i)] =
          std::upper_bound(thr.begin(), thr.end(), acc) - thr.begin();
    }
    std::swap(cur, next);
  }

  const auto& fl = model.final_layer;
  const Eigen::Index cols = fl.weights.cols();
  std::int64_t logit[2] = {0, 0};
  for (Eigen::Index i = 0; i < 2; ++i) {
    const std::int32_t* w = fl.weights.data() + i * cols;
    std::int64_t acc = fl.bias[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < cols; ++j) acc += w[j] * cur[static_cast<std::size_t>(j)];
    logit[i] = acc;
  }

  IntVerdict v;
  v.logit_normal = logit[0];
  v.logit_attack = logit[1];
  v.label = logit[1] > logit[0] ? Label::Attack : Label::Normal;
  return v;
}

IntVerdict infer(const IntMlp& model, std::span<const std::uint8_t> codes) {
  InferScratch scratch;
  return infer(model, codes, scratch);
}

std::vector<AccumulatorBound> accumulator_bounds(const IntMlp& model) {
  std::vector<AccumulatorBound> layer_bounds;
  CodeRange in{model.input_quant.qmin(), model.input_quant.qmax()};
  const QuantSpec act{model.act_bits > 0 ? model.act_bits : 2, false, 1.0};

  for (const auto& hl : model.hidden) {
    auto nb = neuron_bounds(hl.weights, in);
    AccumulatorBound agg{nb.front().min, nb.front().max};
    for (const auto& b : nb) {
      agg.min = std::min(agg.min, b.min);
      agg.max = std::max(agg.max, b.max);
    }
    layer_bounds.push_back(agg);
    in = {0, act.qmax()};
  }

  auto nb = neuron_bounds(model.final_layer.weights, in);
  for (std::size_t i = 0; i < nb.size(); ++i) {
    nb[i].min += model.final_layer.bias[i];
    nb[i].max += model.final_layer.bias[i];
  }
  AccumulatorBound agg{nb.front().min, nb.front().max};
  for (const auto& b : nb) {
    agg.min = std::min(agg.min, b.min);
    agg.max = std::max(agg.max, b.max);
  }
  layer_bounds.push_back(agg);
  return layer_bounds;
}

EquivalenceReport verify_equivalence(const FakeQuantMlp& model,
                                     const IntMlp& int_model,
                                     std::size_t n_samples, std::uint64_t seed) {
  EquivalenceReport report;
  report.samples = n_samples;
  if (n_samples == 0) return report;

  const int dim = model.input_dim();
  Rng rng(seed);
  std::vector<std::uint8_t> codes(static_cast<std::size_t>(dim));
  MatX col(dim, 1);
  InferScratch scratch;
  const double s_out = int_model.final_layer.output_scale;

  for (std::size_t s = 0; s < n_samples; ++s) {
    for (int i = 0; i < dim; ++i) {
      codes[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(rng.uniform_below(256));
      col(i, 0) = static_cast<double>(codes[static_cast<std::size_t>(i)]);
    }
    const MatX logits = forward_batch(model, col);
    const Label ref = predict_from_logits(logits.col(0));
    const IntVerdict v = infer(int_model, codes, scratch);

    const double d0 =
        std::abs(logits(0, 0) / s_out - static_cast<double>(v.logit_normal));
    const double d1 =
        std::abs(logits(1, 0) / s_out - static_cast<double>(v.logit_attack));
    report.max_scaled_logit_diff =
        std::max({report.max_scaled_logit_diff, d0, d1});

    if (v.label != ref) {
      ++report.mismatches;
      if (report.first_witness.empty()) report.first_witness = codes;
    }
  }
  return report;
}

}  // namespace canids
