#include "canids/mlp.hpp"

#include <cmath>
#include <string>

namespace canids {

int FakeQuantMlp::act_bits() const {
  for (const auto& layer : layers)
    if (layer.act_quant) return layer.act_quant->bits;
  return 0;
}

FakeQuantMlp make_mlp(const std::vector<int>& dims, int weight_bits,
                      int act_bits, Rng& rng) {
  if (dims.size() < 2) throw ValidationError("need at least input and output dims");
  for (int d : dims)
    if (d < 1) throw ValidationError("layer dims must be >= 1");
  if (weight_bits < 2 || weight_bits > 48 || act_bits < 2 || act_bits > 48)
    throw ValidationError("bit widths must be in [2, 48]");

  FakeQuantMlp model;
  model.layer_dims = dims;
  model.input_quant = input_quant_spec();
  const std::size_t n_layers = dims.size() - 1;
  model.layers.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& layer = model.layers[l];
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    layer.weights.resize(fan_out, fan_in);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) layer.weights(i, j) = stddev * rng.normal();
    layer.bias = VecX::Zero(fan_out);
    layer.weight_quant = QuantSpec{weight_bits, true, 1.0};
    // hidden layers quantise their ReLU output; the final layer emits real logits
    if (l + 1 < n_layers) layer.act_quant = QuantSpec{act_bits, false, 1.0};
  }
  return model;
}

double layer_input_scale(const FakeQuantMlp& model, std::size_t l) {
  if (l == 0) return model.input_quant.scale;
  return model.layers[l - 1].act_quant->scale;
}

double layer_combined_scale(const FakeQuantMlp& model, std::size_t l) {
  return model.layers[l].weight_quant.scale * layer_input_scale(model, l);
}

MatX weight_codes(const MlpLayer& layer) {
  MatX codes(layer.weights.rows(), layer.weights.cols());
  for (Eigen::Index j = 0; j < codes.cols(); ++j)
    for (Eigen::Index i = 0; i < codes.rows(); ++i)
      codes(i, j) =
          static_cast<double>(quantize(layer.weights(i, j), layer.weight_quant));
  return codes;
}

MatX forward_batch(const FakeQuantMlp& model, const MatX& input_codes,
                   BatchCache* cache) {
  if (!model.calibrated) throw NotCalibrated("scales not calibrated");
  if (input_codes.rows() != model.input_dim())
    throw DimensionMismatch("input rows " + std::to_string(input_codes.rows()) +
                            ", model expects " +
                            std::to_string(model.input_dim()));

  const std::size_t n_layers = model.layer_count();
  const Eigen::Index batch = input_codes.cols();
  if (cache) {
    cache->inputs_deq.assign(n_layers, MatX());
    cache->weights_deq.assign(n_layers, MatX());
    cache->z.assign(n_layers - 1, MatX());
    cache->act.assign(n_layers - 1, MatX());
  }

  // Codes stay integers held in doubles, so the GEMM below is exact: every
  // partial sum fits a 53-bit mantissa for any supported dims/bit widths.
  MatX x_codes = input_codes;
  double s_in = model.input_quant.scale;

  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = model.layers[l];
    const MatX wq = weight_codes(layer);
    const double s_w = layer.weight_quant.scale;
    const double s_comb = s_w * s_in;
    const MatX acc = wq * x_codes;
    const Eigen::Index rows = acc.rows();

    if (cache) {
      cache->inputs_deq[l] = x_codes * s_in;
      cache->weights_deq[l] = wq * s_w;
    }

    if (l + 1 < n_layers) {
      const QuantSpec& act = *layer.act_quant;
      MatX z(rows, batch), a(rows, batch), next(rows, batch);
      for (Eigen::Index j = 0; j < batch; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
          // Mirrors requant_act_code exactly; kept inline so z and the
          // pre-quantisation activation land in the cache.
          const double zz = acc(i, j) * s_comb + layer.bias(i);
          const double aa = zz > 0.0 ? zz : 0.0;
          z(i, j) = zz;
          a(i, j) = aa;
          next(i, j) = static_cast<double>(quantize(aa, act));
        }
      }
      if (cache) {
        cache->z[l] = std::move(z);
        cache->act[l] = std::move(a);
      }
      x_codes = std::move(next);
      s_in = act.scale;
    } else {
      const double s_out = s_comb;
      MatX logits(rows, batch);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double bc = static_cast<double>(final_bias_code(layer.bias(i), s_out));
        for (Eigen::Index j = 0; j < batch; ++j)
          logits(i, j) = final_logit(acc(i, j) + bc, s_out);
      }
      if (cache) cache->logits = logits;
      return logits;
    }
  }
  throw ValidationError("model has no layers");
}

VecX forward(const FakeQuantMlp& model, const Eigen::Ref<const VecX>& features) {
  if (features.size() != model.input_dim())
    throw DimensionMismatch("feature length " + std::to_string(features.size()) +
                            ", model expects " +
                            std::to_string(model.input_dim()));
  MatX codes(features.size(), 1);
  for (Eigen::Index i = 0; i < features.size(); ++i)
    codes(i, 0) = static_cast<double>(quantize(features(i), model.input_quant));
  return forward_batch(model, codes).col(0);
}

Label predict_from_logits(const Eigen::Ref<const VecX>& logits) {
  if (logits.size() != 2) throw DimensionMismatch("want exactly 2 logits");
  return logits(1) > logits(0) ? Label::Attack : Label::Normal;
}

Label predict(const FakeQuantMlp& model, const Eigen::Ref<const VecX>& features) {
  return predict_from_logits(forward(model, features));
}

void refresh_weight_scales(FakeQuantMlp& model) {
  for (auto& layer : model.layers) {
    const double maxabs = layer.weights.cwiseAbs().maxCoeff();
    const double qmax = static_cast<double>(layer.weight_quant.qmax());
    layer.weight_quant.scale = std::max(maxabs / qmax, kScaleFloor);
  }
}

void calibrate_scales(FakeQuantMlp& model,
                      const Eigen::Ref<const MatX>& sample_batch) {
  if (sample_batch.cols() == 0) throw EmptyDataset("empty calibration batch");
  if (sample_batch.rows() != model.input_dim())
    throw DimensionMismatch("calibration batch rows do not match input dim");

  refresh_weight_scales(model);

  MatX x_codes(sample_batch.rows(), sample_batch.cols());
  for (Eigen::Index j = 0; j < sample_batch.cols(); ++j)
    for (Eigen::Index i = 0; i < sample_batch.rows(); ++i)
      x_codes(i, j) =
          static_cast<double>(quantize(sample_batch(i, j), model.input_quant));
  double s_in = model.input_quant.scale;

  const std::size_t n_layers = model.layer_count();
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    auto& layer = model.layers[l];
    const MatX wq = weight_codes(layer);
    const double s_comb = layer.weight_quant.scale * s_in;
    const MatX acc = wq * x_codes;

    double batch_max = 0.0;
    MatX a(acc.rows(), acc.cols());
    for (Eigen::Index j = 0; j < acc.cols(); ++j) {
      for (Eigen::Index i = 0; i < acc.rows(); ++i) {
        const double zz = acc(i, j) * s_comb + layer.bias(i);
        const double aa = zz > 0.0 ? zz : 0.0;
        a(i, j) = aa;
        if (aa > batch_max) batch_max = aa;
      }
    }
    auto& act = *layer.act_quant;
    layer.act_running_max = batch_max;
    act.scale =
        std::max(batch_max / static_cast<double>(act.qmax()), kScaleFloor);

    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        a(i, j) = static_cast<double>(quantize(a(i, j), act));
    x_codes = std::move(a);
    s_in = act.scale;
  }
  model.calibrated = true;
}

void update_act_scales(FakeQuantMlp& model, const std::vector<double>& batch_max,
                       double decay) {
  std::size_t h = 0;
  for (auto& layer : model.layers) {
    if (!layer.act_quant) continue;
    if (h >= batch_max.size())
      throw LengthMismatch("one batch maximum per hidden layer expected");
    layer.act_running_max =
        decay * layer.act_running_max + (1.0 - decay) * batch_max[h];
    layer.act_quant->scale =
        std::max(layer.act_running_max / static_cast<double>(layer.act_quant->qmax()),
                 kScaleFloor);
    ++h;
  }
  if (h != batch_max.size())
    throw LengthMismatch("one batch maximum per hidden layer expected");
}

}  // namespace canids
