#include "canids/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "canids/lower.hpp"
#include "canids/window.hpp"

namespace canids {

void FeatureDataset::append(const FeatureVector& fv, Label label) {
  const int dim = static_cast<int>(fv.codes.size());
  if (feature_dim == 0) feature_dim = dim;
  if (dim != feature_dim)
    throw DimensionMismatch("feature vector length changed mid-dataset");
  codes.insert(codes.end(), fv.codes.begin(), fv.codes.end());
  labels.push_back(label);
}

FeatureDataset windows_to_features(const std::vector<CanFrame>& frames,
                                   int window) {
  FeatureDataset ds;
  WindowBuffer buf(window);
  for (const auto& frame : frames) {
    if (auto w = buf.push(frame)) ds.append(featurize(*w), w->label());
  }
  return ds;
}

std::pair<FeatureDataset, FeatureDataset> split_dataset(
    const FeatureDataset& data, double fraction) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ValidationError("split fraction must lie in [0, 1]");
  const std::size_t n_train =
      static_cast<std::size_t>(static_cast<double>(data.size()) * fraction);
  FeatureDataset train, holdout;
  train.feature_dim = holdout.feature_dim = data.feature_dim;
  const std::size_t dim = static_cast<std::size_t>(data.feature_dim);
  train.codes.assign(data.codes.begin(), data.codes.begin() + n_train * dim);
  train.labels.assign(data.labels.begin(), data.labels.begin() + n_train);
  holdout.codes.assign(data.codes.begin() + n_train * dim, data.codes.end());
  holdout.labels.assign(data.labels.begin() + n_train, data.labels.end());
  return {std::move(train), std::move(holdout)};
}

BatchGradients loss_gradients(const FakeQuantMlp& model, const MatX& input_codes,
                              std::span<const Label> labels,
                              const std::array<double, 2>& class_w,
                              BatchCache* caller_cache) {
  const Eigen::Index bsz = input_codes.cols();
  if (labels.size() != static_cast<std::size_t>(bsz))
    throw LengthMismatch("one label per batch column expected");
  if (bsz == 0) throw EmptyDataset("empty batch");

  BatchCache local_cache;
  BatchCache& cache = caller_cache ? *caller_cache : local_cache;
  BatchGradients out;
  out.logits = forward_batch(model, input_codes, &cache);

  MatX dlogits(2, bsz);
  for (Eigen::Index j = 0; j < bsz; ++j) {
    const int y = static_cast<int>(labels[static_cast<std::size_t>(j)]);
    const double w = class_w[static_cast<std::size_t>(y)];
    const double m = std::max(out.logits(0, j), out.logits(1, j));
    const double e0 = std::exp(out.logits(0, j) - m);
    const double e1 = std::exp(out.logits(1, j) - m);
    out.loss += w * (m + std::log(e0 + e1) - out.logits(y, j));
    out.weight_sum += w;
    dlogits(0, j) = w * (e0 / (e0 + e1) - (y == 0 ? 1.0 : 0.0));
    dlogits(1, j) = w * (e1 / (e0 + e1) - (y == 1 ? 1.0 : 0.0));
  }
  out.loss /= out.weight_sum;
  dlogits /= out.weight_sum;

  const std::size_t n_layers = model.layer_count();
  out.dw.resize(n_layers);
  out.db.resize(n_layers);
  MatX delta = std::move(dlogits);
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& layer = model.layers[li];
    if (li + 1 < n_layers) {
      // delta arrives w.r.t. fake_quant_act(a); gate by the STE clip range,
      // then by ReLU
      const auto& act = *layer.act_quant;
      const MatX& a = cache.act[li];
      const MatX& z = cache.z[li];
      for (Eigen::Index j = 0; j < delta.cols(); ++j)
        for (Eigen::Index i = 0; i < delta.rows(); ++i)
          if (!ste_in_range(a(i, j), act) || z(i, j) <= 0.0) delta(i, j) = 0.0;
    }
    out.dw[li] = delta * cache.inputs_deq[li].transpose();
    out.db[li] = delta.rowwise().sum();
    for (Eigen::Index j = 0; j < out.dw[li].cols(); ++j)
      for (Eigen::Index i = 0; i < out.dw[li].rows(); ++i)
        if (!ste_in_range(layer.weights(i, j), layer.weight_quant))
          out.dw[li](i, j) = 0.0;
    if (li > 0) delta = cache.weights_deq[li].transpose() * delta;
  }
  return out;
}

namespace {

struct AdamState {
  MatX mw, vw;
  VecX mb, vb;
};

MatX batch_codes(const FeatureDataset& data, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end) {
  MatX m(data.feature_dim, static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) {
    const std::uint8_t* src = data.sample(order[k]);
    for (int i = 0; i < data.feature_dim; ++i)
      m(i, static_cast<Eigen::Index>(k - begin)) = static_cast<double>(src[i]);
  }
  return m;
}

}  // namespace

TrainResult train(FakeQuantMlp& model, const FeatureDataset& data,
                  const TrainConfig& config) {
  if (!config.valid()) throw ValidationError("bad training configuration");
  if (data.size() == 0) throw EmptyDataset("no training samples");
  if (data.feature_dim != model.input_dim())
    throw DimensionMismatch("dataset feature dim does not match model input");

  if (!model.calibrated) {
    const std::size_t n_cal = std::min<std::size_t>(data.size(), 1024);
    MatX sample(data.feature_dim, static_cast<Eigen::Index>(n_cal));
    const double s_in = model.input_quant.scale;
    for (std::size_t k = 0; k < n_cal; ++k) {
      const std::uint8_t* src = data.sample(k);
      for (int i = 0; i < data.feature_dim; ++i)
        sample(i, static_cast<Eigen::Index>(k)) = src[i] * s_in;
    }
    calibrate_scales(model, sample);
  }

  // inverse class frequency, normalised so a balanced set gets weight 1
  std::array<double, 2> class_w{1.0, 1.0};
  if (config.class_weighting) {
    std::size_t counts[2] = {0, 0};
    for (Label y : data.labels) ++counts[static_cast<int>(y)];
    const double total = static_cast<double>(data.size());
    for (std::size_t c = 0; c < 2; ++c)
      if (counts[c] > 0) class_w[c] = total / (2.0 * static_cast<double>(counts[c]));
  }

  const std::size_t n_layers = model.layer_count();
  std::vector<AdamState> adam(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    adam[l].mw = MatX::Zero(model.layers[l].weights.rows(),
                            model.layers[l].weights.cols());
    adam[l].vw = adam[l].mw;
    adam[l].mb = VecX::Zero(model.layers[l].bias.size());
    adam[l].vb = adam[l].mb;
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  const bool frozen = config.learning_rate == 0.0;

  TrainResult result;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (!frozen) rng.shuffle(order);

    double loss_num = 0.0, loss_den = 0.0;
    std::size_t correct = 0;
    BatchCache cache;
    std::vector<Label> batch_labels;

    for (std::size_t begin = 0; begin < data.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(config.batch_size), data.size());
      const MatX x = batch_codes(data, order, begin, end);
      batch_labels.resize(end - begin);
      for (std::size_t k = begin; k < end; ++k)
        batch_labels[k - begin] = data.labels[order[k]];

      const BatchGradients g = loss_gradients(model, x, batch_labels, class_w, &cache);
      loss_num += g.loss * g.weight_sum;
      loss_den += g.weight_sum;
      for (Eigen::Index j = 0; j < g.logits.cols(); ++j) {
        const Label pred =
            g.logits(1, j) > g.logits(0, j) ? Label::Attack : Label::Normal;
        if (pred == batch_labels[static_cast<std::size_t>(j)]) ++correct;
      }
      if (frozen) continue;

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t li = 0; li < n_layers; ++li) {
        auto& layer = model.layers[li];
        auto& st = adam[li];
        st.mw = config.beta1 * st.mw + (1.0 - config.beta1) * g.dw[li];
        st.vw = config.beta2 * st.vw +
                (1.0 - config.beta2) * g.dw[li].cwiseProduct(g.dw[li]);
        st.mb = config.beta1 * st.mb + (1.0 - config.beta1) * g.db[li];
        st.vb = config.beta2 * st.vb +
                (1.0 - config.beta2) * g.db[li].cwiseProduct(g.db[li]);
        layer.weights.array() -=
            config.learning_rate * (st.mw.array() / c1) /
            ((st.vw.array() / c2).sqrt() + config.adam_eps);
        layer.bias.array() -= config.learning_rate * (st.mb.array() / c1) /
                              ((st.vb.array() / c2).sqrt() + config.adam_eps);
      }

      refresh_weight_scales(model);
      std::vector<double> batch_max;
      batch_max.reserve(n_layers - 1);
      for (std::size_t li = 0; li + 1 < n_layers; ++li)
        batch_max.push_back(cache.act[li].size() > 0 ? cache.act[li].maxCoeff() : 0.0);
      update_act_scales(model, batch_max, config.ema_decay);
    }

    EpochStats stats;
    stats.loss = loss_den > 0.0 ? loss_num / loss_den : 0.0;
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (!std::isfinite(stats.loss))
      throw DivergenceDetected("loss diverged at epoch " + std::to_string(epoch));
    result.trace.push_back(stats);
  }
  return result;
}

std::vector<DseRow> dse_sweep(const std::vector<int>& bit_widths,
                              const FeatureDataset& data, double split,
                              const std::vector<int>& hidden_dims,
                              const TrainConfig& config) {
  if (bit_widths.empty()) throw ValidationError("empty bit-width list");
  auto [train_set, holdout] = split_dataset(data, split);
  if (train_set.size() == 0 || holdout.size() == 0)
    throw EmptyDataset("split leaves an empty train or holdout set");

  std::vector<int> dims;
  dims.push_back(data.feature_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(2);

  std::vector<int> widths = bit_widths;
  std::sort(widths.begin(), widths.end());

  std::vector<DseRow> rows;
  for (int bits : widths) {
    Rng rng(config.seed);
    FakeQuantMlp model = make_mlp(dims, bits, bits, rng);
    train(model, train_set, config);
    const IntMlp lowered = lower(model);

    std::vector<Label> preds(holdout.size());
    InferScratch scratch;
    for (std::size_t i = 0; i < holdout.size(); ++i) {
      const auto v = infer(
          lowered,
          std::span<const std::uint8_t>(holdout.sample(i),
                                        static_cast<std::size_t>(holdout.feature_dim)),
          scratch);
      preds[i] = v.label;
    }
    DseRow row;
    row.bits = bits;
    row.cm = confusion(preds, holdout.labels);
    row.holdout = metrics(row.cm);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace canids
