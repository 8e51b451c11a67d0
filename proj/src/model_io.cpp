#include "canids/model_io.hpp"

#include <fstream>

#include <json.hpp>
#include <openssl/evp.h>

namespace canids {
namespace {

using json = nlohmann::ordered_json;

json spec_to_json(const QuantSpec& spec) {
  return {{"bits", spec.bits}, {"signed", spec.is_signed}, {"scale", spec.scale}};
}

QuantSpec spec_from_json(const json& j) {
  QuantSpec spec;
  spec.bits = j.at("bits").get<int>();
  spec.is_signed = j.at("signed").get<bool>();
  spec.scale = j.at("scale").get<double>();
  if (!spec.valid()) throw ValidationError("invalid quantiser spec in model file");
  return spec;
}

template <typename Matrix>
json matrix_to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << body;
  out.flush();
  if (!out) throw IoError("write error on " + path);
}

json read_json(const std::string& path, const char* format, int version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": not valid JSON: " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != format)
    throw ValidationError(path + ": not a " + std::string(format) + " file");
  if (j.value("version", 0) != version)
    throw ValidationError(path + ": unsupported version");
  return j;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto& model = ckpt.model;
  json j;
  j["format"] = "qmlp-checkpoint";
  j["version"] = 1;
  j["layer_dims"] = model.layer_dims;
  j["input_quant"] = spec_to_json(model.input_quant);
  j["calibrated"] = model.calibrated;
  j["layers"] = json::array();
  for (const auto& layer : model.layers) {
    json jl;
    jl["weights"] = matrix_to_json(layer.weights);  // row-major
    json b = json::array();
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) b.push_back(layer.bias(i));
    jl["bias"] = b;
    jl["weight_quant"] = spec_to_json(layer.weight_quant);
    jl["act_quant"] = layer.act_quant ? spec_to_json(*layer.act_quant) : json();
    jl["act_running_max"] = layer.act_running_max;
    j["layers"].push_back(jl);
  }
  const auto& m = ckpt.meta;
  j["meta"] = {{"attack", m.attack},
               {"window", m.window},
               {"seed", m.seed},
               {"epochs", m.epochs},
               {"batch_size", m.batch_size},
               {"learning_rate", m.learning_rate},
               {"split", m.split},
               {"dataset", m.dataset},
               {"final_loss", m.final_loss},
               {"final_accuracy", m.final_accuracy},
               {"holdout_f1", m.holdout_f1}};
  write_file(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  const json j = read_json(path, "qmlp-checkpoint", 1);
  try {
    Checkpoint ckpt;
    auto& model = ckpt.model;
    model.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    if (model.layer_dims.size() < 2)
      throw ValidationError(path + ": fewer than two layer dims");
    for (int d : model.layer_dims)
      if (d < 1) throw ValidationError(path + ": non-positive layer dim");
    model.input_quant = spec_from_json(j.at("input_quant"));
    model.calibrated = j.at("calibrated").get<bool>();

    const auto& layers = j.at("layers");
    if (layers.size() != model.layer_dims.size() - 1)
      throw ValidationError(path + ": layer count does not match layer_dims");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& jl = layers[l];
      MlpLayer layer;
      const Eigen::Index rows = model.layer_dims[l + 1];
      const Eigen::Index cols = model.layer_dims[l];
      const auto w = jl.at("weights").get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(rows * cols))
        throw ValidationError(path + ": weight array size mismatch");
      layer.weights.resize(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c)
          layer.weights(i, c) = w[static_cast<std::size_t>(i * cols + c)];
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (b.size() != static_cast<std::size_t>(rows))
        throw ValidationError(path + ": bias array size mismatch");
      layer.bias.resize(rows);
      for (Eigen::Index i = 0; i < rows; ++i) layer.bias(i) = b[static_cast<std::size_t>(i)];
      layer.weight_quant = spec_from_json(jl.at("weight_quant"));
      const bool hidden = l + 1 < layers.size();
      if (hidden != !jl.at("act_quant").is_null())
        throw ValidationError(path +
                              ": activation quantiser present on the wrong layer");
      if (hidden) layer.act_quant = spec_from_json(jl.at("act_quant"));
      layer.act_running_max = jl.at("act_running_max").get<double>();
      model.layers.push_back(std::move(layer));
    }

    const auto& jm = j.at("meta");
    auto& m = ckpt.meta;
    m.attack = jm.at("attack").get<std::string>();
    m.window = jm.at("window").get<int>();
    m.seed = jm.at("seed").get<std::uint64_t>();
    m.epochs = jm.at("epochs").get<int>();
    m.batch_size = jm.at("batch_size").get<int>();
    m.learning_rate = jm.at("learning_rate").get<double>();
    m.split = jm.at("split").get<double>();
    m.dataset = jm.at("dataset").get<std::string>();
    m.final_loss = jm.at("final_loss").get<double>();
    m.final_accuracy = jm.at("final_accuracy").get<double>();
    m.holdout_f1 = jm.at("holdout_f1").get<double>();
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint: " + e.what());
  }
}

void save_lowered(const IntMlp& model, const std::string& path) {
  json j;
  j["format"] = "qmlp-lowered";
  j["version"] = 1;
  j["layer_dims"] = model.layer_dims;
  j["weight_bits"] = model.weight_bits;
  j["act_bits"] = model.act_bits;
  j["input_quant"] = spec_to_json(model.input_quant);
  j["window"] = model.window;
  j["attack"] = model.attack;
  j["source_checkpoint_sha256"] = model.source_checkpoint_sha256;

  j["hidden"] = json::array();
  for (const auto& hl : model.hidden) {
    json jh;
    jh["weights"] = matrix_to_json(hl.weights);
    jh["thresholds"] = hl.thresholds;
    json jb = json::array();
    for (const auto& b : hl.bounds) jb.push_back({{"min", b.min}, {"max", b.max}});
    jh["bounds"] = jb;
    j["hidden"].push_back(jh);
  }

  json jf;
  jf["weights"] = matrix_to_json(model.final_layer.weights);
  jf["bias"] = model.final_layer.bias;
  jf["output_scale"] = model.final_layer.output_scale;
  json jb = json::array();
  for (const auto& b : model.final_layer.bounds)
    jb.push_back({{"min", b.min}, {"max", b.max}});
  jf["bounds"] = jb;
  j["final"] = jf;

  write_file(path, j.dump(2) + "\n");
}

IntMlp load_lowered(const std::string& path) {
  const json j = read_json(path, "qmlp-lowered", 1);
  try {
    IntMlp model;
    model.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    if (model.layer_dims.size() < 2)
      throw ValidationError(path + ": fewer than two layer dims");
    model.weight_bits = j.at("weight_bits").get<int>();
    model.act_bits = j.at("act_bits").get<int>();
    model.input_quant = spec_from_json(j.at("input_quant"));
    model.window = j.at("window").get<int>();
    model.attack = j.at("attack").get<std::string>();
    model.source_checkpoint_sha256 =
        j.at("source_checkpoint_sha256").get<std::string>();

    const QuantSpec wspec{model.weight_bits, true, 1.0};
    const std::size_t n_layers = model.layer_dims.size() - 1;
    const auto& hidden = j.at("hidden");
    if (hidden.size() != n_layers - 1)
      throw ValidationError(path + ": hidden layer count does not match layer_dims");

    auto load_weights = [&](const json& src, Eigen::Index rows, Eigen::Index cols,
                            auto& dst) {
      const auto w = src.get<std::vector<std::int64_t>>();
      if (w.size() != static_cast<std::size_t>(rows * cols))
        throw ValidationError(path + ": weight array size mismatch");
      dst.resize(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) {
          const std::int64_t v = w[static_cast<std::size_t>(i * cols + c)];
          if (v < wspec.qmin() || v > wspec.qmax())
            throw ValidationError(path + ": weight code out of range");
          dst(i, c) = static_cast<std::int32_t>(v);
        }
    };

    const std::int64_t n_thr =
        n_layers > 1 ? (std::int64_t{1} << model.act_bits) - 1 : 0;
    for (std::size_t l = 0; l + 1 < n_layers; ++l) {
      const auto& jh = hidden[l];
      IntHiddenLayer hl;
      load_weights(jh.at("weights"), model.layer_dims[l + 1], model.layer_dims[l],
                   hl.weights);
      hl.thresholds = jh.at("thresholds").get<std::vector<std::vector<std::int64_t>>>();
      if (hl.thresholds.size() != static_cast<std::size_t>(hl.weights.rows()))
        throw ValidationError(path + ": one threshold table per neuron expected");
      for (const auto& t : hl.thresholds) {
        if (t.size() != static_cast<std::size_t>(n_thr))
          throw ValidationError(path + ": threshold table length mismatch");
        if (!std::is_sorted(t.begin(), t.end()))
          throw ValidationError(path + ": threshold table not sorted");
      }
      for (const auto& jb : jh.at("bounds"))
        hl.bounds.push_back({jb.at("min").get<std::int64_t>(),
                             jb.at("max").get<std::int64_t>()});
      if (hl.bounds.size() != static_cast<std::size_t>(hl.weights.rows()))
        throw ValidationError(path + ": one accumulator bound per neuron expected");
      model.hidden.push_back(std::move(hl));
    }

    const auto& jf = j.at("final");
    load_weights(jf.at("weights"), model.layer_dims[n_layers],
                 model.layer_dims[n_layers - 1], model.final_layer.weights);
    model.final_layer.bias = jf.at("bias").get<std::vector<std::int64_t>>();
    if (model.final_layer.bias.size() !=
        static_cast<std::size_t>(model.final_layer.weights.rows()))
      throw ValidationError(path + ": final bias size mismatch");
    model.final_layer.output_scale = jf.at("output_scale").get<double>();
    if (!(model.final_layer.output_scale > 0.0))
      throw ValidationError(path + ": output scale must be positive");
    for (const auto& jb : jf.at("bounds"))
      model.final_layer.bounds.push_back(
          {jb.at("min").get<std::int64_t>(), jb.at("max").get<std::int64_t>()});
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed lowered model: " + e.what());
  }
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 init failed");
  }
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    if (EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount())) != 1) {
      EVP_MD_CTX_free(ctx);
      throw Error("SHA-256 update failed");
    }
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 final failed");
  }
  EVP_MD_CTX_free(ctx);

  static const char* hex = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace canids
