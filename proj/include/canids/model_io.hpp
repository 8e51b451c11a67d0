#pragma once

#include <cstdint>
#include <string>

#include "canids/lower.hpp"
#include "canids/mlp.hpp"

namespace canids {

/// Checkpoint metadata recorded with a trained model. No wall-clock fields:
/// identical runs must produce byte-identical files.
struct TrainMeta {
  std::string attack;  // "dos" / "fuzzy"
  int window = kDefaultWindow;
  std::uint64_t seed = 1;
  int epochs = 0;
  int batch_size = 0;
  double learning_rate = 0.0;
  double split = 0.7;
  std::string dataset;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double holdout_f1 = -1.0;  // < 0: not evaluated
};

struct Checkpoint {
  FakeQuantMlp model;
  TrainMeta meta;
};

/// Versioned JSON, decimal numbers only (no binary blobs). Doubles are
/// written shortest-roundtrip, so save/load reproduces the model exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_lowered(const IntMlp& model, const std::string& path);
IntMlp load_lowered(const std::string& path);

/// Hex SHA-256 of a file's bytes; checkpoint provenance in lowered models.
std::string sha256_file(const std::string& path);

}  // namespace canids
