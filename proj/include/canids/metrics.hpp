#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "canids/parse.hpp"
#include "canids/types.hpp"

namespace canids {

struct IntMlp;

/// Attack is the positive class throughout.
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// Values in [0,1]; an empty denominator yields 0 with the defined flag
/// cleared.
struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fnr = 0.0;
  bool precision_defined = false;
  bool recall_defined = false;
  bool f1_defined = false;
  bool fnr_defined = false;
};

ConfusionMatrix confusion(std::span<const Label> predictions,
                          std::span<const Label> truth);

Metrics metrics(const ConfusionMatrix& cm);

/// Published accuracy rows shipped as static reference data. fnr < 0 means
/// the source did not report it.
struct ReferenceAccuracyRow {
  const char* model;
  double precision;
  double recall;
  double f1;
  double fnr;
  const char* citation;
};

std::span<const ReferenceAccuracyRow> reference_accuracy_rows(AttackKind kind);

struct EvalReport {
  std::string attack;  // "dos", "fuzzy", or free-form tag
  int window = kDefaultWindow;
  DatasetStats stats;
  std::size_t frames = 0;
  std::size_t windows = 0;
  ConfusionMatrix cm;
  Metrics m;
  std::vector<Label> verdicts;  // one per window, emission order
};

/// Full window -> featurize -> integer-inference sweep over a labelled
/// stream.
EvalReport evaluate(const IntMlp& model, const std::vector<CanFrame>& frames,
                    int window);

void render_eval_text(const EvalReport& report, std::ostream& os);
std::string eval_report_json(const EvalReport& report);
std::string eval_report_csv(const EvalReport& report);

}  // namespace canids
