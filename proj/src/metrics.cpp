#include "canids/metrics.hpp"

#include <cstdio>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "canids/lower.hpp"
#include "canids/window.hpp"

namespace canids {

ConfusionMatrix confusion(std::span<const Label> predictions,
                          std::span<const Label> truth) {
  if (predictions.size() != truth.size())
    throw LengthMismatch("prediction and truth streams differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predictions[i] == Label::Attack;
    const bool t = truth[i] == Label::Attack;
    if (p && t)
      ++cm.tp;
    else if (p && !t)
      ++cm.fp;
    else if (!p && t)
      ++cm.fn;
    else
      ++cm.tn;
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  if (cm.tp + cm.fp > 0) {
    m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    m.precision_defined = true;
  }
  if (cm.tp + cm.fn > 0) {
    m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    m.fnr = static_cast<double>(cm.fn) / static_cast<double>(cm.fn + cm.tp);
    m.recall_defined = true;
    m.fnr_defined = true;
  }
  if (m.precision_defined && m.recall_defined && m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.f1_defined = true;
  } else if (m.precision_defined && m.recall_defined) {
    m.f1 = 0.0;
    m.f1_defined = true;
  }
  return m;
}

// Published results, percent units as printed in the sources; fnr < 0 means
// the source did not report it.
std::span<const ReferenceAccuracyRow> reference_accuracy_rows(AttackKind kind) {
  static const ReferenceAccuracyRow dos[] = {
      {"DCNN", 100.0, 99.89, 99.95, 0.13, "Song et al. 2020"},
      {"MLIDS", 99.9, 100.0, 99.9, -1.0, "Desta et al. 2020"},
      {"NovelADS", 99.97, 99.91, 99.94, -1.0, "Agrawal et al. 2022"},
      {"TCAN-IDS", 100.0, 99.97, 99.98, -1.0, "Cheng et al. 2022"},
      {"GRU", 99.93, 99.91, 99.92, -1.0, "Ma et al. 2022"},
      {"4-bit-QMLP", 99.99, 99.99, 99.99, 0.01, "quantised MLP on Zynq Ultrascale+"},
  };
  static const ReferenceAccuracyRow fuzzy[] = {
      {"DCNN", 99.95, 99.65, 99.80, 0.5, "Song et al. 2020"},
      {"MLIDS", 99.9, 99.9, 99.9, -1.0, "Desta et al. 2020"},
      {"NovelADS", 99.99, 100.0, 100.0, -1.0, "Agrawal et al. 2022"},
      {"TCAN-IDS", 99.96, 99.89, 99.22, -1.0, "Cheng et al. 2022"},
      {"GRU", 99.32, 99.13, 99.22, -1.0, "Ma et al. 2022"},
      {"4-bit-QMLP", 99.68, 99.93, 99.80, 0.07, "quantised MLP on Zynq Ultrascale+"},
  };
  if (kind == AttackKind::Dos) return dos;
  return fuzzy;
}

EvalReport evaluate(const IntMlp& model, const std::vector<CanFrame>& frames,
                    int window) {
  EvalReport report;
  report.window = window;
  report.frames = frames.size();

  std::vector<Label> truth;
  WindowBuffer buf(window);
  InferScratch scratch;
  for (const auto& frame : frames) {
    if (frame.label == Label::Attack)
      ++report.stats.attack;
    else
      ++report.stats.normal;
    if (auto w = buf.push(frame)) {
      const FeatureVector fv = featurize(*w);
      const IntVerdict v = infer(model, fv.codes, scratch);
      report.verdicts.push_back(v.label);
      truth.push_back(w->label());
    }
  }
  report.windows = report.verdicts.size();
  report.cm = confusion(report.verdicts, truth);
  report.m = metrics(report.cm);
  return report;
}

namespace {

std::optional<AttackKind> kind_of(const std::string& tag) {
  if (tag == "dos") return AttackKind::Dos;
  if (tag == "fuzzy") return AttackKind::Fuzzy;
  return std::nullopt;
}

void print_pct(std::ostream& os, double pct, bool defined) {
  char buf[32];
  if (defined)
    std::snprintf(buf, sizeof(buf), "%9.2f", pct);
  else
    std::snprintf(buf, sizeof(buf), "%9s", "n/a");
  os << buf;
}

}  // namespace

void render_eval_text(const EvalReport& r, std::ostream& os) {
  os << "accuracy report (" << (r.attack.empty() ? "unlabelled" : r.attack)
     << ", window " << r.window << ")\n";
  os << "  frames " << r.frames << " (normal " << r.stats.normal << ", attack "
     << r.stats.attack << ", malformed " << r.stats.malformed << "), windows "
     << r.windows << "\n";
  os << "  confusion  tp " << r.cm.tp << "  fp " << r.cm.fp << "  tn " << r.cm.tn
     << "  fn " << r.cm.fn << "\n\n";

  char head[128];
  std::snprintf(head, sizeof(head), "  %-12s %9s %9s %9s %9s  %s\n", "model",
                "precision", "recall", "F1", "FNR", "source");
  os << head;

  char name[32];
  std::snprintf(name, sizeof(name), "  %-12s", "this run");
  os << name;
  print_pct(os, 100.0 * r.m.precision, r.m.precision_defined);
  print_pct(os, 100.0 * r.m.recall, r.m.recall_defined);
  print_pct(os, 100.0 * r.m.f1, r.m.f1_defined);
  print_pct(os, 100.0 * r.m.fnr, r.m.fnr_defined);
  os << "  computed on this dataset\n";

  if (const auto kind = kind_of(r.attack)) {
    for (const auto& row : reference_accuracy_rows(*kind)) {
      std::snprintf(name, sizeof(name), "  %-12s", row.model);
      os << name;
      print_pct(os, row.precision, true);
      print_pct(os, row.recall, true);
      print_pct(os, row.f1, true);
      print_pct(os, row.fnr, row.fnr >= 0.0);
      os << "  reference (" << row.citation << ")\n";
    }
  }
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["attack"] = r.attack;
  j["window"] = r.window;
  j["frames"] = r.frames;
  j["windows"] = r.windows;
  j["counts"] = {{"normal", r.stats.normal},
                 {"attack", r.stats.attack},
                 {"malformed", r.stats.malformed}};
  j["confusion"] = {
      {"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn}};
  j["metrics"] = {{"precision", r.m.precision},
                  {"recall", r.m.recall},
                  {"f1", r.m.f1},
                  {"fnr", r.m.fnr},
                  {"precision_defined", r.m.precision_defined},
                  {"recall_defined", r.m.recall_defined},
                  {"f1_defined", r.m.f1_defined},
                  {"fnr_defined", r.m.fnr_defined}};
  j["reference_pct"] = nlohmann::ordered_json::array();
  if (const auto kind = kind_of(r.attack)) {
    for (const auto& row : reference_accuracy_rows(*kind)) {
      nlohmann::ordered_json ref;
      ref["model"] = row.model;
      ref["precision"] = row.precision;
      ref["recall"] = row.recall;
      ref["f1"] = row.f1;
      if (row.fnr >= 0.0) ref["fnr"] = row.fnr;
      ref["citation"] = row.citation;
      j["reference_pct"].push_back(ref);
    }
  }
  return j.dump(2);
}

std::string eval_report_csv(const EvalReport& r) {
  std::string out = "attack,model,source,precision_pct,recall_pct,f1_pct,fnr_pct\n";
  char buf[256];
  auto cell = [](double pct, bool defined) {
    char b[32];
    if (!defined) return std::string();
    std::snprintf(b, sizeof(b), "%.4f", pct);
    return std::string(b);
  };
  std::snprintf(buf, sizeof(buf), "%s,this run,computed,%s,%s,%s,%s\n",
                r.attack.c_str(), cell(100.0 * r.m.precision, r.m.precision_defined).c_str(),
                cell(100.0 * r.m.recall, r.m.recall_defined).c_str(),
                cell(100.0 * r.m.f1, r.m.f1_defined).c_str(),
                cell(100.0 * r.m.fnr, r.m.fnr_defined).c_str());
  out += buf;
  if (const auto kind = kind_of(r.attack)) {
    for (const auto& row : reference_accuracy_rows(*kind)) {
      std::snprintf(buf, sizeof(buf), "%s,%s,reference (%s),%s,%s,%s,%s\n",
                    r.attack.c_str(), row.model, row.citation,
                    cell(row.precision, true).c_str(), cell(row.recall, true).c_str(),
                    cell(row.f1, true).c_str(), cell(row.fnr, row.fnr >= 0.0).c_str());
      out += buf;
    }
  }
  return out;
}

}  // namespace canids
