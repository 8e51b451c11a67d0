#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "canids/lower.hpp"
#include "canids/metrics.hpp"
#include "canids/rng.hpp"

using namespace canids;

namespace {

// 40-input single-neuron model whose verdict is forced through the final bias.
IntMlp constant_verdict_model(Label verdict) {
  IntMlp m;
  m.layer_dims = {40, 1, 2};
  m.weight_bits = 4;
  m.act_bits = 2;
  m.input_quant = input_quant_spec();
  m.window = 4;
  IntHiddenLayer h;
  h.weights = decltype(h.weights)::Zero(1, 40);
  h.thresholds = {{1, 1, 1}};
  h.bounds = {{0, 0}};
  m.hidden = {h};
  m.final_layer.weights = decltype(m.final_layer.weights)::Zero(2, 1);
  m.final_layer.bias = verdict == Label::Normal
                           ? std::vector<std::int64_t>{1, 0}
                           : std::vector<std::int64_t>{0, 1};
  m.final_layer.output_scale = 0.5;
  m.final_layer.bounds = {{0, 1}, {0, 1}};
  return m;
}

std::vector<CanFrame> simple_stream(std::size_t n) {
  std::vector<CanFrame> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    frames[i].timestamp = 0.001 * static_cast<double>(i);
    frames[i].can_id = 0x120;
    frames[i].dlc = 8;
  }
  return frames;
}

}  // namespace

TEST_CASE("confusion counts the four quadrants") {
  using enum Label;
  const std::vector<Label> preds = {Attack, Attack, Normal, Normal, Attack};
  const std::vector<Label> truth = {Attack, Normal, Normal, Attack, Attack};
  const ConfusionMatrix cm = confusion(preds, truth);
  CHECK(cm.tp == 2);
  CHECK(cm.fp == 1);
  CHECK(cm.fn == 1);
  CHECK(cm.tn == 1);
  CHECK(cm.total() == 5);

  const std::vector<Label> shorter = {Attack};
  CHECK_THROWS_AS(confusion(shorter, truth), LengthMismatch);
}

TEST_CASE("confusion agrees with a direct recount on random labels") {
  Rng rng(5);
  std::vector<Label> preds, truth;
  for (int i = 0; i < 1000; ++i) {
    preds.push_back(rng.uniform_below(2) ? Label::Attack : Label::Normal);
    truth.push_back(rng.uniform_below(4) == 0 ? Label::Attack : Label::Normal);
  }
  const ConfusionMatrix cm = confusion(preds, truth);
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == Label::Attack;
    const bool t = truth[i] == Label::Attack;
    if (p && t) ++tp;
    if (p && !t) ++fp;
    if (!p && !t) ++tn;
    if (!p && t) ++fn;
  }
  CHECK(cm.tp == tp);
  CHECK(cm.fp == fp);
  CHECK(cm.tn == tn);
  CHECK(cm.fn == fn);
  CHECK(cm.total() == 1000);
}

TEST_CASE("metrics from a near-perfect confusion matrix") {
  ConfusionMatrix cm;
  cm.tp = 99;
  cm.fp = 1;
  cm.fn = 1;
  cm.tn = 899;
  const Metrics m = metrics(cm);
  CHECK(m.precision == doctest::Approx(0.99));
  CHECK(m.recall == doctest::Approx(0.99));
  CHECK(m.f1 == doctest::Approx(0.99));
  CHECK(m.fnr == doctest::Approx(0.01));
  CHECK(m.precision_defined);
  CHECK(m.recall_defined);
  CHECK(m.f1_defined);
  CHECK(m.fnr_defined);
}

TEST_CASE("degenerate denominators clear the defined flags") {
  ConfusionMatrix none;
  none.tn = 10;
  const Metrics m = metrics(none);
  CHECK(!m.precision_defined);
  CHECK(!m.recall_defined);
  CHECK(!m.f1_defined);
  CHECK(!m.fnr_defined);
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);

  ConfusionMatrix only_fp;
  only_fp.fp = 5;
  only_fp.tn = 5;
  const Metrics m2 = metrics(only_fp);
  CHECK(m2.precision_defined);
  CHECK(m2.precision == 0.0);
  CHECK(!m2.recall_defined);
}

TEST_CASE("f1 matches the harmonic mean identity") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionMatrix cm;
    cm.tp = rng.uniform_below(50) + 1;
    cm.fp = rng.uniform_below(50);
    cm.fn = rng.uniform_below(50);
    cm.tn = rng.uniform_below(50);
    const Metrics m = metrics(cm);
    REQUIRE(m.f1_defined);
    const double want =
        (m.precision + m.recall) > 0.0
            ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
            : 0.0;
    CHECK(std::abs(m.f1 - want) <= 1e-12);
  }
}

TEST_CASE("published accuracy tables carry six rows per attack") {
  const auto dos = reference_accuracy_rows(AttackKind::Dos);
  REQUIRE(dos.size() == 6);
  const auto& qmlp = dos.back();
  CHECK(std::string(qmlp.model) == "4-bit-QMLP");
  CHECK(qmlp.precision == 99.99);
  CHECK(qmlp.recall == 99.99);
  CHECK(qmlp.f1 == 99.99);
  CHECK(qmlp.fnr == 0.01);

  const auto fuzzy = reference_accuracy_rows(AttackKind::Fuzzy);
  REQUIRE(fuzzy.size() == 6);
  CHECK(fuzzy.back().f1 == 99.80);
  CHECK(fuzzy.back().fnr == 0.07);
  CHECK(fuzzy[1].fnr < 0.0);  // not reported by that source
}

TEST_CASE("evaluate slides one window per frame") {
  const auto frames = simple_stream(50);
  const IntMlp model = constant_verdict_model(Label::Normal);
  const EvalReport r = evaluate(model, frames, 4);
  CHECK(r.frames == 50);
  CHECK(r.windows == 47);
  CHECK(r.verdicts.size() == 47);
  CHECK(r.stats.normal == 50);
  CHECK(r.stats.attack == 0);
}

TEST_CASE("a never-alarming model on clean traffic leaves metrics undefined") {
  const auto frames = simple_stream(50);
  const EvalReport r =
      evaluate(constant_verdict_model(Label::Normal), frames, 4);
  CHECK(r.cm.tn == 47);
  CHECK(r.cm.fp == 0);
  CHECK(r.cm.tp == 0);
  CHECK(r.cm.fn == 0);
  CHECK(!r.m.precision_defined);
  CHECK(!r.m.fnr_defined);
}

TEST_CASE("window truth is any-attack and aligns with the verdict stream") {
  auto frames = simple_stream(50);
  for (std::size_t i = 20; i < 30; ++i) frames[i].label = Label::Attack;
  const EvalReport r =
      evaluate(constant_verdict_model(Label::Attack), frames, 4);
  // windows ending at frames 20..32 contain at least one attack frame
  CHECK(r.cm.tp == 13);
  CHECK(r.cm.fp == 47 - 13);
  CHECK(r.cm.fn == 0);
  CHECK(r.m.recall == 1.0);
  CHECK(r.m.fnr == 0.0);
  CHECK(r.m.fnr_defined);
}

TEST_CASE("text report labels run metrics and reference rows") {
  auto frames = simple_stream(30);
  for (std::size_t i = 10; i < 20; ++i) frames[i].label = Label::Attack;
  EvalReport r = evaluate(constant_verdict_model(Label::Attack), frames, 4);
  r.attack = "dos";
  std::ostringstream os;
  render_eval_text(r, os);
  const std::string text = os.str();
  CHECK(text.find("this run") != std::string::npos);
  CHECK(text.find("computed on this dataset") != std::string::npos);
  CHECK(text.find("reference (") != std::string::npos);
  CHECK(text.find("4-bit-QMLP") != std::string::npos);
  CHECK(text.find("n/a") != std::string::npos);  // unreported reference FNRs
}

TEST_CASE("json report round-trips through a parser") {
  auto frames = simple_stream(30);
  for (std::size_t i = 5; i < 12; ++i) frames[i].label = Label::Attack;
  EvalReport r = evaluate(constant_verdict_model(Label::Attack), frames, 4);
  r.attack = "fuzzy";
  const auto j = nlohmann::json::parse(eval_report_json(r));
  CHECK(j.at("attack") == "fuzzy");
  CHECK(j.at("window") == 4);
  CHECK(j.at("frames") == 30);
  CHECK(j.at("windows") == 27);
  CHECK(j.at("confusion").at("tp").get<std::uint64_t>() == r.cm.tp);
  CHECK(j.at("metrics").at("recall") == 1.0);
  CHECK(j.at("reference_pct").size() == 6);
  // rows that do not report FNR omit the key
  CHECK(!j.at("reference_pct").at(1).contains("fnr"));
  CHECK(j.at("reference_pct").at(5).at("fnr") == 0.07);
}

TEST_CASE("csv report carries one row per source") {
  auto frames = simple_stream(30);
  EvalReport r = evaluate(constant_verdict_model(Label::Normal), frames, 4);
  r.attack = "dos";
  const std::string csv = eval_report_csv(r);
  std::istringstream is(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 8);  // header + this run + 6 reference rows
  CHECK(lines[0] ==
        "attack,model,source,precision_pct,recall_pct,f1_pct,fnr_pct");
  CHECK(lines[1].find("dos,this run,computed,") == 0);
  // undefined metrics leave the cell empty
  CHECK(lines[1].substr(lines[1].size() - 1) == ",");
  CHECK(lines[7].find("4-bit-QMLP") != std::string::npos);

  r.attack = "custom";
  const std::string csv2 = eval_report_csv(r);
  CHECK(std::count(csv2.begin(), csv2.end(), '\n') == 2);
}
