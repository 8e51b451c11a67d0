#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "canids/bench.hpp"
#include "canids/lower.hpp"
#include "canids/metrics.hpp"
#include "canids/model_io.hpp"
#include "canids/parse.hpp"
#include "canids/replay.hpp"
#include "canids/synth.hpp"
#include "canids/train.hpp"
#include "canids/types.hpp"
#include "canids/window.hpp"

namespace {

using canids::AttackKind;
using canids::Label;

struct GlobalOpts {
  std::uint64_t seed = 1;
  int window = 0;  // 0: use the subcommand's default / the model's window
  bool json = false;
  bool strict = false;
};

int resolve_window(const GlobalOpts& g, int fallback) {
  return g.window > 0 ? g.window : fallback;
}

AttackKind parse_kind(const std::string& s) {
  if (s == "dos") return AttackKind::Dos;
  if (s == "fuzzy") return AttackKind::Fuzzy;
  throw canids::ValidationError("unknown attack kind \"" + s + "\"");
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw canids::ValidationError(std::string("bad ") + what + " list: " + s);
    }
  }
  if (out.empty())
    throw canids::ValidationError(std::string("empty ") + what + " list");
  return out;
}

void write_or_print(const std::string& body, const std::string& path) {
  if (path.empty()) {
    std::cout << body;
    if (!body.empty() && body.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw canids::IoError("cannot open " + path + " for writing");
  out << body;
  if (!out.good()) throw canids::IoError("write error on " + path);
}

// --- synth ---------------------------------------------------------------

struct SynthOpts {
  std::string attack = "dos";
  double rate = 2000.0;
  double duration = 60.0;
  double start = -1.0;
  double stop = -1.0;
  std::string profile_path;
  std::string out;
};

int run_synth(const GlobalOpts& g, const SynthOpts& o) {
  canids::TrafficProfile profile = o.profile_path.empty()
                                       ? canids::default_profile(o.duration)
                                       : canids::load_profile(o.profile_path);
  if (!o.profile_path.empty()) profile.duration_s = o.duration;
  const double start = o.start >= 0.0 ? o.start : 0.25 * profile.duration_s;
  const double stop = o.stop >= 0.0 ? o.stop : 0.75 * profile.duration_s;

  std::cerr << "config: synth attack=" << o.attack << " rate=" << o.rate
            << " duration=" << profile.duration_s << " start=" << start
            << " stop=" << stop << " sources=" << profile.sources.size()
            << " seed=" << g.seed << " out=" << o.out << "\n";

  auto stream = canids::generate_normal(profile, g.seed);
  if (o.attack != "none") {
    canids::AttackSpec spec;
    spec.kind = parse_kind(o.attack);
    spec.rate_hz = o.rate;
    spec.start_s = start;
    spec.stop_s = stop;
    stream = canids::inject(std::move(stream), spec, g.seed, profile.duration_s);
  }
  canids::write_log(stream, o.out);

  std::size_t attack = 0;
  for (const auto& f : stream)
    if (f.label == Label::Attack) ++attack;
  if (g.json) {
    nlohmann::ordered_json j;
    j["out"] = o.out;
    j["frames"] = stream.size();
    j["normal"] = stream.size() - attack;
    j["attack"] = attack;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "wrote " << stream.size() << " frames ("
              << stream.size() - attack << " normal, " << attack
              << " attack) to " << o.out << "\n";
  }
  return 0;
}

// --- train ---------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string attack = "dos";
  std::string dims = "64,32";
  int bits = 4;
  int act_bits = 0;  // 0: same as bits
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  double split = 0.7;
  bool no_class_weights = false;
  std::string out;
};

int run_train(const GlobalOpts& g, const TrainOpts& o) {
  const int window = resolve_window(g, canids::kDefaultWindow);
  const int act_bits = o.act_bits > 0 ? o.act_bits : o.bits;
  const auto hidden = parse_int_list(o.dims, "hidden dims");

  std::cerr << "config: train data=" << o.data << " attack=" << o.attack
            << " window=" << window << " hidden=" << o.dims
            << " bits=" << o.bits << " act_bits=" << act_bits
            << " epochs=" << o.epochs << " batch=" << o.batch << " lr=" << o.lr
            << " split=" << o.split
            << " class_weights=" << (o.no_class_weights ? "off" : "on")
            << " seed=" << g.seed << " strict=" << (g.strict ? "on" : "off")
            << " out=" << o.out << "\n";

  const canids::Dataset ds = canids::read_dataset(o.data, g.strict);
  const canids::FeatureDataset features =
      canids::windows_to_features(ds.frames, window);
  auto [train_set, holdout] = canids::split_dataset(features, o.split);
  if (train_set.size() == 0) throw canids::EmptyDataset("training split is empty");

  std::vector<int> dims;
  dims.push_back(features.feature_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2);

  canids::Rng rng(g.seed);
  canids::FakeQuantMlp model = canids::make_mlp(dims, o.bits, act_bits, rng);

  canids::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.seed = g.seed;
  cfg.class_weighting = !o.no_class_weights;

  const canids::TrainResult result = canids::train(model, train_set, cfg);
  for (std::size_t e = 0; e < result.trace.size(); ++e)
    std::fprintf(stderr, "epoch %3zu  loss %.6f  accuracy %.4f\n", e + 1,
                 result.trace[e].loss, result.trace[e].accuracy);

  canids::Checkpoint ckpt;
  ckpt.meta.attack = o.attack;
  ckpt.meta.window = window;
  ckpt.meta.seed = g.seed;
  ckpt.meta.epochs = o.epochs;
  ckpt.meta.batch_size = o.batch;
  ckpt.meta.learning_rate = o.lr;
  ckpt.meta.split = o.split;
  ckpt.meta.dataset = o.data;
  if (!result.trace.empty()) {
    ckpt.meta.final_loss = result.trace.back().loss;
    ckpt.meta.final_accuracy = result.trace.back().accuracy;
  }

  if (holdout.size() > 0) {
    const canids::IntMlp lowered = canids::lower(model);
    std::vector<Label> preds(holdout.size());
    canids::InferScratch scratch;
    for (std::size_t i = 0; i < holdout.size(); ++i)
      preds[i] = canids::infer(lowered,
                               {holdout.sample(i),
                                static_cast<std::size_t>(holdout.feature_dim)},
                               scratch)
                     .label;
    const auto m = canids::metrics(canids::confusion(preds, holdout.labels));
    if (m.f1_defined) ckpt.meta.holdout_f1 = m.f1;
    std::fprintf(stderr, "holdout (%zu windows): f1 %s\n", holdout.size(),
                 m.f1_defined ? std::to_string(m.f1).c_str() : "n/a");
  }

  ckpt.model = std::move(model);
  canids::save_checkpoint(ckpt, o.out);

  if (g.json) {
    nlohmann::ordered_json j;
    j["checkpoint"] = o.out;
    j["epochs"] = result.trace.size();
    j["final_loss"] = ckpt.meta.final_loss;
    j["final_accuracy"] = ckpt.meta.final_accuracy;
    j["holdout_f1"] = ckpt.meta.holdout_f1;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "wrote checkpoint " << o.out << " (final loss "
              << ckpt.meta.final_loss << ", holdout F1 "
              << (ckpt.meta.holdout_f1 >= 0.0
                      ? std::to_string(ckpt.meta.holdout_f1)
                      : std::string("n/a"))
              << ")\n";
  }
  return 0;
}

// --- lower ---------------------------------------------------------------

struct LowerOpts {
  std::string checkpoint;
  std::string out;
  std::size_t verify_samples = 10000;
};

int run_lower(const GlobalOpts& g, const LowerOpts& o) {
  std::cerr << "config: lower checkpoint=" << o.checkpoint
            << " verify_samples=" << o.verify_samples << " seed=" << g.seed
            << " out=" << o.out << "\n";

  const canids::Checkpoint ckpt = canids::load_checkpoint(o.checkpoint);
  canids::IntMlp lowered = canids::lower(ckpt.model);
  lowered.window = ckpt.meta.window;
  lowered.attack = ckpt.meta.attack;
  lowered.source_checkpoint_sha256 = canids::sha256_file(o.checkpoint);

  const auto report = canids::verify_equivalence(ckpt.model, lowered,
                                                 o.verify_samples, g.seed);
  std::cout << "equivalence: " << report.mismatches << " mismatches in "
            << report.samples << " samples (max logit diff "
            << report.max_scaled_logit_diff << " scaled units)\n";
  if (report.mismatches > 0) {
    std::cerr << "error: lowered model disagrees with the checkpoint; refusing "
                 "to write "
              << o.out << "\n";
    return 1;
  }
  canids::save_lowered(lowered, o.out);
  std::cout << "wrote lowered model " << o.out << "\n";
  return 0;
}

// --- eval / bench --------------------------------------------------------

struct EvalOpts {
  std::string model;
  std::string data;
  std::string attack;  // empty: take the model's tag
  bool csv = false;
  std::string out;
};

int run_eval(const GlobalOpts& g, const EvalOpts& o) {
  const canids::IntMlp model = canids::load_lowered(o.model);
  const int window = resolve_window(g, model.window);
  const std::string attack = o.attack.empty() ? model.attack : o.attack;

  std::cerr << "config: eval model=" << o.model << " data=" << o.data
            << " attack=" << attack << " window=" << window
            << " strict=" << (g.strict ? "on" : "off") << "\n";

  const canids::Dataset ds = canids::read_dataset(o.data, g.strict);
  canids::EvalReport report = canids::evaluate(model, ds.frames, window);
  report.attack = attack;
  report.stats.malformed = ds.stats.malformed;

  if (o.csv)
    write_or_print(canids::eval_report_csv(report), o.out);
  else if (g.json)
    write_or_print(canids::eval_report_json(report), o.out);
  else {
    std::ostringstream os;
    canids::render_eval_text(report, os);
    write_or_print(os.str(), o.out);
  }
  return 0;
}

int run_bench(const GlobalOpts& g, const EvalOpts& o) {
  const canids::IntMlp model = canids::load_lowered(o.model);
  const int window = resolve_window(g, model.window);

  std::cerr << "config: bench model=" << o.model << " data=" << o.data
            << " window=" << window << "\n";

  const canids::Dataset ds = canids::read_dataset(o.data, g.strict);
  const canids::BenchResult result = canids::bench(model, ds.frames, window);

  if (g.json)
    write_or_print(canids::bench_result_json(result), o.out);
  else {
    std::ostringstream os;
    canids::render_bench_text(result, os);
    write_or_print(os.str(), o.out);
  }
  return 0;
}

// --- replay --------------------------------------------------------------

struct ReplayOpts {
  std::string model;
  std::string data;
  double speed = 0.0;
  std::size_t queue_depth = 64;
  std::string log;
};

int run_replay(const GlobalOpts& g, const ReplayOpts& o) {
  canids::IntMlp model = canids::load_lowered(o.model);
  model.window = resolve_window(g, model.window);

  std::cerr << "config: replay model=" << o.model << " data=" << o.data
            << " speed=" << o.speed << " queue_depth=" << o.queue_depth
            << " window=" << model.window << "\n";

  const canids::Dataset ds = canids::read_dataset(o.data, g.strict);
  canids::ReplayConfig cfg;
  cfg.speed = o.speed;
  cfg.queue_depth = o.queue_depth;
  const canids::ReplayResult result = canids::replay(model, ds.frames, cfg);

  if (!o.log.empty()) {
    std::ofstream log(o.log);
    if (!log) throw canids::IoError("cannot open " + o.log + " for writing");
    log << "window,verdict\n";
    for (std::size_t i = 0; i < result.verdicts.size(); ++i)
      log << i << ',' << (result.verdicts[i] == Label::Attack ? 'T' : 'R')
          << '\n';
  }

  std::size_t flagged = 0;
  for (Label v : result.verdicts)
    if (v == Label::Attack) ++flagged;

  if (g.json) {
    nlohmann::ordered_json j;
    j["frames"] = result.frames;
    j["windows"] = result.windows;
    j["attack_verdicts"] = flagged;
    j["queue_stalls"] = result.stalls;
    j["detect_latency_us"] = result.detect_latency_us;
    j["wall_s"] = result.wall_s;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "replayed " << result.frames << " frames, " << result.windows
              << " verdicts (" << flagged << " attack), stalls "
              << result.stalls << ", wall " << result.wall_s << " s\n";
    if (result.detect_latency_us >= 0.0)
      std::cout << "first attack flagged " << result.detect_latency_us
                << " us after the first attack frame was fed\n";
  }
  return 0;
}

// --- dse -----------------------------------------------------------------

struct DseOpts {
  std::string data;
  std::string bits = "2,3,4,8";
  std::string dims = "64,32";
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  double split = 0.7;
};

int run_dse(const GlobalOpts& g, const DseOpts& o) {
  const int window = resolve_window(g, canids::kDefaultWindow);
  const auto widths = parse_int_list(o.bits, "bit width");
  const auto hidden = parse_int_list(o.dims, "hidden dims");

  std::cerr << "config: dse data=" << o.data << " bits=" << o.bits
            << " hidden=" << o.dims << " window=" << window
            << " epochs=" << o.epochs << " batch=" << o.batch << " lr=" << o.lr
            << " split=" << o.split << " seed=" << g.seed << "\n";

  const canids::Dataset ds = canids::read_dataset(o.data, g.strict);
  const canids::FeatureDataset features =
      canids::windows_to_features(ds.frames, window);

  canids::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.seed = g.seed;

  const auto rows = canids::dse_sweep(widths, features, o.split, hidden, cfg);

  if (g.json) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      j.push_back({{"bits", r.bits},
                   {"precision", r.holdout.precision},
                   {"recall", r.holdout.recall},
                   {"f1", r.holdout.f1},
                   {"fnr", r.holdout.fnr},
                   {"confusion",
                    {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn}}}});
    }
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("%5s %10s %10s %10s %10s\n", "bits", "precision", "recall", "F1",
                "FNR");
    for (const auto& r : rows)
      std::printf("%5d %10.4f %10.4f %10.4f %10.4f\n", r.bits,
                  r.holdout.precision, r.holdout.recall, r.holdout.f1,
                  r.holdout.fnr);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantised-MLP intrusion detection for CAN bus traffic"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "seed for every random draw")
      ->capture_default_str();
  app.add_option("--window", g.window,
                 "window length override (default: model / 4)");
  app.add_flag("--json", g.json, "machine-readable output");
  app.add_flag("--strict", g.strict, "abort on the first malformed record");

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "generate labelled CAN traffic");
  synth->fallthrough();
  synth->add_option("--attack", so.attack, "dos | fuzzy | none")
      ->capture_default_str();
  synth->add_option("--rate", so.rate, "attack injection rate, msg/s")
      ->capture_default_str();
  synth->add_option("--duration", so.duration, "stream duration, s")
      ->capture_default_str();
  synth->add_option("--start", so.start, "attack start, s (default 25% in)");
  synth->add_option("--stop", so.stop, "attack stop, s (default 75% in)");
  synth->add_option("--profile", so.profile_path, "traffic profile JSON");
  synth->add_option("-o,--out", so.out, "output CSV path")->required();

  TrainOpts to;
  auto* train = app.add_subcommand("train", "train a fake-quant MLP");
  train->fallthrough();
  train->add_option("--data", to.data, "labelled CSV log")->required();
  train->add_option("--attack", to.attack, "dos | fuzzy (metadata tag)")
      ->capture_default_str();
  train->add_option("--dims", to.dims, "hidden layer sizes")
      ->capture_default_str();
  train->add_option("--bits", to.bits, "weight bit width")->capture_default_str();
  train->add_option("--act-bits", to.act_bits,
                    "activation bit width (default: --bits)");
  train->add_option("--epochs", to.epochs, "")->capture_default_str();
  train->add_option("--batch", to.batch, "")->capture_default_str();
  train->add_option("--lr", to.lr, "learning rate")->capture_default_str();
  train->add_option("--split", to.split, "chronological train fraction")
      ->capture_default_str();
  train->add_flag("--no-class-weights", to.no_class_weights,
                  "disable inverse-frequency class weighting");
  train->add_option("-o,--out", to.out, "checkpoint path")->required();

  LowerOpts lo;
  auto* lower = app.add_subcommand("lower", "lower a checkpoint to integers");
  lower->fallthrough();
  lower->add_option("--checkpoint", lo.checkpoint, "trained checkpoint")
      ->required();
  lower->add_option("--verify-samples", lo.verify_samples,
                    "equivalence sample count")
      ->capture_default_str();
  lower->add_option("-o,--out", lo.out, "lowered model path")->required();

  EvalOpts eo;
  auto* eval = app.add_subcommand("eval", "accuracy report on a labelled log");
  eval->fallthrough();
  eval->add_option("--model", eo.model, "lowered model")->required();
  eval->add_option("--data", eo.data, "labelled CSV log")->required();
  eval->add_option("--attack", eo.attack, "report tag (default: model's)");
  eval->add_flag("--csv", eo.csv, "CSV report");
  eval->add_option("-o,--out", eo.out, "write report here instead of stdout");

  EvalOpts bo;
  auto* bench = app.add_subcommand("bench", "latency / throughput benchmark");
  bench->fallthrough();
  bench->add_option("--model", bo.model, "lowered model")->required();
  bench->add_option("--data", bo.data, "CSV log to stream")->required();
  bench->add_option("-o,--out", bo.out, "write report here instead of stdout");

  ReplayOpts ro;
  auto* replay = app.add_subcommand(
      "replay", "two-context streaming replay through a bounded queue");
  replay->fallthrough();
  replay->add_option("--model", ro.model, "lowered model")->required();
  replay->add_option("--data", ro.data, "CSV log to replay")->required();
  replay->add_option("--speed", ro.speed,
                     "pacing multiplier (0 = as fast as possible)")
      ->capture_default_str();
  replay->add_option("--queue-depth", ro.queue_depth, "bounded queue capacity")
      ->capture_default_str();
  replay->add_option("--log", ro.log, "write per-window verdicts CSV here");

  DseOpts dso;
  auto* dse = app.add_subcommand("dse", "bit-width sweep");
  dse->fallthrough();
  dse->add_option("--data", dso.data, "labelled CSV log")->required();
  dse->add_option("--bits", dso.bits, "bit widths to sweep")
      ->capture_default_str();
  dse->add_option("--dims", dso.dims, "hidden layer sizes")
      ->capture_default_str();
  dse->add_option("--epochs", dso.epochs, "")->capture_default_str();
  dse->add_option("--batch", dso.batch, "")->capture_default_str();
  dse->add_option("--lr", dso.lr, "learning rate")->capture_default_str();
  dse->add_option("--split", dso.split, "chronological train fraction")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
    if (*synth) return run_synth(g, so);
    if (*train) return run_train(g, to);
    if (*lower) return run_lower(g, lo);
    if (*eval) return run_eval(g, eo);
    if (*bench) return run_bench(g, bo);
    if (*replay) return run_replay(g, ro);
    if (*dse) return run_dse(g, dso);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const canids::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
