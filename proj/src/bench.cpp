#include "canids/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "canids/window.hpp"

namespace canids {
namespace {

using Clock = std::chrono::steady_clock;

double us_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

double nearest_rank(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return sorted[rank - 1];
}

}  // namespace

BenchResult bench(const IntMlp& model, const std::vector<CanFrame>& frames,
                  int window) {
  BenchResult r;
  r.messages = frames.size();

  WindowBuffer buf(window);
  InferScratch scratch;
  std::vector<double> per_msg_us;
  per_msg_us.reserve(frames.size());
  double feat_total = 0.0, infer_total = 0.0;
  // consumed so the optimizer cannot drop the inference calls
  std::uint64_t verdict_sink = 0;

  const auto t0 = Clock::now();
  for (const auto& frame : frames) {
    const auto m0 = Clock::now();
    if (auto w = buf.push(frame)) {
      const auto f0 = Clock::now();
      const FeatureVector fv = featurize(*w);
      const auto f1 = Clock::now();
      const IntVerdict v = infer(model, fv.codes, scratch);
      const auto f2 = Clock::now();
      feat_total += us_between(f0, f1);
      infer_total += us_between(f1, f2);
      verdict_sink += static_cast<std::uint64_t>(v.label);
      ++r.verdicts;
    }
    per_msg_us.push_back(us_between(m0, Clock::now()));
  }
  const auto t1 = Clock::now();

  r.wall_s = std::chrono::duration<double>(t1 - t0).count();
  r.throughput_msgs_per_s =
      r.wall_s > 0.0 ? static_cast<double>(r.messages) / r.wall_s : 0.0;

  if (!per_msg_us.empty()) {
    double sum = 0.0;
    for (double v : per_msg_us) sum += v;
    r.mean_us = sum / static_cast<double>(per_msg_us.size());
    std::sort(per_msg_us.begin(), per_msg_us.end());
    r.median_us = nearest_rank(per_msg_us, 0.5);
    r.p99_us = nearest_rank(per_msg_us, 0.99);
  }
  if (r.verdicts > 0) {
    r.featurize_mean_us = feat_total / static_cast<double>(r.verdicts);
    r.infer_mean_us = infer_total / static_cast<double>(r.verdicts);
  }
  (void)verdict_sink;
  return r;
}

std::span<const ReferenceLatencyRow> reference_latency_rows() {
  static const ReferenceLatencyRow rows[] = {
      {"GRU", 890.0, "5000 CAN frames", "Jetson Xavier NX", "Ma et al. 2022"},
      {"MLIDS", 275.0, "per CAN frame", "GTX Titan X", "Desta et al. 2020"},
      {"NovelADS", 128.7, "100 CAN frames", "Jetson Nano", "Agrawal et al. 2022"},
      {"DCNN", 5.0, "29 CAN frames", "Tesla K80", "Song et al. 2020"},
      {"TCAN-IDS", 3.4, "64 CAN frames", "Jetson AGX", "Cheng et al. 2022"},
      {"MTH-IDS", 0.574, "per CAN frame", "Raspberry Pi 3", "Yang et al. 2021"},
      {"4-bit-QMLP", 0.12, "per CAN frame", "Zynq Ultrascale+",
       "quantised MLP deployment"},
  };
  return rows;
}

void render_bench_text(const BenchResult& r, std::ostream& os) {
  char buf[256];
  os << "throughput benchmark\n";
  std::snprintf(buf, sizeof(buf),
                "  messages %zu, verdicts %zu, wall %.3f s\n", r.messages,
                r.verdicts, r.wall_s);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "  throughput %.0f msg/s  (line-rate floor %.0f msg/s: %s)\n",
                r.throughput_msgs_per_s, kLineRateFloor,
                r.throughput_msgs_per_s >= kLineRateFloor ? "met" : "NOT met");
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "  per-message latency  mean %.4f ms  median %.4f ms  p99 %.4f ms\n",
                r.mean_us / 1000.0, r.median_us / 1000.0, r.p99_us / 1000.0);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "  per-verdict stages   featurize %.3f us  inference %.3f us\n\n",
                r.featurize_mean_us, r.infer_mean_us);
  os << buf;

  os << "  published per-message latencies below are other platforms' figures,"
        " shown for context, not targets for this host\n";
  std::snprintf(buf, sizeof(buf), "  %-12s %12s  %-16s %-17s %s\n", "model",
                "latency", "granularity", "platform", "source");
  os << buf;
  std::snprintf(buf, sizeof(buf), "  %-12s %9.4f ms  %-16s %-17s %s\n",
                "this run", r.mean_us / 1000.0, "per CAN frame",
                "this host (sw)", "computed");
  os << buf;
  for (const auto& row : reference_latency_rows()) {
    std::snprintf(buf, sizeof(buf), "  %-12s %9.3f ms  %-16s %-17s reference (%s)\n",
                  row.model, row.latency_ms, row.granularity, row.platform,
                  row.citation);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "  reference ratio MTH-IDS / 4-bit-QMLP = %.1fx\n",
                0.574 / 0.12);
  os << buf;
}

std::string bench_result_json(const BenchResult& r) {
  nlohmann::ordered_json j;
  j["messages"] = r.messages;
  j["verdicts"] = r.verdicts;
  j["wall_s"] = r.wall_s;
  j["throughput_msgs_per_s"] = r.throughput_msgs_per_s;
  j["latency_us"] = {{"mean", r.mean_us},
                     {"median", r.median_us},
                     {"p99", r.p99_us}};
  j["stage_mean_us"] = {{"featurize", r.featurize_mean_us},
                        {"inference", r.infer_mean_us}};
  j["line_rate_floor_msgs_per_s"] = kLineRateFloor;
  j["line_rate_met"] = r.throughput_msgs_per_s >= kLineRateFloor;
  j["reference_latency_ms"] = nlohmann::ordered_json::array();
  for (const auto& row : reference_latency_rows()) {
    j["reference_latency_ms"].push_back({{"model", row.model},
                                         {"latency_ms", row.latency_ms},
                                         {"granularity", row.granularity},
                                         {"platform", row.platform},
                                         {"citation", row.citation}});
  }
  return j.dump(2);
}

}  // namespace canids
