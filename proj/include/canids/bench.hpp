#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "canids/lower.hpp"
#include "canids/types.hpp"

namespace canids {

/// Per-message wall-clock cost of the full software path (window update +
/// featurize + integer inference), measured single-context.
struct BenchResult {
  std::size_t messages = 0;
  std::size_t verdicts = 0;
  double wall_s = 0.0;
  double throughput_msgs_per_s = 0.0;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p99_us = 0.0;
  double featurize_mean_us = 0.0;  // stage breakdown, verdict frames
  double infer_mean_us = 0.0;
};

BenchResult bench(const IntMlp& model, const std::vector<CanFrame>& frames,
                  int window);

/// Published per-message latency rows; reference points from other
/// platforms, not targets for this host.
struct ReferenceLatencyRow {
  const char* model;
  double latency_ms;
  const char* granularity;
  const char* platform;
  const char* citation;
};

std::span<const ReferenceLatencyRow> reference_latency_rows();

/// Line rate of a loaded high-speed CAN at maximal payload, msgs/s.
inline constexpr double kLineRateFloor = 8300.0;

void render_bench_text(const BenchResult& result, std::ostream& os);
std::string bench_result_json(const BenchResult& result);

}  // namespace canids
