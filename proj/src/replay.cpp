#include "canids/replay.hpp"

#include <atomic>
#include <chrono>
#include <thread>

#include "canids/window.hpp"

namespace canids {

ReplayResult replay(const IntMlp& model, const std::vector<CanFrame>& frames,
                    const ReplayConfig& cfg) {
  if (cfg.speed < 0.0) throw ValidationError("replay speed must be >= 0");
  if (cfg.queue_depth < 1) throw ValidationError("queue depth must be >= 1");

  using Clock = std::chrono::steady_clock;
  BoundedQueue<CanFrame> queue(cfg.queue_depth);
  std::atomic<std::int64_t> attack_fed_ns{-1};

  const auto start = Clock::now();
  std::thread feeder([&] {
    const double t0 = frames.empty() ? 0.0 : frames.front().timestamp;
    bool attack_seen = false;
    for (const auto& frame : frames) {
      if (cfg.speed > 0.0) {
        const auto offset = std::chrono::duration<double>(
            (frame.timestamp - t0) / cfg.speed);
        std::this_thread::sleep_until(
            start + std::chrono::duration_cast<Clock::duration>(offset));
      }
      if (!attack_seen && frame.label == Label::Attack) {
        attack_seen = true;
        attack_fed_ns.store(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                Clock::now() - start)
                                .count(),
                            std::memory_order_relaxed);
      }
      queue.push(frame);
    }
    queue.close();
  });

  ReplayResult res;
  res.frames = frames.size();
  WindowBuffer buf(model.window > 0 ? model.window : kDefaultWindow);
  InferScratch scratch;
  bool attack_consumed = false;
  bool detected = false;

  while (auto frame = queue.pop()) {
    if (frame->label == Label::Attack) attack_consumed = true;
    if (auto w = buf.push(*frame)) {
      const FeatureVector fv = featurize(*w);
      const IntVerdict v = infer(model, fv.codes, scratch);
      res.verdicts.push_back(v.label);
      if (!detected && attack_consumed && v.label == Label::Attack) {
        detected = true;
        const auto now_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                                Clock::now() - start)
                                .count();
        const auto fed = attack_fed_ns.load(std::memory_order_relaxed);
        if (fed >= 0)
          res.detect_latency_us = static_cast<double>(now_ns - fed) / 1000.0;
      }
    }
  }
  feeder.join();

  res.windows = res.verdicts.size();
  res.stalls = queue.stalls();
  res.wall_s = std::chrono::duration<double>(Clock::now() - start).count();
  return res;
}

}  // namespace canids
