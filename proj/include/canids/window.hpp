#pragma once

#include <deque>
#include <optional>

#include "canids/quant.hpp"
#include "canids/types.hpp"

namespace canids {

/// FIFO window over the frame stream. Stride 1: after the first W-1 frames,
/// every push emits the window of the most recent W frames. Single-producer;
/// emitted windows are value copies and safe to hand elsewhere.
class WindowBuffer {
 public:
  explicit WindowBuffer(int window);

  std::optional<FrameWindow> push(const CanFrame& frame);

  int window() const { return window_; }
  void clear() { frames_.clear(); }

 private:
  int window_;
  std::deque<CanFrame> frames_;
};

/// Per frame: [can_id/2047, dlc/8, data[0..7]/255], concatenated in arrival
/// order, then quantised with the shared 8-bit input spec.
FeatureVector featurize(const FrameWindow& window);

/// The 10 per-frame floats, written to out[0..9].
void frame_features(const CanFrame& frame, double* out);

}  // namespace canids
