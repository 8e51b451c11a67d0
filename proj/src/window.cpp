#include "canids/window.hpp"

namespace canids {

WindowBuffer::WindowBuffer(int window) : window_(window) {
  if (window < 1) throw ValidationError("window length must be >= 1");
}

std::optional<FrameWindow> WindowBuffer::push(const CanFrame& frame) {
  frames_.push_back(frame);
  if (frames_.size() > static_cast<std::size_t>(window_)) frames_.pop_front();
  if (frames_.size() < static_cast<std::size_t>(window_)) return std::nullopt;
  FrameWindow w;
  w.frames.assign(frames_.begin(), frames_.end());
  return w;
}

void frame_features(const CanFrame& frame, double* out) {
  out[0] = static_cast<double>(frame.can_id) / static_cast<double>(kMaxCanId);
  out[1] = static_cast<double>(frame.dlc) / static_cast<double>(kMaxDlc);
  for (int i = 0; i < 8; ++i)
    out[2 + i] = static_cast<double>(frame.data[i]) / 255.0;
}

FeatureVector featurize(const FrameWindow& window) {
  const int w = static_cast<int>(window.frames.size());
  FeatureVector fv;
  fv.values.resize(w * kFeaturesPerFrame);
  fv.codes.resize(static_cast<std::size_t>(w) * kFeaturesPerFrame);
  const QuantSpec spec = input_quant_spec();
  for (int f = 0; f < w; ++f) {
    double* slot = fv.values.data() + f * kFeaturesPerFrame;
    frame_features(window.frames[static_cast<std::size_t>(f)], slot);
    for (int i = 0; i < kFeaturesPerFrame; ++i) {
      fv.codes[static_cast<std::size_t>(f * kFeaturesPerFrame + i)] =
          static_cast<std::uint8_t>(quantize(slot[i], spec));
    }
  }
  return fv;
}

}  // namespace canids
