#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace canids {

using Real = double;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr std::uint16_t kMaxCanId = 0x7FF;  // 11-bit identifiers only
inline constexpr int kMaxDlc = 8;
inline constexpr int kFeaturesPerFrame = 10;  // id, dlc, 8 payload bytes
inline constexpr int kDefaultWindow = 4;

enum class Label : std::uint8_t { Normal = 0, Attack = 1 };

enum class AttackKind { Dos, Fuzzy };

inline const char* to_string(AttackKind k) {
  return k == AttackKind::Dos ? "dos" : "fuzzy";
}

/// One timestamped CAN 2.0A message. data[i] for i >= dlc is zero.
struct CanFrame {
  double timestamp = 0.0;  // seconds, fractional
  std::uint16_t can_id = 0;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, 8> data{};
  Label label = Label::Normal;

  bool operator==(const CanFrame&) const = default;
};

/// A window of W consecutive frames in arrival order.
struct FrameWindow {
  std::vector<CanFrame> frames;

  // Attack iff any member frame is an attack frame.
  Label label() const {
    for (const auto& f : frames)
      if (f.label == Label::Attack) return Label::Attack;
    return Label::Normal;
  }
};

/// Flattened window encoding: W*10 floats in [0,1] plus their 8-bit codes.
struct FeatureVector {
  VecX values;
  std::vector<std::uint8_t> codes;
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error {
  using Error::Error;
};
struct MalformedRecord : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct NotCalibrated : Error {
  using Error::Error;
};
struct EmptyDataset : Error {
  using Error::Error;
};
struct DivergenceDetected : Error {
  using Error::Error;
};
struct WindowOutOfRange : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};

}  // namespace canids
