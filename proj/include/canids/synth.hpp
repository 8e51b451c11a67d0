#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "canids/types.hpp"

namespace canids {

enum class PayloadKind { Constant, Counter, Noise };

struct NormalSource {
  std::uint16_t id = 0;
  double period_ms = 10.0;  // > 0
  PayloadKind payload = PayloadKind::Constant;
  std::array<std::uint8_t, 8> base{};
  std::uint8_t dlc = 8;
};

/// Periodic normal traffic model; frames of all sources are merged into one
/// timestamp-sorted stream.
struct TrafficProfile {
  std::vector<NormalSource> sources;
  double duration_s = 60.0;
};

TrafficProfile default_profile(double duration_s);

struct AttackSpec {
  AttackKind kind = AttackKind::Dos;
  double rate_hz = 2000.0;  // > 0
  double start_s = 0.0;
  double stop_s = 0.0;  // start < stop <= duration
};

/// Deterministic given the seed. Each source emits ceil(duration/period)
/// frames on its nominal grid with jitter <= 1% of the period; timestamps sit
/// on a microsecond grid so the CSV round-trip is lossless.
std::vector<CanFrame> generate_normal(const TrafficProfile& profile,
                                      std::uint64_t seed);

/// Merge attack frames into the stream, labelled Attack. DoS: highest
/// priority flood, ID 0x000, zero payload. Fuzzy: uniform random ID in
/// [0, 0x7FF] and uniform random 8-byte payload. Throws WindowOutOfRange if
/// the attack interval falls outside [0, duration].
std::vector<CanFrame> inject(std::vector<CanFrame> stream,
                             const AttackSpec& spec, std::uint64_t seed,
                             double duration_s);

/// Write the stream in the dataset CSV layout; read_dataset round-trips it
/// losslessly.
void write_log(const std::vector<CanFrame>& stream, const std::string& path);

/// Load a profile from JSON ({"duration_s": ..., "sources": [{"id", "period_ms",
/// "payload", "base", "dlc"}]}).
TrafficProfile load_profile(const std::string& path);

}  // namespace canids
