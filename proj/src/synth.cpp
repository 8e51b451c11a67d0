#include "canids/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "canids/parse.hpp"
#include "canids/rng.hpp"

namespace canids {
namespace {

// Timestamps live on a microsecond grid so the %.6f CSV round-trip is exact.
double grid_time(double seconds) {
  const auto us = static_cast<std::int64_t>(std::llround(seconds * 1e6));
  return static_cast<double>(us < 0 ? 0 : us) / 1e6;
}

void sort_stream(std::vector<CanFrame>& stream) {
  // lower ID wins the bus on simultaneous arrival; otherwise keep source order
  std::stable_sort(stream.begin(), stream.end(),
                   [](const CanFrame& a, const CanFrame& b) {
                     if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                     return a.can_id < b.can_id;
                   });
}

constexpr std::uint64_t kAttackSalt = 0xA77ACC;

}  // namespace

TrafficProfile default_profile(double duration_s) {
  TrafficProfile p;
  p.duration_s = duration_s;
  p.sources = {
      {0x110, 10.0, PayloadKind::Counter, {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}, 8},
      {0x120, 10.0, PayloadKind::Constant, {0x12, 0x20, 0xFF, 0x00, 0x40, 0xCE, 0x00, 0x01}, 8},
      {0x18F, 20.0, PayloadKind::Noise, {0xFE, 0x5B, 0x00, 0x00, 0x00, 0x3C, 0x00, 0x00}, 8},
      {0x220, 20.0, PayloadKind::Counter, {0x08, 0x00, 0x00, 0x10, 0x00, 0x00, 0x00, 0x00}, 8},
      {0x2C0, 50.0, PayloadKind::Constant, {0x14, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}, 8},
      {0x316, 50.0, PayloadKind::Noise, {0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F}, 8},
      {0x43F, 100.0, PayloadKind::Constant, {0x01, 0x45, 0x60, 0xFF, 0x00, 0x00, 0x00, 0x00}, 4},
      {0x545, 5.0, PayloadKind::Counter, {0xD8, 0x00, 0x00, 0x8B, 0x00, 0x00, 0x00, 0x00}, 8},
  };
  return p;
}

std::vector<CanFrame> generate_normal(const TrafficProfile& profile,
                                      std::uint64_t seed) {
  if (profile.duration_s <= 0.0)
    throw ValidationError("traffic duration must be positive");
  for (const auto& s : profile.sources) {
    if (s.period_ms <= 0.0) throw ValidationError("source period must be positive");
    if (s.id > kMaxCanId) throw ValidationError("source ID above 0x7FF");
    if (s.dlc > kMaxDlc) throw ValidationError("source DLC above 8");
  }

  std::vector<CanFrame> stream;
  for (std::size_t si = 0; si < profile.sources.size(); ++si) {
    const auto& src = profile.sources[si];
    Rng rng(mix_seed(seed, si));
    const double period_s = src.period_ms / 1000.0;
    // one frame per nominal grid point inside [0, duration); jitter never
    // changes the count
    for (std::int64_t k = 0; static_cast<double>(k) * period_s < profile.duration_s;
         ++k) {
      const double jitter = rng.uniform(-0.01 * period_s, 0.01 * period_s);
      CanFrame f;
      f.timestamp = grid_time(static_cast<double>(k) * period_s + jitter);
      f.can_id = src.id;
      f.dlc = src.dlc;
      f.data = src.base;
      switch (src.payload) {
        case PayloadKind::Constant:
          break;
        case PayloadKind::Counter:
          if (src.dlc > 0) {
            const int last = src.dlc - 1;
            f.data[last] = static_cast<std::uint8_t>(
                (src.base[last] + static_cast<std::uint64_t>(k)) & 0xFF);
          }
          break;
        case PayloadKind::Noise:
          for (int i = 0; i < src.dlc; ++i)
            f.data[i] = static_cast<std::uint8_t>(
                (src.base[i] + 256 + rng.uniform_int(-2, 2)) & 0xFF);
          break;
      }
      for (int i = src.dlc; i < 8; ++i) f.data[i] = 0;
      f.label = Label::Normal;
      stream.push_back(f);
    }
  }
  sort_stream(stream);
  return stream;
}

std::vector<CanFrame> inject(std::vector<CanFrame> stream, const AttackSpec& spec,
                             std::uint64_t seed, double duration_s) {
  if (spec.rate_hz <= 0.0) throw ValidationError("attack rate must be positive");
  if (spec.start_s < 0.0 || spec.start_s >= spec.stop_s || spec.stop_s > duration_s)
    throw WindowOutOfRange("attack interval must satisfy 0 <= start < stop <= duration");

  Rng rng(mix_seed(seed, kAttackSalt));
  const double period_s = 1.0 / spec.rate_hz;
  const auto count = static_cast<std::int64_t>(
      std::floor((spec.stop_s - spec.start_s) * spec.rate_hz + 1e-9));

  for (std::int64_t k = 0; k < count; ++k) {
    CanFrame f;
    f.timestamp = grid_time(spec.start_s + static_cast<double>(k) * period_s);
    f.label = Label::Attack;
    if (spec.kind == AttackKind::Dos) {
      f.can_id = 0x000;
      f.dlc = 8;
      f.data = {};
    } else {
      f.can_id = static_cast<std::uint16_t>(rng.uniform_below(kMaxCanId + 1));
      f.dlc = 8;
      for (auto& b : f.data)
        b = static_cast<std::uint8_t>(rng.uniform_below(256));
    }
    stream.push_back(f);
  }
  sort_stream(stream);
  return stream;
}

void write_log(const std::vector<CanFrame>& stream, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& frame : stream) out << serialize_frame(frame) << '\n';
  out.flush();
  if (!out) throw IoError("write error on " + path);
}

TrafficProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed traffic profile: " + std::string(e.what()));
  }

  try {
    TrafficProfile p;
    p.duration_s = j.at("duration_s").get<double>();
    for (const auto& js : j.at("sources")) {
      NormalSource s;
      s.id = js.at("id").get<std::uint16_t>();
      s.period_ms = js.at("period_ms").get<double>();
      const std::string kind = js.value("payload", "constant");
      if (kind == "constant")
        s.payload = PayloadKind::Constant;
      else if (kind == "counter")
        s.payload = PayloadKind::Counter;
      else if (kind == "noise")
        s.payload = PayloadKind::Noise;
      else
        throw ValidationError("unknown payload kind \"" + kind + "\"");
      if (js.contains("base")) {
        const auto& base = js.at("base");
        if (base.size() > 8) throw ValidationError("payload base longer than 8 bytes");
        for (std::size_t i = 0; i < base.size(); ++i)
          s.base[i] = base[i].get<std::uint8_t>();
      }
      s.dlc = js.value("dlc", std::uint8_t{8});
      p.sources.push_back(s);
    }
    if (p.duration_s <= 0.0) throw ValidationError("duration_s must be positive");
    for (const auto& s : p.sources) {
      if (s.period_ms <= 0.0) throw ValidationError("period_ms must be positive");
      if (s.id > kMaxCanId) throw ValidationError("source ID above 0x7FF");
      if (s.dlc > kMaxDlc) throw ValidationError("dlc above 8");
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed traffic profile: " + std::string(e.what()));
  }
}

}  // namespace canids
