#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "canids/types.hpp"

namespace canids {

/// Parse one log record in the Car Hacking CSV layout:
///   timestamp,ID(hex),DLC,byte0,...,byte(DLC-1),flag
/// flag is "R" (normal) or "T" (injected). Throws MalformedRecord.
CanFrame parse_log_record(std::string_view line);

/// Canonical CSV form: %.6f timestamp, 4-digit upper-hex ID, DLC payload
/// bytes as 2-digit upper hex. serialize(parse(line)) == normalized(line).
std::string serialize_frame(const CanFrame& frame);

struct DatasetStats {
  std::size_t normal = 0;
  std::size_t attack = 0;
  std::size_t malformed = 0;
};

struct Dataset {
  std::vector<CanFrame> frames;
  DatasetStats stats;
};

/// Read a whole log in file order. Malformed records are counted and skipped;
/// with strict=true the first one aborts the read (message carries the line
/// number either way).
Dataset read_dataset(const std::string& path, bool strict = false);

}  // namespace canids
