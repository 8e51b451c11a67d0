#include "canids/parse.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace canids {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void bad(std::string_view line, const std::string& why) {
  std::string msg = why + ": \"";
  msg.append(line.substr(0, 120));
  msg += '"';
  throw MalformedRecord(msg);
}

std::uint64_t parse_hex(std::string_view f, std::string_view line,
                        const char* what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v, 16);
  if (ec != std::errc{} || p != f.data() + f.size() || f.empty())
    bad(line, std::string("non-hex ") + what);
  return v;
}

}  // namespace

CanFrame parse_log_record(std::string_view line) {
  const auto fields = split_fields(line);
  if (fields.size() < 4) bad(line, "too few fields");

  CanFrame frame;

  const auto ts = fields[0];
  const auto [tp, terr] =
      std::from_chars(ts.data(), ts.data() + ts.size(), frame.timestamp);
  if (terr != std::errc{} || tp != ts.data() + ts.size() ||
      !std::isfinite(frame.timestamp) || frame.timestamp < 0.0)
    bad(line, "bad timestamp");

  const std::uint64_t id = parse_hex(fields[1], line, "CAN ID");
  if (id > kMaxCanId) bad(line, "CAN ID above 0x7FF");
  frame.can_id = static_cast<std::uint16_t>(id);

  const auto dlcf = fields[2];
  unsigned dlc = 0;
  const auto [dp, derr] =
      std::from_chars(dlcf.data(), dlcf.data() + dlcf.size(), dlc, 10);
  if (derr != std::errc{} || dp != dlcf.data() + dlcf.size())
    bad(line, "bad DLC");
  if (dlc > static_cast<unsigned>(kMaxDlc)) bad(line, "DLC above 8");
  frame.dlc = static_cast<std::uint8_t>(dlc);

  if (fields.size() != 4 + dlc) bad(line, "wrong field count");

  for (unsigned i = 0; i < dlc; ++i) {
    const std::uint64_t b = parse_hex(fields[3 + i], line, "data byte");
    if (b > 0xFF) bad(line, "data byte above 0xFF");
    frame.data[i] = static_cast<std::uint8_t>(b);
  }

  const auto flag = fields.back();
  if (flag == "R")
    frame.label = Label::Normal;
  else if (flag == "T")
    frame.label = Label::Attack;
  else
    bad(line, "bad flag (want R or T)");

  return frame;
}

std::string serialize_frame(const CanFrame& frame) {
  char buf[96];
  int n = std::snprintf(buf, sizeof(buf), "%.6f,%04X,%u", frame.timestamp,
                        frame.can_id, frame.dlc);
  for (int i = 0; i < frame.dlc; ++i)
    n += std::snprintf(buf + n, sizeof(buf) - n, ",%02X", frame.data[i]);
  n += std::snprintf(buf + n, sizeof(buf) - n, ",%c",
                     frame.label == Label::Attack ? 'T' : 'R');
  return std::string(buf, static_cast<std::size_t>(n));
}

Dataset read_dataset(const std::string& path, bool strict) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view sv = trim(line);
    if (sv.empty()) continue;
    try {
      const CanFrame frame = parse_log_record(sv);
      if (frame.label == Label::Attack)
        ++ds.stats.attack;
      else
        ++ds.stats.normal;
      ds.frames.push_back(frame);
    } catch (const MalformedRecord& e) {
      if (strict)
        throw MalformedRecord(path + ":" + std::to_string(lineno) + ": " +
                              e.what());
      ++ds.stats.malformed;
    }
  }
  if (in.bad()) throw IoError("read error on " + path);
  return ds;
}

}  // namespace canids
