#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bluetrack/error.hpp"

namespace bluetrack {

/// Identifier a tracker puts at the front of every tracking signal.
/// 1 to 16 ASCII alphanumerics.
class DeviceId {
 public:
  static constexpr std::size_t kMaxLength = 16;

  static DeviceId parse(std::string_view text) {
    if (text.empty() || text.size() > kMaxLength) {
      throw InvalidDeviceId("device id must be 1-16 characters: '" +
                            std::string(text) + "'");
    }
    for (char ch : text) {
      if (!std::isalnum(static_cast<unsigned char>(ch))) {
        throw InvalidDeviceId("device id must be alphanumeric: '" +
                              std::string(text) + "'");
      }
    }
    return DeviceId(std::string(text));
  }

  const std::string& value() const noexcept { return value_; }

  friend auto operator<=>(const DeviceId&, const DeviceId&) = default;

 private:
  explicit DeviceId(std::string v) : value_(std::move(v)) {}
  std::string value_;
};

/// Three-letter code an access point appends to every echo.
class ApCode {
 public:
  static ApCode parse(std::string_view text) {
    if (text.size() != 3 ||
        !std::all_of(text.begin(), text.end(), [](char ch) {
          return std::isalpha(static_cast<unsigned char>(ch)) != 0;
        })) {
      throw InvalidCode("access point code must be exactly three letters: '" +
                        std::string(text) + "'");
    }
    return ApCode(std::string(text));
  }

  const std::string& value() const noexcept { return value_; }

  friend auto operator<=>(const ApCode&, const ApCode&) = default;

 private:
  explicit ApCode(std::string v) : value_(std::move(v)) {}
  std::string value_;
};

inline ApCode validate_ap_code(std::string_view text) { return ApCode::parse(text); }

/// Operator-visible label; the name can change, the id cannot.
struct FriendlyName {
  std::string name;
  DeviceId id;

  // Rendered the way the access point console shows a peer: "Luggage(LG13)".
  std::string display() const {
    if (name.empty()) return id.value();
    return name + "(" + id.value() + ")";
  }

  friend bool operator==(const FriendlyName&, const FriendlyName&) = default;
};

/// One `SourceID,time_AP1,time_AP2,time_AP3` record. Times are round-trip
/// totals in seconds.
struct TrackingSignal {
  DeviceId source;
  std::array<double, 3> round_trip{};

  friend bool operator==(const TrackingSignal&, const TrackingSignal&) = default;
};

namespace detail {

inline constexpr int kMinFractionDigits = 9;

inline bool is_valid_time(double t) { return std::isfinite(t) && t > 0.0; }

}  // namespace detail

/// Fixed-point decimal seconds. At least nine fractional digits are always
/// written; more are written when the shortest exact representation needs
/// them, so parsing the text gives back the same double.
inline std::string format_seconds(double seconds) {
  std::array<char, 512> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), seconds,
                                 std::chars_format::fixed);
  if (ec != std::errc{}) {
    throw ParseError("cannot format time value");
  }
  std::string out(buf.data(), end);
  auto dot = out.find('.');
  if (dot == std::string::npos) {
    out.push_back('.');
    dot = out.size() - 1;
  }
  const auto fraction = static_cast<int>(out.size() - dot - 1);
  if (fraction < detail::kMinFractionDigits) {
    out.append(static_cast<std::size_t>(detail::kMinFractionDigits - fraction), '0');
  }
  return out;
}

/// Newline-terminated wire line.
inline std::string encode_signal(const TrackingSignal& sig) {
  std::string line = sig.source.value();
  for (double t : sig.round_trip) {
    line.push_back(',');
    line += format_seconds(t);
  }
  line.push_back('\n');
  return line;
}

inline double parse_seconds(std::string_view field) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (field.empty() || ec != std::errc{} || ptr != last) {
    throw ParseError("time field is not a decimal number: '" + std::string(field) + "'");
  }
  if (!detail::is_valid_time(value)) {
    throw ParseError("time field must be a positive finite number: '" +
                     std::string(field) + "'");
  }
  return value;
}

/// Parses one wire line. A single trailing "\n" or "\r\n" is accepted.
inline TrackingSignal decode_signal(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

  std::array<std::string_view, 4> fields;
  std::size_t count = 0;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    const auto piece = line.substr(start, comma == std::string_view::npos
                                              ? std::string_view::npos
                                              : comma - start);
    if (count == fields.size()) {
      throw ParseError("expected 4 comma-separated fields, got more");
    }
    fields[count++] = piece;
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (count != fields.size()) {
    throw ParseError("expected 4 comma-separated fields, got " + std::to_string(count));
  }

  std::optional<DeviceId> source;
  try {
    source = DeviceId::parse(fields[0]);
  } catch (const InvalidDeviceId& e) {
    throw ParseError(e.what());
  }
  return TrackingSignal{*source,
                        {parse_seconds(fields[1]), parse_seconds(fields[2]),
                         parse_seconds(fields[3])}};
}

// ---------------------------------------------------------------------------
// Access point echo frames

/// A probe as it comes back from an access point: the untouched payload
/// plus the access point's code. On the wire: `<payload>|<code>`.
struct EchoFrame {
  static constexpr char kSeparator = '|';

  std::string payload;
  ApCode code;

  std::string wire() const { return payload + kSeparator + code.value(); }

  friend bool operator==(const EchoFrame&, const EchoFrame&) = default;
};

/// Probe token `PING-<8 hex digits>`.
inline std::string make_probe_payload(std::uint32_t nonce) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "PING-%08x", nonce);
  return buf;
}

inline EchoFrame append_code(std::string_view payload, const ApCode& code) {
  if (payload.empty()) {
    throw FrameError("echo payload is empty");
  }
  if (payload.find(EchoFrame::kSeparator) != std::string_view::npos) {
    throw FrameError("payload already carries an access point code: '" +
                     std::string(payload) + "'");
  }
  if (payload.find('\n') != std::string_view::npos) {
    throw FrameError("payload must be a single line");
  }
  return EchoFrame{std::string(payload), code};
}

inline EchoFrame strip_code(std::string_view wire) {
  const auto sep = wire.rfind(EchoFrame::kSeparator);
  if (sep == std::string_view::npos) {
    throw FrameError("echo frame has no access point code");
  }
  try {
    return append_code(wire.substr(0, sep), ApCode::parse(wire.substr(sep + 1)));
  } catch (const InvalidCode& e) {
    throw FrameError(e.what());
  }
}

// ---------------------------------------------------------------------------

/// Codes in use within one deployment. Thread-safe.
class ApRegistry {
 public:
  void register_ap(const ApCode& code, std::string name) {
    std::lock_guard lock(mutex_);
    if (!names_.emplace(code, std::move(name)).second) {
      throw DuplicateCode("access point code already registered: " + code.value());
    }
  }

  bool contains(const ApCode& code) const {
    std::lock_guard lock(mutex_);
    return names_.count(code) != 0;
  }

  std::optional<std::string> name_of(const ApCode& code) const {
    std::lock_guard lock(mutex_);
    auto it = names_.find(code);
    if (it == names_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return names_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<ApCode, std::string> names_;
};

}  // namespace bluetrack
