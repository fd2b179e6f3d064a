#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bluetrack/calibration.hpp"
#include "bluetrack/error.hpp"
#include "bluetrack/localization.hpp"
#include "bluetrack/protocol.hpp"

namespace bluetrack {

struct MonitorConfig {
  // A displacement below this on both axes is treated as noise.
  double move_threshold = 1.0;
  // Spacing of the floor grid. Advisory: 3 to 5 m keeps false alarms down.
  double grid_spacing = 4.0;
  double cadence = 5.0;

  void validate() const {
    if (!std::isfinite(move_threshold) || move_threshold <= 0.0) {
      throw ConfigError("move_threshold must be positive");
    }
    if (!std::isfinite(grid_spacing) || grid_spacing <= 0.0) {
      throw ConfigError("grid_spacing must be positive");
    }
    if (!std::isfinite(cadence) || cadence <= 0.0) {
      throw ConfigError("cadence must be positive");
    }
  }
};

enum class LinkState { connected, error, disconnected };

inline const char* to_string(LinkState s) {
  switch (s) {
    case LinkState::connected: return "connected";
    case LinkState::error: return "error";
    case LinkState::disconnected: return "disconnected";
  }
  return "unknown";
}

struct Alarm {
  double since = 0.0;
  Point2D at;
};

struct DeviceTrack {
  DeviceId id;
  FriendlyName friendly;
  std::optional<Point2D> initial;
  std::optional<Point2D> last;
  // Last acknowledged position; movement is measured from here.
  std::optional<Point2D> reference;
  std::optional<Alarm> alarm;
  LinkState link = LinkState::connected;
  std::string link_reason;
  double last_signal_at = 0.0;

  explicit DeviceTrack(DeviceId device) : id(device), friendly{std::string{}, device} {}
};

enum class MonitorEventKind {
  device_registered,
  position_updated,
  alarm_raised,
  alarm_cleared,
  ap_error,
  ap_restored,
  monitor_error,
  device_renamed,
  device_disconnected,
  calibrated,
  layout_set,
  epoch_reset,
  service_stopped,
};

inline const char* to_string(MonitorEventKind k) {
  switch (k) {
    case MonitorEventKind::device_registered: return "device_registered";
    case MonitorEventKind::position_updated: return "position_updated";
    case MonitorEventKind::alarm_raised: return "alarm_raised";
    case MonitorEventKind::alarm_cleared: return "alarm_cleared";
    case MonitorEventKind::ap_error: return "ap_error";
    case MonitorEventKind::ap_restored: return "ap_restored";
    case MonitorEventKind::monitor_error: return "monitor_error";
    case MonitorEventKind::device_renamed: return "device_renamed";
    case MonitorEventKind::device_disconnected: return "device_disconnected";
    case MonitorEventKind::calibrated: return "calibrated";
    case MonitorEventKind::layout_set: return "layout_set";
    case MonitorEventKind::epoch_reset: return "epoch_reset";
    case MonitorEventKind::service_stopped: return "service_stopped";
  }
  return "unknown";
}

inline MonitorEventKind monitor_event_kind_from_string(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(MonitorEventKind::service_stopped); ++k) {
    const auto kind = static_cast<MonitorEventKind>(k);
    if (s == to_string(kind)) return kind;
  }
  throw ParseError("unknown monitor event kind '" + std::string(s) + "'");
}

struct MonitorEvent {
  std::uint64_t seq = 0;  // assigned by the service log
  double at = 0.0;
  MonitorEventKind kind = MonitorEventKind::position_updated;
  std::optional<DeviceId> device;
  std::optional<ApCode> ap;
  std::optional<Point2D> position;
  std::string text;  // friendly name, error reason
  nlohmann::json data;  // calibrated / layout_set payloads
};

inline nlohmann::json to_json(const MonitorEvent& ev) {
  nlohmann::json j{{"seq", ev.seq}, {"at", ev.at}, {"kind", to_string(ev.kind)}};
  if (ev.device) j["device"] = ev.device->value();
  if (ev.ap) j["ap"] = ev.ap->value();
  if (ev.position) j["position"] = {{"x", ev.position->x}, {"y", ev.position->y}};
  if (!ev.text.empty()) j["text"] = ev.text;
  if (!ev.data.is_null()) j["data"] = ev.data;
  return j;
}

inline MonitorEvent monitor_event_from_json(const nlohmann::json& j) {
  MonitorEvent ev;
  ev.seq = j.at("seq").get<std::uint64_t>();
  ev.at = j.at("at").get<double>();
  ev.kind = monitor_event_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("device")) ev.device = DeviceId::parse(j["device"].get<std::string>());
  if (j.contains("ap")) ev.ap = ApCode::parse(j["ap"].get<std::string>());
  if (j.contains("position")) {
    ev.position = Point2D{j["position"].at("x").get<double>(), j["position"].at("y").get<double>()};
  }
  if (j.contains("text")) ev.text = j["text"].get<std::string>();
  if (j.contains("data")) ev.data = j["data"];
  return ev;
}

namespace detail {

inline MonitorEvent device_event(MonitorEventKind kind, double now, const DeviceId& id,
                                 std::optional<Point2D> pos = std::nullopt) {
  MonitorEvent ev;
  ev.at = now;
  ev.kind = kind;
  ev.device = id;
  ev.position = pos;
  return ev;
}

}  // namespace detail

/// True when `to` is at least `threshold` away from `from` along x or y.
inline bool moved_significantly(Point2D from, Point2D to, double threshold) {
  return std::abs(to.x - from.x) >= threshold || std::abs(to.y - from.y) >= threshold;
}

/// Feeds one tracking signal into a device track.
///
/// The first signal fixes the initial location. After that an alarm is
/// raised when the new position differs from the last acknowledged one by
/// at least the threshold on either axis; the alarm latches until
/// acknowledged. Signals are ignored while the track's link is in error.
inline std::vector<MonitorEvent> process_signal(DeviceTrack& track, const TrackingSignal& sig,
                                                const ChannelParams& params,
                                                const ApLayout& layout,
                                                const MonitorConfig& cfg, double now) {
  std::vector<MonitorEvent> out;
  if (track.link == LinkState::error) return out;

  const DistanceTriple dists{distance_from_time(params, sig.round_trip[0]).meters,
                             distance_from_time(params, sig.round_trip[1]).meters,
                             distance_from_time(params, sig.round_trip[2]).meters};
  Point2D pos;
  try {
    pos = trilaterate(layout, dists);
  } catch (const DegenerateGeometry& e) {
    auto ev = detail::device_event(MonitorEventKind::monitor_error, now, track.id);
    ev.text = e.what();
    out.push_back(std::move(ev));
    return out;
  }

  track.link = LinkState::connected;
  track.link_reason.clear();
  track.last_signal_at = now;

  if (!track.initial) {
    track.initial = pos;
    track.last = pos;
    track.reference = pos;
    auto reg = detail::device_event(MonitorEventKind::device_registered, now, track.id, pos);
    reg.text = track.friendly.name;
    out.push_back(std::move(reg));
    out.push_back(detail::device_event(MonitorEventKind::position_updated, now, track.id, pos));
    return out;
  }

  track.last = pos;
  out.push_back(detail::device_event(MonitorEventKind::position_updated, now, track.id, pos));
  if (!track.alarm && moved_significantly(*track.reference, pos, cfg.move_threshold)) {
    track.alarm = Alarm{now, pos};
    out.push_back(detail::device_event(MonitorEventKind::alarm_raised, now, track.id, pos));
  }
  return out;
}

/// Refresh: silences the alarm and rebases the movement reference.
inline MonitorEvent acknowledge(DeviceTrack& track, double now) {
  if (!track.alarm) {
    throw NoActiveAlarm("device " + track.id.value() + " has no active alarm");
  }
  track.alarm.reset();
  track.reference = track.last;
  return detail::device_event(MonitorEventKind::alarm_cleared, now, track.id, track.last);
}

struct ShutdownVerdict {
  bool allowed = true;
  std::vector<DeviceId> connected;
};

/// All tracks of one deployment plus the access-point fault state.
/// Not internally synchronized; the service serializes access.
class MonitorEngine {
 public:
  explicit MonitorEngine(MonitorConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const MonitorConfig& config() const noexcept { return cfg_; }

  /// A new layout forgets which access points were down; a refit alone
  /// does not, since the fault is physical.
  void configure(std::optional<ChannelParams> params, std::optional<ApLayout> layout) {
    params_ = std::move(params);
    if (layout_ == layout) return;
    layout_ = std::move(layout);
    down_.clear();
    for (auto& [id, t] : tracks_) {
      if (t.link == LinkState::error) {
        t.link = LinkState::connected;
        t.link_reason.clear();
      }
    }
  }

  bool initialized() const noexcept { return params_.has_value() && layout_.has_value(); }

  std::vector<MonitorEvent> process(const TrackingSignal& sig, double now) {
    if (!initialized()) {
      throw NotInitialized("calibration and access point coordinates must be set first");
    }
    // With an access point down, any position is computed from a stale leg.
    if (!down_.empty()) return {};
    auto it = tracks_.find(sig.source);
    if (it == tracks_.end()) it = tracks_.emplace(sig.source, DeviceTrack(sig.source)).first;
    return process_signal(it->second, sig, *params_, *layout_, cfg_, now);
  }

  MonitorEvent acknowledge(const DeviceId& id, double now) {
    return bluetrack::acknowledge(track(id), now);
  }

  std::vector<MonitorEvent> handle_ap_disconnect(const ApCode& code, double now,
                                                 std::string reason = "access point disconnected") {
    require_known(code);
    std::vector<MonitorEvent> out;
    if (!down_.insert(code).second) return out;
    for (auto& [id, t] : tracks_) {
      if (t.link == LinkState::connected) {
        t.link = LinkState::error;
        t.link_reason = reason + ": " + code.value();
      }
    }
    MonitorEvent ev;
    ev.at = now;
    ev.kind = MonitorEventKind::ap_error;
    ev.ap = code;
    ev.text = std::move(reason);
    out.push_back(std::move(ev));
    return out;
  }

  std::vector<MonitorEvent> handle_ap_reconnect(const ApCode& code, double now) {
    require_known(code);
    std::vector<MonitorEvent> out;
    if (down_.erase(code) == 0) return out;
    if (down_.empty()) {
      for (auto& [id, t] : tracks_) {
        if (t.link == LinkState::error) {
          t.link = LinkState::connected;
          t.link_reason.clear();
        }
      }
    }
    MonitorEvent ev;
    ev.at = now;
    ev.kind = MonitorEventKind::ap_restored;
    ev.ap = code;
    out.push_back(std::move(ev));
    return out;
  }

  MonitorEvent device_disconnected(const DeviceId& id, double now) {
    auto& t = track(id);
    t.link = LinkState::disconnected;
    t.link_reason = "device disconnected";
    return detail::device_event(MonitorEventKind::device_disconnected, now, id);
  }

  MonitorEvent rename(const DeviceId& id, std::string name, double now) {
    auto& t = track(id);
    t.friendly.name = std::move(name);
    auto ev = detail::device_event(MonitorEventKind::device_renamed, now, id);
    ev.text = t.friendly.name;
    return ev;
  }

  /// Starts a fresh epoch: every track forgets its locations and alarms, so
  /// the next signal from each device becomes its initial location again.
  void reset_epoch() {
    for (auto& [id, t] : tracks_) {
      t.initial.reset();
      t.last.reset();
      t.reference.reset();
      t.alarm.reset();
    }
  }

  ShutdownVerdict can_shutdown() const {
    ShutdownVerdict v;
    for (const auto& [id, t] : tracks_) {
      if (t.link == LinkState::connected) v.connected.push_back(id);
    }
    v.allowed = v.connected.empty();
    return v;
  }

  DeviceTrack& track(const DeviceId& id) {
    auto it = tracks_.find(id);
    if (it == tracks_.end()) throw UnknownDevice("unknown device " + id.value());
    return it->second;
  }

  const std::map<DeviceId, DeviceTrack>& tracks() const noexcept { return tracks_; }
  const std::set<ApCode>& aps_down() const noexcept { return down_; }

 private:
  void require_known(const ApCode& code) const {
    if (!layout_ || !layout_->contains(code)) {
      throw UnknownAp("unknown access point " + code.value());
    }
  }

  MonitorConfig cfg_;
  std::optional<ChannelParams> params_;
  std::optional<ApLayout> layout_;
  std::map<DeviceId, DeviceTrack> tracks_;
  std::set<ApCode> down_;
};

}  // namespace bluetrack
