#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bluetrack/calibration.hpp"
#include "bluetrack/error.hpp"
#include "bluetrack/localization.hpp"
#include "bluetrack/monitor.hpp"
#include "bluetrack/protocol.hpp"

namespace bluetrack {

enum class Phase { uninitialized, calibrating, ready };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::uninitialized: return "uninitialized";
    case Phase::calibrating: return "calibrating";
    case Phase::ready: return "ready";
  }
  return "unknown";
}

/// Returned instead of a fit when fewer than five pairs were entered. The
/// operator either keeps entering pairs or aborts the initialization.
struct CalibrationPrompt {
  std::size_t count = 0;
  std::vector<std::string> options{"continue", "abort"};

  std::string message() const {
    return "Only " + std::to_string(count) +
           " distance-time pair(s) entered; at least 5 are required. "
           "Continue with the entry or abort the initialization.";
  }
};

struct CalibrationOutcome {
  std::optional<ChannelParams> params;
  std::optional<CalibrationPrompt> prompt;

  bool fitted() const noexcept { return params.has_value(); }
};

struct ApEntry {
  std::string code;
  double x = 0.0;
  double y = 0.0;
};

struct LayoutOutcome {
  GeometryCheck geometry;
  std::optional<std::string> warning;
};

struct DeviceView {
  DeviceId id;
  std::string name;
  std::optional<Point2D> initial;
  std::optional<Point2D> last;
  std::optional<Alarm> alarm;
  LinkState link = LinkState::connected;
  std::string link_reason;

  friend bool operator==(const DeviceView& a, const DeviceView& b) {
    auto same_alarm = [](const std::optional<Alarm>& x, const std::optional<Alarm>& y) {
      if (x.has_value() != y.has_value()) return false;
      return !x || (x->since == y->since && x->at == y->at);
    };
    return a.id == b.id && a.name == b.name && a.initial == b.initial && a.last == b.last &&
           same_alarm(a.alarm, b.alarm) && a.link == b.link && a.link_reason == b.link_reason;
  }
};

struct Snapshot {
  Phase phase = Phase::uninitialized;
  std::optional<ChannelParams> params;
  std::optional<ApLayout> layout;
  std::vector<DeviceView> devices;
  std::vector<ApCode> aps_down;
  std::uint64_t last_seq = 0;
  bool stopped = false;

  const DeviceView* find(const DeviceId& id) const {
    for (const auto& d : devices) {
      if (d.id == id) return &d;
    }
    return nullptr;
  }
};

inline nlohmann::json to_json(const Point2D& p) { return {{"x", p.x}, {"y", p.y}}; }

inline nlohmann::json to_json(const Snapshot& s) {
  nlohmann::json j;
  j["phase"] = to_string(s.phase);
  j["params"] = s.params ? to_json(*s.params) : nlohmann::json(nullptr);
  j["layout"] = s.layout ? to_json(*s.layout) : nlohmann::json(nullptr);
  j["last_seq"] = s.last_seq;
  j["stopped"] = s.stopped;
  auto down = nlohmann::json::array();
  for (const auto& c : s.aps_down) down.push_back(c.value());
  j["aps_down"] = down;
  auto devices = nlohmann::json::array();
  for (const auto& d : s.devices) {
    nlohmann::json dj;
    dj["id"] = d.id.value();
    dj["name"] = d.name;
    dj["display"] = FriendlyName{d.name, d.id}.display();
    dj["initial"] = d.initial ? to_json(*d.initial) : nlohmann::json(nullptr);
    dj["position"] = d.last ? to_json(*d.last) : nlohmann::json(nullptr);
    dj["alarm"] = d.alarm ? nlohmann::json{{"since", d.alarm->since}, {"at", to_json(d.alarm->at)}}
                          : nlohmann::json(nullptr);
    dj["marker"] = d.alarm ? "alarmed" : "default";
    dj["link"] = to_string(d.link);
    if (!d.link_reason.empty()) dj["link_reason"] = d.link_reason;
    devices.push_back(std::move(dj));
  }
  j["devices"] = devices;
  return j;
}

/// The Central Monitoring System: initialization workflows, live tracks,
/// and the append-only event log. Every mutation goes through one lock;
/// readers share it.
class CmsService {
 public:
  using Clock = std::function<double()>;

  explicit CmsService(MonitorConfig cfg = {}, Clock clock = {})
      : engine_(cfg), clock_(clock ? std::move(clock) : steady_clock()) {}

  CmsService(const CmsService&) = delete;
  CmsService& operator=(const CmsService&) = delete;

  // -- initialization ------------------------------------------------------

  /// Fits the channel from the entered pairs. Fewer than five pairs yields a
  /// prompt and leaves the fitted state untouched. A successful refit while
  /// tracking starts a fresh epoch.
  CalibrationOutcome submit_calibration_pairs(const CalibrationSet& pairs) {
    std::unique_lock lock(mutex_);
    CalibrationOutcome outcome;
    if (pairs.size() < kMinCalibrationSamples) {
      calibration_open_ = true;
      outcome.prompt = CalibrationPrompt{pairs.size()};
      return outcome;
    }
    const ChannelParams params = fit(pairs);  // DegenerateTimes propagates
    calibration_open_ = false;
    params_ = params;
    outcome.params = params;

    MonitorEvent ev;
    ev.kind = MonitorEventKind::calibrated;
    ev.data = to_json(params);
    append(std::move(ev));
    reinitialize();
    return outcome;
  }

  /// Closes an open calibration entry without storing anything.
  void abort_calibration() {
    std::unique_lock lock(mutex_);
    calibration_open_ = false;
  }

  LayoutOutcome set_ap_coordinates(const std::vector<ApEntry>& entries) {
    if (entries.size() != 3) {
      throw InvalidLayout("exactly three access points are required, got " +
                          std::to_string(entries.size()));
    }
    auto ap = [&](std::size_t i) {
      return AccessPoint{ApCode::parse(entries[i].code), {entries[i].x, entries[i].y}};
    };
    ApLayout layout(ap(0), ap(1), ap(2));

    std::unique_lock lock(mutex_);
    LayoutOutcome outcome;
    outcome.geometry = check_geometry(layout);
    if (!outcome.geometry.ok()) {
      outcome.warning =
          "access points are collinear; positions cannot be computed until the layout is fixed";
    }
    layout_ = layout;

    MonitorEvent ev;
    ev.kind = MonitorEventKind::layout_set;
    ev.data = to_json(layout);
    if (outcome.warning) ev.text = *outcome.warning;
    append(std::move(ev));
    reinitialize();
    return outcome;
  }

  // -- tracking ------------------------------------------------------------

  std::vector<MonitorEvent> ingest_signal(std::string_view line) {
    {
      std::shared_lock lock(mutex_);
      if (phase_locked() != Phase::ready) {
        throw NotInitialized("signals are accepted only after calibration and layout are set");
      }
    }
    const TrackingSignal sig = decode_signal(line);
    std::unique_lock lock(mutex_);
    if (phase_locked() != Phase::ready) {
      throw NotInitialized("signals are accepted only after calibration and layout are set");
    }
    return append_all(engine_.process(sig, clock_()));
  }

  /// Access point status as reported by the devices. The CMS never talks
  /// to access points directly.
  std::vector<MonitorEvent> report_ap(std::string_view code, bool connected) {
    const ApCode ap = ApCode::parse(code);
    std::unique_lock lock(mutex_);
    if (!layout_ || !layout_->contains(ap)) {
      throw UnknownAp("unknown access point " + ap.value());
    }
    return append_all(connected ? engine_.handle_ap_reconnect(ap, clock_())
                                : engine_.handle_ap_disconnect(ap, clock_()));
  }

  MonitorEvent report_device_offline(std::string_view id) {
    const DeviceId device = parse_known_id(id);
    std::unique_lock lock(mutex_);
    return append(engine_.device_disconnected(device, clock_()));
  }

  // -- operator actions ----------------------------------------------------

  MonitorEvent refresh(std::string_view id) {
    const DeviceId device = parse_known_id(id);
    std::unique_lock lock(mutex_);
    return append(engine_.acknowledge(device, clock_()));
  }

  MonitorEvent rename_device(std::string_view id, std::string name) {
    const DeviceId device = parse_known_id(id);
    std::unique_lock lock(mutex_);
    return append(engine_.rename(device, std::move(name), clock_()));
  }

  /// Exit: allowed only once no device is connected.
  ShutdownVerdict shutdown() {
    std::unique_lock lock(mutex_);
    auto verdict = engine_.can_shutdown();
    if (verdict.allowed && !stopped_) {
      stopped_ = true;
      MonitorEvent ev;
      ev.kind = MonitorEventKind::service_stopped;
      append(std::move(ev));
    }
    return verdict;
  }

  // -- reads ---------------------------------------------------------------

  Snapshot query_state() const {
    std::shared_lock lock(mutex_);
    Snapshot s;
    s.phase = phase_locked();
    s.params = params_;
    s.layout = layout_;
    s.last_seq = log_.empty() ? 0 : log_.back().seq;
    s.stopped = stopped_;
    for (const auto& code : engine_.aps_down()) s.aps_down.push_back(code);
    for (const auto& [id, t] : engine_.tracks()) {
      s.devices.push_back(
          DeviceView{id, t.friendly.name, t.initial, t.last, t.alarm, t.link, t.link_reason});
    }
    return s;
  }

  std::vector<MonitorEvent> events_since(std::uint64_t seq) const {
    std::shared_lock lock(mutex_);
    std::vector<MonitorEvent> out;
    for (const auto& ev : log_) {
      if (ev.seq > seq) out.push_back(ev);
    }
    return out;
  }

  /// Blocks until an event newer than `seq` exists, the service stops, or
  /// the timeout passes. Returns true when new events are available.
  template <typename Rep, typename Period>
  bool wait_for_events(std::uint64_t seq, std::chrono::duration<Rep, Period> timeout) const {
    std::unique_lock lock(wait_mutex_);
    return log_cv_.wait_for(lock, timeout, [&] {
      return last_seq_.load() > seq || stopped_flag_.load();
    }) && last_seq_.load() > seq;
  }

  bool stopped() const {
    std::shared_lock lock(mutex_);
    return stopped_;
  }

  const MonitorConfig& config() const noexcept { return engine_.config(); }

 private:
  static Clock steady_clock() {
    const auto start = std::chrono::steady_clock::now();
    return [start] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
  }

  DeviceId parse_known_id(std::string_view id) const {
    try {
      return DeviceId::parse(id);
    } catch (const InvalidDeviceId&) {
      throw UnknownDevice("unknown device '" + std::string(id) + "'");
    }
  }

  Phase phase_locked() const {
    if (params_ && layout_ && !calibration_open_) return Phase::ready;
    if (params_ || layout_ || calibration_open_) return Phase::calibrating;
    return Phase::uninitialized;
  }

  // Applies new params/layout to the engine. Any tracked device starts a
  // fresh epoch: its next signal is its initial location again.
  void reinitialize() {
    const bool had_tracks = !engine_.tracks().empty();
    engine_.configure(params_, layout_);
    if (had_tracks) {
      engine_.reset_epoch();
      MonitorEvent ev;
      ev.kind = MonitorEventKind::epoch_reset;
      append(std::move(ev));
    }
  }

  MonitorEvent append(MonitorEvent ev) {
    ev.seq = ++next_seq_;
    if (ev.at == 0.0) ev.at = clock_();
    log_.push_back(ev);
    {
      std::lock_guard wl(wait_mutex_);
      last_seq_.store(ev.seq);
      stopped_flag_.store(stopped_);
    }
    log_cv_.notify_all();
    return ev;
  }

  std::vector<MonitorEvent> append_all(std::vector<MonitorEvent> events) {
    for (auto& ev : events) ev = append(std::move(ev));
    return events;
  }

  mutable std::shared_mutex mutex_;
  MonitorEngine engine_;
  Clock clock_;
  std::optional<ChannelParams> params_;
  std::optional<ApLayout> layout_;
  bool calibration_open_ = false;
  bool stopped_ = false;
  std::vector<MonitorEvent> log_;
  std::uint64_t next_seq_ = 0;

  mutable std::mutex wait_mutex_;
  mutable std::condition_variable log_cv_;
  std::atomic<std::uint64_t> last_seq_{0};
  std::atomic<bool> stopped_flag_{false};
};

/// Rebuilds the device and phase view from an event log alone.
inline Snapshot project_events(const std::vector<MonitorEvent>& events) {
  Snapshot s;
  std::optional<ChannelParams> params;
  std::optional<ApLayout> layout;
  std::map<DeviceId, DeviceView> devices;
  std::set<ApCode> down;

  auto view = [&](const MonitorEvent& ev) -> DeviceView& {
    auto it = devices.find(*ev.device);
    if (it == devices.end()) {
      it = devices.emplace(*ev.device, DeviceView{*ev.device, {}, {}, {}, {}, {}, {}}).first;
    }
    return it->second;
  };

  for (const auto& ev : events) {
    s.last_seq = ev.seq;
    switch (ev.kind) {
      case MonitorEventKind::calibrated:
        params = params_from_json(ev.data);
        break;
      case MonitorEventKind::layout_set: {
        auto next = layout_from_json(ev.data);
        if (layout == next) break;
        layout = std::move(next);
        down.clear();
        for (auto& [id, d] : devices) {
          if (d.link == LinkState::error) {
            d.link = LinkState::connected;
            d.link_reason.clear();
          }
        }
        break;
      }
      case MonitorEventKind::epoch_reset:
        for (auto& [id, d] : devices) {
          d.initial.reset();
          d.last.reset();
          d.alarm.reset();
        }
        break;
      case MonitorEventKind::device_registered: {
        auto& d = view(ev);
        d.initial = ev.position;
        d.last = ev.position;
        d.link = LinkState::connected;
        d.link_reason.clear();
        break;
      }
      case MonitorEventKind::position_updated: {
        auto& d = view(ev);
        d.last = ev.position;
        d.link = LinkState::connected;
        d.link_reason.clear();
        break;
      }
      case MonitorEventKind::alarm_raised:
        view(ev).alarm = Alarm{ev.at, *ev.position};
        break;
      case MonitorEventKind::alarm_cleared:
        view(ev).alarm.reset();
        break;
      case MonitorEventKind::device_renamed:
        view(ev).name = ev.text;
        break;
      case MonitorEventKind::device_disconnected: {
        auto& d = view(ev);
        d.link = LinkState::disconnected;
        d.link_reason = "device disconnected";
        break;
      }
      case MonitorEventKind::ap_error:
        down.insert(*ev.ap);
        for (auto& [id, d] : devices) {
          if (d.link == LinkState::connected) {
            d.link = LinkState::error;
            d.link_reason = ev.text + ": " + ev.ap->value();
          }
        }
        break;
      case MonitorEventKind::ap_restored:
        down.erase(*ev.ap);
        if (down.empty()) {
          for (auto& [id, d] : devices) {
            if (d.link == LinkState::error) {
              d.link = LinkState::connected;
              d.link_reason.clear();
            }
          }
        }
        break;
      case MonitorEventKind::service_stopped:
        s.stopped = true;
        break;
      case MonitorEventKind::monitor_error:
        view(ev);
        break;
    }
  }

  s.params = params;
  s.layout = layout;
  s.phase = params && layout ? Phase::ready : (params || layout ? Phase::calibrating : Phase::uninitialized);
  for (auto& [id, d] : devices) s.devices.push_back(std::move(d));
  for (const auto& c : down) s.aps_down.push_back(c);
  return s;
}

}  // namespace bluetrack
