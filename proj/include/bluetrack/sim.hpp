#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bluetrack/calibration.hpp"
#include "bluetrack/error.hpp"
#include "bluetrack/localization.hpp"
#include "bluetrack/protocol.hpp"
#include "bluetrack/rng.hpp"

namespace bluetrack::sim {

/// The channel the simulator inverts: S = V*·(t/2) + C*, with Gaussian
/// noise on the total round-trip time.
struct ChannelTruth {
  double speed = 1.5e8;       // V*, m/s
  double error = 0.0;         // C*, m
  double noise_sigma = 0.0;   // seconds, on the round trip
  std::uint64_t seed = 1;

  void validate() const {
    if (!std::isfinite(speed) || speed <= 0.0) {
      throw ScriptError("channel speed must be positive");
    }
    if (!std::isfinite(error)) throw ScriptError("channel error must be finite");
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
      throw ScriptError("noise_sigma must be non-negative");
    }
  }
};

inline constexpr double kMinRoundTrip = 1e-12;
inline constexpr double kDefaultCadence = 5.0;
inline constexpr double kClassOneRange = 100.0;

/// Round-trip time a probe over `s` meters would take. Always consumes one
/// normal draw so the stream position does not depend on sigma.
inline double rtt_for_distance(const ChannelTruth& truth, double s, CounterRng& rng) {
  const double noise = rng.normal() * truth.noise_sigma;
  const double t = 2.0 * (s - truth.error) / truth.speed + noise;
  return std::max(t, kMinRoundTrip);
}

/// Calibration session against the simulated channel: one probe per
/// measured distance.
inline CalibrationSet simulate_calibration(const ChannelTruth& truth,
                                           std::span<const double> distances,
                                           CounterRng& rng) {
  CalibrationSet set;
  for (double s : distances) set.add(s, rtt_for_distance(truth, s, rng));
  return set;
}

struct Waypoint {
  double t = 0.0;
  Point2D at;
};

struct DeviceScript {
  DeviceId id;
  std::string name;
  std::vector<Waypoint> waypoints;

  /// Piecewise-linear position; held at the end waypoints outside their span.
  Point2D position_at(double t) const {
    if (t <= waypoints.front().t) return waypoints.front().at;
    if (t >= waypoints.back().t) return waypoints.back().at;
    auto hi = std::upper_bound(waypoints.begin(), waypoints.end(), t,
                               [](double v, const Waypoint& w) { return v < w.t; });
    auto lo = hi - 1;
    const double u = (t - lo->t) / (hi->t - lo->t);
    return {lo->at.x + u * (hi->at.x - lo->at.x), lo->at.y + u * (hi->at.y - lo->at.y)};
  }
};

enum class FaultKind { ap_disconnect, ap_reconnect, device_offline };

struct Fault {
  FaultKind kind = FaultKind::ap_disconnect;
  double at = 0.0;
  std::optional<ApCode> ap;
  std::optional<DeviceId> device;

  static Fault ap_disconnect(ApCode code, double at) {
    return {FaultKind::ap_disconnect, at, std::move(code), std::nullopt};
  }
  static Fault ap_reconnect(ApCode code, double at) {
    return {FaultKind::ap_reconnect, at, std::move(code), std::nullopt};
  }
  static Fault device_offline(DeviceId id, double at) {
    return {FaultKind::device_offline, at, std::nullopt, std::move(id)};
  }
};

struct SimScript {
  std::vector<DeviceScript> devices;
  std::vector<Fault> faults;
  // Last tick time; defaults to the latest waypoint time.
  std::optional<double> duration;

  double horizon() const {
    if (duration) return *duration;
    double h = 0.0;
    for (const auto& d : devices) {
      if (!d.waypoints.empty()) h = std::max(h, d.waypoints.back().t);
    }
    return h;
  }

  const DeviceScript* find(const DeviceId& id) const {
    for (const auto& d : devices) {
      if (d.id == id) return &d;
    }
    return nullptr;
  }

  void validate() const {
    std::set<DeviceId> ids;
    for (const auto& d : devices) {
      if (!ids.insert(d.id).second) {
        throw ScriptError("duplicate device id: " + d.id.value());
      }
      if (d.waypoints.empty()) {
        throw ScriptError("device " + d.id.value() + " has no waypoints");
      }
      for (std::size_t i = 0; i < d.waypoints.size(); ++i) {
        const auto& w = d.waypoints[i];
        if (!std::isfinite(w.t) || !std::isfinite(w.at.x) || !std::isfinite(w.at.y)) {
          throw ScriptError("device " + d.id.value() + " has a non-finite waypoint");
        }
        if (i > 0 && !(w.t > d.waypoints[i - 1].t)) {
          throw ScriptError("device " + d.id.value() +
                            ": waypoint times must be strictly increasing");
        }
      }
    }
    if (duration && (!std::isfinite(*duration) || *duration < 0.0)) {
      throw ScriptError("duration must be non-negative");
    }
    const double h = horizon();
    for (const auto& f : faults) {
      if (!std::isfinite(f.at) || f.at < 0.0 || f.at > h) {
        throw ScriptError("fault time " + std::to_string(f.at) + " outside script horizon");
      }
      if (f.kind == FaultKind::device_offline) {
        if (!f.device || !find(*f.device)) {
          throw ScriptError("device_offline fault names an unknown device");
        }
      } else if (!f.ap) {
        throw ScriptError("access point fault without an access point code");
      }
    }
  }
};

/// Returns a copy of `script` with `fault` appended. Faults at equal times
/// take effect in insertion order.
inline SimScript inject_fault(SimScript script, Fault fault) {
  const double h = script.horizon();
  if (!std::isfinite(fault.at) || fault.at < 0.0 || fault.at > h) {
    throw ScriptError("fault time " + std::to_string(fault.at) + " outside script horizon [0, " +
                      std::to_string(h) + "]");
  }
  script.faults.push_back(std::move(fault));
  return script;
}

enum class EventKind { signal_emitted, ap_disconnected, ap_reconnected, device_offline, out_of_range };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::signal_emitted: return "signal_emitted";
    case EventKind::ap_disconnected: return "ap_disconnected";
    case EventKind::ap_reconnected: return "ap_reconnected";
    case EventKind::device_offline: return "device_offline";
    case EventKind::out_of_range: return "out_of_range";
  }
  return "unknown";
}

struct SimEvent {
  double at = 0.0;
  EventKind kind = EventKind::signal_emitted;
  std::optional<TrackingSignal> signal;
  std::optional<ApCode> ap;
  std::optional<DeviceId> device;
  // True device position (signal_emitted) and leg length (out_of_range).
  std::optional<Point2D> truth;
  std::optional<double> distance_m;
};

struct SimOptions {
  double cadence = kDefaultCadence;
  double range_m = kClassOneRange;
};

inline std::vector<SimEvent> run_simulation(const SimScript& script, const ApLayout& layout,
                                            const ChannelTruth& truth,
                                            const SimOptions& options = {}) {
  script.validate();
  truth.validate();
  if (!std::isfinite(options.cadence) || options.cadence <= 0.0) {
    throw ScriptError("cadence must be positive");
  }
  if (!(options.range_m > 0.0)) throw ScriptError("range must be positive");
  for (const auto& f : script.faults) {
    if (f.ap && !layout.contains(*f.ap)) {
      throw ScriptError("fault names unknown access point " + f.ap->value());
    }
  }

  std::vector<std::size_t> order(script.faults.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return script.faults[a].at < script.faults[b].at;
  });

  CounterRng rng(truth.seed);
  std::set<ApCode> down;
  std::set<DeviceId> offline;
  std::vector<SimEvent> events;
  std::size_t next_fault = 0;

  const double horizon = script.horizon();
  // Tick count computed up front so float accumulation cannot add or drop a tick.
  const auto ticks = static_cast<std::uint64_t>(std::floor(horizon / options.cadence + 1e-9));
  for (std::uint64_t k = 0; k <= ticks; ++k) {
    const double now = static_cast<double>(k) * options.cadence;

    for (; next_fault < order.size() && script.faults[order[next_fault]].at <= now; ++next_fault) {
      const Fault& f = script.faults[order[next_fault]];
      SimEvent ev;
      ev.at = now;
      switch (f.kind) {
        case FaultKind::ap_disconnect:
          if (!down.insert(*f.ap).second) continue;
          ev.kind = EventKind::ap_disconnected;
          ev.ap = f.ap;
          break;
        case FaultKind::ap_reconnect:
          if (down.erase(*f.ap) == 0) continue;
          ev.kind = EventKind::ap_reconnected;
          ev.ap = f.ap;
          break;
        case FaultKind::device_offline:
          if (!offline.insert(*f.device).second) continue;
          ev.kind = EventKind::device_offline;
          ev.device = f.device;
          break;
      }
      events.push_back(std::move(ev));
    }

    for (const auto& dev : script.devices) {
      if (offline.count(dev.id)) continue;
      // Every signal needs all three legs.
      if (!down.empty()) continue;

      const Point2D p = dev.position_at(now);
      bool in_range = true;
      std::array<double, 3> legs{};
      for (std::size_t i = 0; i < 3; ++i) {
        legs[i] = distance(layout.position(i), p);
        if (legs[i] > options.range_m) {
          in_range = false;
          SimEvent ev;
          ev.at = now;
          ev.kind = EventKind::out_of_range;
          ev.device = dev.id;
          ev.ap = layout[i].code;
          ev.distance_m = legs[i];
          events.push_back(std::move(ev));
        }
      }
      if (!in_range) continue;

      TrackingSignal sig{dev.id, {}};
      for (std::size_t i = 0; i < 3; ++i) sig.round_trip[i] = rtt_for_distance(truth, legs[i], rng);
      SimEvent ev;
      ev.at = now;
      ev.kind = EventKind::signal_emitted;
      ev.device = dev.id;
      ev.signal = std::move(sig);
      ev.truth = p;
      events.push_back(std::move(ev));
    }
  }
  return events;
}

// ---------------------------------------------------------------------------
// Scenario files

/// Everything a simulation run needs, as read from one JSON document.
struct Scenario {
  SimScript script;
  std::optional<ApLayout> layout;
  ChannelTruth channel;
  SimOptions options;
};

namespace detail {

template <typename Fn>
decltype(auto) script_field(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ScriptError(std::string(what) + ": " + e.what());
  } catch (const InvalidCode& e) {
    throw ScriptError(std::string(what) + ": " + e.what());
  } catch (const InvalidDeviceId& e) {
    throw ScriptError(std::string(what) + ": " + e.what());
  } catch (const InvalidLayout& e) {
    throw ScriptError(std::string(what) + ": " + e.what());
  } catch (const DuplicateCode& e) {
    throw ScriptError(std::string(what) + ": " + e.what());
  }
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& doc) {
  Scenario sc;
  if (!doc.is_object()) throw ScriptError("scenario must be a JSON object");

  if (doc.contains("layout")) {
    sc.layout = detail::script_field("layout", [&] { return layout_from_json(doc.at("layout")); });
  }
  if (doc.contains("channel")) {
    detail::script_field("channel", [&] {
      const auto& c = doc.at("channel");
      sc.channel.speed = c.value("speed", sc.channel.speed);
      sc.channel.error = c.value("error", sc.channel.error);
      sc.channel.noise_sigma = c.value("noise_sigma", sc.channel.noise_sigma);
      sc.channel.seed = c.value("seed", sc.channel.seed);
      return 0;
    });
  }
  detail::script_field("options", [&] {
    sc.options.cadence = doc.value("cadence", sc.options.cadence);
    sc.options.range_m = doc.value("range_m", sc.options.range_m);
    if (doc.contains("duration")) sc.script.duration = doc.at("duration").get<double>();
    return 0;
  });

  detail::script_field("devices", [&] {
    for (const auto& d : doc.at("devices")) {
      DeviceScript dev{DeviceId::parse(d.at("id").get<std::string>()),
                       d.value("name", std::string{}), {}};
      for (const auto& w : d.at("waypoints")) {
        dev.waypoints.push_back({w.at("t").get<double>(), {w.at("x").get<double>(), w.at("y").get<double>()}});
      }
      sc.script.devices.push_back(std::move(dev));
    }
    return 0;
  });

  if (doc.contains("faults")) {
    detail::script_field("faults", [&] {
      for (const auto& f : doc.at("faults")) {
        const auto kind = f.at("kind").get<std::string>();
        const double at = f.at("at").get<double>();
        if (kind == "ap_disconnect") {
          sc.script.faults.push_back(Fault::ap_disconnect(ApCode::parse(f.at("ap").get<std::string>()), at));
        } else if (kind == "ap_reconnect") {
          sc.script.faults.push_back(Fault::ap_reconnect(ApCode::parse(f.at("ap").get<std::string>()), at));
        } else if (kind == "device_offline") {
          sc.script.faults.push_back(
              Fault::device_offline(DeviceId::parse(f.at("device").get<std::string>()), at));
        } else {
          throw ScriptError("unknown fault kind '" + kind + "'");
        }
      }
      return 0;
    });
  }

  sc.channel.validate();
  sc.script.validate();
  return sc;
}

inline Scenario read_scenario(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ScriptError(std::string("scenario is not valid JSON: ") + e.what());
  }
  return scenario_from_json(doc);
}

// ---------------------------------------------------------------------------
// Event streams: one JSON object per line.

inline nlohmann::json to_json(const SimEvent& ev) {
  nlohmann::json j{{"at", ev.at}, {"kind", to_string(ev.kind)}};
  if (ev.device) j["device"] = ev.device->value();
  if (ev.ap) j["ap"] = ev.ap->value();
  if (ev.signal) {
    auto line = encode_signal(*ev.signal);
    line.pop_back();
    j["signal"] = line;
  }
  if (ev.truth) j["truth"] = {ev.truth->x, ev.truth->y};
  if (ev.distance_m) j["distance_m"] = *ev.distance_m;
  return j;
}

inline SimEvent event_from_json(const nlohmann::json& j) {
  SimEvent ev;
  ev.at = j.at("at").get<double>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "signal_emitted") ev.kind = EventKind::signal_emitted;
  else if (kind == "ap_disconnected") ev.kind = EventKind::ap_disconnected;
  else if (kind == "ap_reconnected") ev.kind = EventKind::ap_reconnected;
  else if (kind == "device_offline") ev.kind = EventKind::device_offline;
  else if (kind == "out_of_range") ev.kind = EventKind::out_of_range;
  else throw ParseError("unknown event kind '" + kind + "'");
  if (j.contains("device")) ev.device = DeviceId::parse(j["device"].get<std::string>());
  if (j.contains("ap")) ev.ap = ApCode::parse(j["ap"].get<std::string>());
  if (j.contains("signal")) ev.signal = decode_signal(j["signal"].get<std::string>());
  if (j.contains("truth")) ev.truth = Point2D{j["truth"][0].get<double>(), j["truth"][1].get<double>()};
  if (j.contains("distance_m")) ev.distance_m = j["distance_m"].get<double>();
  return ev;
}

inline void write_events(std::ostream& out, std::span<const SimEvent> events) {
  for (const auto& ev : events) out << to_json(ev).dump() << '\n';
}

inline std::vector<SimEvent> read_events(std::istream& in) {
  std::vector<SimEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      events.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("event line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("event line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return events;
}

}  // namespace bluetrack::sim
