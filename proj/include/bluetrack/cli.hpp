#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "httplib.h"

#include "bluetrack/calibration.hpp"
#include "bluetrack/cms.hpp"
#include "bluetrack/http.hpp"
#include "bluetrack/sim.hpp"

namespace bluetrack::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInputError = 2,           // unreadable file, bad script, bad config, usage
  kInsufficientSamples = 3,  // calibration with fewer than five pairs
  kPortInUse = 4,
  kConnectionFailed = 5,
  kRejected = 6,             // replay: the service refused one or more records
};

/// Runs a scenario file and writes the event stream. `out_path` "-" means
/// stdout.
inline int cmd_sim(const std::string& script_path, const std::string& out_path,
                   std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  std::ifstream in(script_path);
  if (!in) {
    err << "error: cannot read script '" << script_path << "'\n";
    return kInputError;
  }
  std::vector<sim::SimEvent> events;
  try {
    auto scenario = sim::read_scenario(in);
    if (seed) scenario.channel.seed = *seed;
    if (!scenario.layout) throw ScriptError("scenario has no layout");
    events = sim::run_simulation(scenario.script, *scenario.layout, scenario.channel,
                                 scenario.options);
  } catch (const Error& e) {
    err << "error: " << script_path << ": " << e.what() << '\n';
    return kInputError;
  }

  if (out_path == "-") {
    sim::write_events(out, events);
    return kOk;
  }
  std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
  if (!file) {
    err << "error: cannot write '" << out_path << "'\n";
    return kInputError;
  }
  sim::write_events(file, events);
  return file ? kOk : kInputError;
}

inline int cmd_calibrate(const std::string& csv_path, std::ostream& out, std::ostream& err) {
  std::ifstream in(csv_path);
  if (!in) {
    err << "error: cannot read calibration file '" << csv_path << "'\n";
    return kInputError;
  }
  try {
    const auto params = fit(read_calibration_csv(in));
    out << to_json(params).dump(2) << '\n';
    return kOk;
  } catch (const InsufficientSamples& e) {
    err << CalibrationPrompt{e.count()}.message() << '\n';
    return kInsufficientSamples;
  } catch (const Error& e) {
    err << "error: " << csv_path << ": " << e.what() << '\n';
    return kInputError;
  }
}

struct ServeOptions {
  std::string config_path;  // optional
  std::string host = "127.0.0.1";
  int port = 8080;
  // Stop on termination even while devices are still connected.
  bool force = false;
};

/// Config document for `serve`:
///   {"host": "...", "monitor": {move_threshold, grid_spacing, cadence},
///    "layout": [{code,x,y} x3], "calibration_csv": "path"}
/// Every key is optional. A relative CSV path is taken from `base_dir`.
inline void apply_config(const nlohmann::json& cfg, ServeOptions& opts, MonitorConfig& monitor,
                         std::optional<std::vector<ApEntry>>& layout,
                         std::optional<CalibrationSet>& calibration,
                         const std::filesystem::path& base_dir = {}) {
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  opts.host = cfg.value("host", opts.host);
  if (cfg.contains("monitor")) {
    const auto& m = cfg.at("monitor");
    monitor.move_threshold = m.value("move_threshold", monitor.move_threshold);
    monitor.grid_spacing = m.value("grid_spacing", monitor.grid_spacing);
    monitor.cadence = m.value("cadence", monitor.cadence);
  }
  monitor.validate();
  if (cfg.contains("layout")) {
    std::vector<ApEntry> entries;
    for (const auto& a : cfg.at("layout")) {
      entries.push_back({a.at("code").get<std::string>(), a.at("x").get<double>(),
                         a.at("y").get<double>()});
    }
    layout = std::move(entries);
  }
  if (cfg.contains("calibration_csv")) {
    std::filesystem::path path = cfg.at("calibration_csv").get<std::string>();
    if (path.is_relative()) path = base_dir / path;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read calibration file '" + path.string() + "'");
    calibration = read_calibration_csv(in);
  }
}

/// Runs the service until it is shut down through the API or `terminate`
/// is raised. A termination request with devices still connected is logged
/// as blocked and waits for them unless `force` is set.
inline int cmd_serve(ServeOptions opts, std::ostream& log,
                     const std::atomic<bool>* terminate = nullptr) {
  MonitorConfig monitor;
  std::optional<std::vector<ApEntry>> layout;
  std::optional<CalibrationSet> calibration;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) {
      log << "error: cannot read config '" << opts.config_path << "'\n";
      return kInputError;
    }
    try {
      apply_config(nlohmann::json::parse(in), opts, monitor, layout, calibration,
                   std::filesystem::path(opts.config_path).parent_path());
    } catch (const std::exception& e) {
      log << "error: bad config '" << opts.config_path << "': " << e.what() << '\n';
      return kInputError;
    }
  }

  CmsService service(monitor);
  try {
    if (layout) {
      const auto outcome = service.set_ap_coordinates(*layout);
      if (outcome.warning) log << "warning: " << *outcome.warning << '\n';
    }
    if (calibration) {
      const auto outcome = service.submit_calibration_pairs(*calibration);
      if (outcome.prompt) {
        log << "error: bad config: " << outcome.prompt->message() << '\n';
        return kInputError;
      }
    }
  } catch (const Error& e) {
    log << "error: bad config: " << e.what() << '\n';
    return kInputError;
  }

  CmsHttpServer server(service);
  if (!server.bind(opts.host, opts.port)) {
    log << "error: cannot listen on " << opts.host << ':' << opts.port << " (address in use?)\n";
    return kPortInUse;
  }
  log << "serving on http://" << opts.host << ':' << server.port() << '\n' << std::flush;
  std::thread listener([&] { server.listen(); });

  bool reported_blocked = false;
  while (!service.stopped()) {
    if (terminate && terminate->load()) {
      const auto verdict = service.shutdown();
      if (verdict.allowed) break;
      if (!reported_blocked) {
        log << "shutdown blocked; connected devices:";
        for (const auto& id : verdict.connected) log << ' ' << id.value();
        log << (opts.force ? " (forcing)\n" : " (waiting)\n") << std::flush;
        reported_blocked = true;
      }
      if (opts.force) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  server.stop();
  listener.join();
  log << "stopped\n";
  return kOk;
}

/// Posts a recorded event stream to a running service, in order.
/// `speed` > 0 paces records by their timestamps divided by `speed`;
/// 0 sends as fast as possible.
inline int cmd_replay(const std::string& events_path, const std::string& url, double speed,
                      std::ostream& out, std::ostream& err) {
  std::ifstream in(events_path);
  if (!in) {
    err << "error: cannot read event file '" << events_path << "'\n";
    return kInputError;
  }
  std::vector<sim::SimEvent> events;
  try {
    events = sim::read_events(in);
  } catch (const Error& e) {
    err << "error: " << events_path << ": " << e.what() << '\n';
    return kInputError;
  }

  httplib::Client client(url);
  client.set_connection_timeout(std::chrono::seconds(2));
  if (!client.Get("/state")) {
    err << "error: cannot reach service at " << url << '\n';
    return kConnectionFailed;
  }

  std::size_t sent = 0;
  std::size_t rejected = 0;
  std::optional<double> previous;
  for (const auto& ev : events) {
    if (speed > 0.0 && previous && ev.at > *previous) {
      std::this_thread::sleep_for(std::chrono::duration<double>((ev.at - *previous) / speed));
    }
    previous = ev.at;

    httplib::Result res;
    switch (ev.kind) {
      case sim::EventKind::signal_emitted:
        res = client.Post("/signal", encode_signal(*ev.signal), "text/plain");
        break;
      case sim::EventKind::ap_disconnected:
      case sim::EventKind::ap_reconnected:
        res = client.Post("/ap-status",
                          nlohmann::json{{"code", ev.ap->value()},
                                         {"connected", ev.kind == sim::EventKind::ap_reconnected}}
                              .dump(),
                          "application/json");
        break;
      case sim::EventKind::device_offline:
        res = client.Post("/device-status",
                          nlohmann::json{{"id", ev.device->value()}, {"connected", false}}.dump(),
                          "application/json");
        break;
      case sim::EventKind::out_of_range:
        // Not something a device reports; the missing signal says enough.
        continue;
    }
    if (!res) {
      err << "error: lost connection to " << url << '\n';
      return kConnectionFailed;
    }
    ++sent;
    if (res->status != 200) {
      ++rejected;
      err << "rejected (" << res->status << ") at t=" << ev.at << ": " << res->body << '\n';
    }
  }
  out << "replayed " << sent << " record(s), " << rejected << " rejected\n";
  return rejected == 0 ? kOk : kRejected;
}

inline std::atomic<bool>& termination_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

/// Entry point shared by the `bluetrack` binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Indoor tracking: simulation, calibration and the central monitoring service"};
  app.require_subcommand(1);

  std::string script_path;
  std::string out_path = "-";
  std::optional<std::uint64_t> seed;
  auto* sim_cmd = app.add_subcommand("sim", "Run a scenario and write its event stream");
  sim_cmd->add_option("script", script_path, "Scenario JSON file")->required();
  sim_cmd->add_option("-o,--out", out_path, "Event file to write ('-' for stdout)");
  sim_cmd->add_option("--seed", seed, "Override the channel seed");

  std::string csv_path;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit signal speed and transmission error");
  cal_cmd->add_option("csv", csv_path, "distance_m,total_time_s CSV file")->required();

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the central monitoring service");
  serve_cmd->add_option("-c,--config", serve.config_path, "Service config JSON");
  serve_cmd->add_option("-p,--port", serve.port, "TCP port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_flag("--force", serve.force, "On termination, stop even with devices connected");

  std::string events_path;
  std::string url = "http://127.0.0.1:8080";
  double speed = 0.0;
  auto* replay_cmd = app.add_subcommand("replay", "Feed a recorded event file into a service");
  replay_cmd->add_option("events", events_path, "Event file written by 'sim'")->required();
  replay_cmd->add_option("--url", url, "Service base URL");
  replay_cmd->add_option("--speed", speed, "Pacing multiplier; 0 sends as fast as possible")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kInputError;
  }

  if (*sim_cmd) return cmd_sim(script_path, out_path, seed, out, err);
  if (*cal_cmd) return cmd_calibrate(csv_path, out, err);
  if (*serve_cmd) return cmd_serve(serve, err, &termination_flag());
  if (*replay_cmd) return cmd_replay(events_path, url, speed, out, err);
  return kInputError;
}

}  // namespace bluetrack::cli
