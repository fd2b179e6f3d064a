#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "bluetrack/calibration.hpp"
#include "bluetrack/cms.hpp"
#include "bluetrack/error.hpp"

namespace bluetrack {

// HTTP status for each error kind the service can raise.
inline int http_status_for(const Error& e) {
  const auto& k = e.kind();
  if (k == "UnknownDevice" || k == "UnknownAp") return 404;
  if (k == "NotInitialized" || k == "NoActiveAlarm" || k == "DuplicateCode") return 409;
  return 400;
}

/// JSON-over-HTTP front end of a CmsService.
///
///   GET  /state                 snapshot
///   POST /calibration           {"pairs":[{distance_m,total_time_s}]}, CSV body, or {"action":"abort"}
///   POST /layout                {"aps":[{code,x,y} x3]}
///   POST /signal                raw wire line, or {"line": "..."}
///   POST /refresh/{id}
///   POST /rename/{id}           {"name": "..."}
///   POST /shutdown              200 ok | 409 blocked
///   GET  /events?since=N&follow=0|1   line-delimited JSON records
///   POST /ap-status             {"code": "eWg", "connected": false}
///   POST /device-status         {"id": "LG13", "connected": false}
class CmsHttpServer {
 public:
  explicit CmsHttpServer(CmsService& service) : service_(service) {
    // httplib's defaults include SO_REUSEPORT, which would let a second
    // service share the port silently. Keep only SO_REUSEADDR.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  ~CmsHttpServer() { stop(); }

  CmsHttpServer(const CmsHttpServer&) = delete;
  CmsHttpServer& operator=(const CmsHttpServer&) = delete;

  /// Binds without serving. Port 0 picks a free port. Returns false when the
  /// address is in use.
  bool bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      return port_ > 0;
    }
    if (!server_.bind_to_port(host, port)) return false;
    port_ = port;
    return true;
  }

  /// Serves until stop(); blocks the calling thread.
  bool listen() { return server_.listen_after_bind(); }

  void stop() {
    stopping_ = true;
    if (server_.is_running()) server_.stop();
  }

  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const noexcept { return port_; }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;

  static void reply(Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename Fn>
  static void guarded(Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const InsufficientSamples& e) {
      reply(res, 400, {{"error", e.kind()}, {"message", e.what()}, {"count", e.count()}});
    } catch (const Error& e) {
      reply(res, http_status_for(e), {{"error", e.kind()}, {"message", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", "BadRequest"}, {"message", e.what()}});
    }
  }

  static nlohmann::json events_json(const std::vector<MonitorEvent>& events) {
    auto arr = nlohmann::json::array();
    for (const auto& ev : events) arr.push_back(to_json(ev));
    return arr;
  }

  static CalibrationSet pairs_from_json(const nlohmann::json& pairs) {
    CalibrationSet set;
    for (const auto& p : pairs) {
      const double dist = p.at("distance_m").get<double>();
      const auto& t = p.at("total_time_s");
      if (t.is_array()) {
        const auto times = t.get<std::vector<double>>();
        set.add_repeated(dist, times);
      } else {
        set.add(dist, t.get<double>());
      }
    }
    return set;
  }

  void routes() {
    server_.Get("/state", [this](const Request&, Response& res) {
      reply(res, 200, to_json(service_.query_state()));
    });

    server_.Post("/calibration", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        CalibrationSet set;
        const auto type = req.get_header_value("Content-Type");
        if (type.rfind("text/csv", 0) == 0) {
          std::istringstream in(req.body);
          set = read_calibration_csv(in);
        } else {
          const auto body = nlohmann::json::parse(req.body);
          if (body.is_object() && body.value("action", std::string{}) == "abort") {
            service_.abort_calibration();
            reply(res, 200, {{"status", "aborted"},
                             {"phase", to_string(service_.query_state().phase)}});
            return;
          }
          set = pairs_from_json(body.is_array() ? body : body.at("pairs"));
        }
        const auto outcome = service_.submit_calibration_pairs(set);
        if (outcome.prompt) {
          reply(res, 200, {{"status", "prompt"},
                           {"count", outcome.prompt->count},
                           {"options", outcome.prompt->options},
                           {"message", outcome.prompt->message()}});
        } else {
          reply(res, 200, {{"status", "fitted"}, {"params", to_json(*outcome.params)}});
        }
      });
    });

    server_.Post("/layout", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        const auto& aps = body.is_array() ? body : body.at("aps");
        std::vector<ApEntry> entries;
        for (const auto& a : aps) {
          entries.push_back({a.at("code").get<std::string>(), a.at("x").get<double>(),
                             a.at("y").get<double>()});
        }
        const auto outcome = service_.set_ap_coordinates(entries);
        nlohmann::json out{{"status", "ok"},
                           {"geometry", outcome.geometry.ok() ? "ok" : "degenerate"}};
        if (outcome.warning) out["warning"] = *outcome.warning;
        reply(res, 200, out);
      });
    });

    server_.Post("/signal", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        std::string line = req.body;
        if (!line.empty() && line.front() == '{') {
          line = nlohmann::json::parse(line).at("line").get<std::string>();
        }
        const auto events = service_.ingest_signal(line);
        reply(res, 200, {{"status", "ack"}, {"events", events_json(events)}});
      });
    });

    server_.Post(R"(/refresh/([^/]+))", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        const auto ev = service_.refresh(req.matches[1].str());
        reply(res, 200, {{"status", "ok"}, {"event", to_json(ev)}});
      });
    });

    server_.Post(R"(/rename/([^/]+))", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        const auto ev = service_.rename_device(req.matches[1].str(), body.at("name").get<std::string>());
        reply(res, 200, {{"status", "ok"}, {"event", to_json(ev)}});
      });
    });

    server_.Post("/shutdown", [this](const Request&, Response& res) {
      const auto verdict = service_.shutdown();
      if (verdict.allowed) {
        reply(res, 200, {{"status", "ok"}});
        return;
      }
      auto ids = nlohmann::json::array();
      for (const auto& id : verdict.connected) ids.push_back(id.value());
      reply(res, 409, {{"status", "blocked"}, {"connected", ids}});
    });

    server_.Post("/ap-status", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        const auto events = service_.report_ap(body.at("code").get<std::string>(),
                                               body.at("connected").get<bool>());
        reply(res, 200, {{"status", "ok"}, {"events", events_json(events)}});
      });
    });

    server_.Post("/device-status", [this](const Request& req, Response& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        if (body.at("connected").get<bool>()) {
          // A device reconnects by sending its next signal.
          reply(res, 200, {{"status", "ok"}, {"events", nlohmann::json::array()}});
          return;
        }
        const auto ev = service_.report_device_offline(body.at("id").get<std::string>());
        reply(res, 200, {{"status", "ok"}, {"events", events_json({ev})}});
      });
    });

    server_.Get("/events", [this](const Request& req, Response& res) {
      std::uint64_t since = 0;
      bool follow = true;
      try {
        if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
      } catch (const std::exception&) {
        reply(res, 400, {{"error", "BadRequest"}, {"message", "since must be an integer"}});
        return;
      }
      if (req.has_param("follow")) follow = req.get_param_value("follow") != "0";

      if (!follow) {
        std::string body;
        for (const auto& ev : service_.events_since(since)) body += to_json(ev).dump() + "\n";
        res.set_content(body, "application/x-ndjson");
        return;
      }

      auto cursor = std::make_shared<std::uint64_t>(since);
      res.set_chunked_content_provider(
          "application/x-ndjson", [this, cursor](std::size_t, httplib::DataSink& sink) {
            if (!sink.is_writable()) return false;
            for (const auto& ev : service_.events_since(*cursor)) {
              const auto line = to_json(ev).dump() + "\n";
              if (!sink.write(line.data(), line.size())) return false;
              *cursor = ev.seq;
            }
            if (stopping_ || service_.stopped()) {
              sink.done();
              return true;
            }
            service_.wait_for_events(*cursor, std::chrono::milliseconds(200));
            return true;
          });
    });
  }

  CmsService& service_;
  httplib::Server server_;
  std::atomic<bool> stopping_{false};
  int port_ = 0;
};

}  // namespace bluetrack
