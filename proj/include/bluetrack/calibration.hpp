#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bluetrack/error.hpp"
#include "bluetrack/protocol.hpp"

namespace bluetrack {

/// One manually measured distance and the round-trip time of a probe sent
/// over it.
struct RttSample {
  double total_time = 0.0;  // seconds, round trip
  double distance = 0.0;    // meters

  void validate() const {
    if (!std::isfinite(total_time) || total_time <= 0.0) {
      throw InvalidSample("round-trip time must be positive and finite");
    }
    if (!std::isfinite(distance) || distance < 0.0) {
      throw InvalidSample("distance must be non-negative and finite");
    }
  }

  friend bool operator==(const RttSample&, const RttSample&) = default;
};

/// One-way time T = t / 2.
inline double half_time(const RttSample& sample) {
  if (!std::isfinite(sample.total_time) || sample.total_time <= 0.0) {
    throw InvalidSample("round-trip time must be positive and finite, got " +
                        std::to_string(sample.total_time));
  }
  return sample.total_time / 2.0;
}

inline constexpr std::size_t kMinCalibrationSamples = 5;

class CalibrationSet {
 public:
  CalibrationSet() = default;
  explicit CalibrationSet(std::vector<RttSample> samples) {
    for (const auto& s : samples) add(s);
  }

  void add(const RttSample& sample) {
    sample.validate();
    samples_.push_back(sample);
  }

  void add(double distance, double total_time) { add(RttSample{total_time, distance}); }

  /// Several probes over the same measured distance become one sample
  /// whose round-trip time is their mean.
  void add_repeated(double distance, std::span<const double> total_times) {
    if (total_times.empty()) {
      throw InvalidSample("no round-trip times given for distance " + std::to_string(distance));
    }
    for (double t : total_times) RttSample{t, distance}.validate();
    const double mean =
        std::accumulate(total_times.begin(), total_times.end(), 0.0) /
        static_cast<double>(total_times.size());
    add(RttSample{mean, distance});
  }

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const std::vector<RttSample>& samples() const noexcept { return samples_; }

 private:
  std::vector<RttSample> samples_;
};

/// Fitted line S = V·T + C with its diagnostics.
struct ChannelParams {
  double speed = 0.0;          // V, m/s
  double error = 0.0;          // C, m
  double mean_time = 0.0;      // M_T, s
  double mean_distance = 0.0;  // M_S, m
  double ms_time = 0.0;        // MS_T, s²
  double ms_cross = 0.0;       // MS_ST, m·s
  double residual_rms = 0.0;   // m
  std::size_t n_samples = 0;

  /// Parameters known up front rather than fitted (simulator ground truth).
  static ChannelParams known(double speed, double error) {
    ChannelParams p;
    p.speed = speed;
    p.error = error;
    return p;
  }

  friend bool operator==(const ChannelParams&, const ChannelParams&) = default;
};

/// Least-squares fit of distance on one-way time using population
/// (divide-by-N) moments.
inline ChannelParams fit(const CalibrationSet& set) {
  const auto& samples = set.samples();
  const std::size_t n = samples.size();
  if (n < kMinCalibrationSamples) {
    throw InsufficientSamples(n);
  }
  const double count = static_cast<double>(n);

  std::vector<double> times(n);
  double sum_t = 0.0;
  double sum_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    times[i] = half_time(samples[i]);
    sum_t += times[i];
    sum_s += samples[i].distance;
  }

  ChannelParams p;
  p.n_samples = n;
  p.mean_time = sum_t / count;
  p.mean_distance = sum_s / count;

  double sq = 0.0;
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = times[i] - p.mean_time;
    const double ds = samples[i].distance - p.mean_distance;
    sq += dt * dt;
    cross += dt * ds;
  }
  p.ms_time = sq / count;
  p.ms_cross = cross / count;

  if (!(p.ms_time > 0.0)) {
    throw DegenerateTimes("all round-trip times are equal; signal speed is undefined");
  }

  p.speed = p.ms_cross / p.ms_time;
  p.error = p.mean_distance - p.mean_time * (p.ms_cross / p.ms_time);

  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = samples[i].distance - p.speed * times[i] - p.error;
    rss += r * r;
  }
  p.residual_rms = std::sqrt(rss / count);
  return p;
}

struct DistanceEstimate {
  double meters = 0.0;
  // Set when V·T + C came out negative and was clamped to zero.
  bool clamped = false;
};

inline DistanceEstimate distance_from_time(const ChannelParams& params, double total_time) {
  const double s = params.speed * half_time(RttSample{total_time, 0.0}) + params.error;
  if (s < 0.0) return {0.0, true};
  return {s, false};
}

// ---------------------------------------------------------------------------
// Files

inline constexpr const char* kCalibrationCsvHeader = "distance_m,total_time_s";

/// Reads `distance_m,total_time_s` rows; the header line is required.
inline CalibrationSet read_calibration_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  };

  bool header_seen = false;
  CalibrationSet set;
  while (std::getline(in, line)) {
    ++line_no;
    strip(line);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kCalibrationCsvHeader) {
        throw CsvError("line 1: expected header '" + std::string(kCalibrationCsvHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw CsvError("line " + std::to_string(line_no) + ": expected two fields");
    }
    auto number = [&](std::string_view field) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
        throw CsvError("line " + std::to_string(line_no) + ": not a number: '" +
                       std::string(field) + "'");
      }
      return v;
    };
    const std::string_view view(line);
    try {
      set.add(number(view.substr(0, comma)), number(view.substr(comma + 1)));
    } catch (const InvalidSample& e) {
      throw CsvError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen) {
    throw CsvError("missing header '" + std::string(kCalibrationCsvHeader) + "'");
  }
  return set;
}

inline void write_calibration_csv(std::ostream& out, const CalibrationSet& set) {
  out << kCalibrationCsvHeader << '\n';
  for (const auto& s : set.samples()) {
    out << format_seconds(s.distance) << ',' << format_seconds(s.total_time) << '\n';
  }
}

inline nlohmann::json to_json(const ChannelParams& p) {
  return nlohmann::json{{"speed_mps", p.speed},
                        {"error_m", p.error},
                        {"residual_rms_m", p.residual_rms},
                        {"n_samples", p.n_samples}};
}

inline ChannelParams params_from_json(const nlohmann::json& j) {
  ChannelParams p = ChannelParams::known(j.at("speed_mps").get<double>(),
                                         j.at("error_m").get<double>());
  p.residual_rms = j.value("residual_rms_m", 0.0);
  p.n_samples = j.value("n_samples", std::size_t{0});
  return p;
}

}  // namespace bluetrack
