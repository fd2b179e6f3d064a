#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "bluetrack/sim.hpp"

using namespace bluetrack;
using namespace bluetrack::sim;

namespace {

ApLayout right_triangle() {
  return ApLayout({ApCode::parse("aaa"), {0, 0}}, {ApCode::parse("bbb"), {10, 0}},
                  {ApCode::parse("ccc"), {0, 10}});
}

DeviceScript device(const char* id, std::vector<Waypoint> wps) {
  return DeviceScript{DeviceId::parse(id), "", std::move(wps)};
}

std::size_t count(const std::vector<SimEvent>& events, EventKind kind) {
  return static_cast<std::size_t>(std::count_if(
      events.begin(), events.end(), [&](const SimEvent& e) { return e.kind == kind; }));
}

}  // namespace

TEST(Rng, CounterAddressable) {
  CounterRng a(7);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 10; ++i) first.push_back(a.next_u64());
  CounterRng b(7, 5);
  EXPECT_EQ(b.next_u64(), first[5]);
  CounterRng c(8);
  EXPECT_NE(c.next_u64(), first[0]);
}

TEST(Rng, UniformInUnitInterval) {
  CounterRng r(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LE(u, 1.0);
  }
}

TEST(RttForDistance, Noiseless) {
  CounterRng rng(1);
  EXPECT_DOUBLE_EQ(rtt_for_distance({5, 0, 0, 1}, 10, rng), 4.0);
  EXPECT_DOUBLE_EQ(rtt_for_distance({2, 1, 0, 1}, 7, rng), 6.0);
}

TEST(RttForDistance, FlooredAtMinimum) {
  CounterRng rng(1);
  EXPECT_EQ(rtt_for_distance({2, 5, 0, 1}, 1, rng), kMinRoundTrip);
}

TEST(RttForDistance, NoiseMeanWithinThreeSigmaOverRootN) {
  const ChannelTruth truth{5, 0, 0.01, 77};
  CounterRng rng(truth.seed);
  const int n = 100000;
  double sum = 0;
  double sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    const double t = rtt_for_distance(truth, 10, rng);
    sum += t;
    sum_sq += (t - 4.0) * (t - 4.0);
  }
  EXPECT_LE(std::abs(sum / n - 4.0), 3 * truth.noise_sigma / std::sqrt(double(n)));
  EXPECT_NEAR(std::sqrt(sum_sq / n), truth.noise_sigma, 0.02 * truth.noise_sigma);
}

TEST(RttForDistance, ModelInversion) {
  // Feeding noiseless times back through the fitted law gives the distance.
  const ChannelTruth truth{1.5e8, 0.7, 0, 1};
  const auto params = ChannelParams::known(truth.speed, truth.error);
  CounterRng rng(1);
  for (double s = truth.error; s < 100; s += 0.37) {
    const double t = rtt_for_distance(truth, s, rng);
    if (t == kMinRoundTrip) continue;
    EXPECT_NEAR(distance_from_time(params, t).meters, s, 1e-9);
  }
}

TEST(Waypoints, PiecewiseLinear) {
  const auto d = device("D1", {{0, {0, 0}}, {10, {10, 0}}, {20, {10, 10}}});
  EXPECT_EQ(d.position_at(-5), (Point2D{0, 0}));
  EXPECT_EQ(d.position_at(5), (Point2D{5, 0}));
  EXPECT_EQ(d.position_at(15), (Point2D{10, 5}));
  EXPECT_EQ(d.position_at(30), (Point2D{10, 10}));
}

TEST(RunSimulation, StaticDeviceTrilaterates) {
  SimScript script;
  script.devices.push_back(device("LG13", {{0, {3, 4}}}));
  script.duration = 10;
  const ChannelTruth truth{1.5e8, 0.3, 0, 9};
  const auto events = run_simulation(script, right_triangle(), truth);
  ASSERT_EQ(events.size(), 3u);
  const auto params = ChannelParams::known(truth.speed, truth.error);
  for (const auto& ev : events) {
    ASSERT_EQ(ev.kind, EventKind::signal_emitted);
    EXPECT_EQ(ev.signal, events.front().signal);
    const auto& t = ev.signal->round_trip;
    const auto p = trilaterate(right_triangle(), {distance_from_time(params, t[0]).meters,
                                                  distance_from_time(params, t[1]).meters,
                                                  distance_from_time(params, t[2]).meters});
    EXPECT_NEAR(p.x, 3, 1e-6);
    EXPECT_NEAR(p.y, 4, 1e-6);
  }
  EXPECT_EQ(events[0].at, 0);
  EXPECT_EQ(events[1].at, 5);
  EXPECT_EQ(events[2].at, 10);
}

TEST(RunSimulation, ApDisconnectSuppressesSignals) {
  SimScript script;
  script.devices.push_back(device("LG13", {{0, {3, 4}}, {20, {5, 5}}}));
  script = inject_fault(script, Fault::ap_disconnect(ApCode::parse("bbb"), 7));
  const auto events = run_simulation(script, right_triangle(), {});
  // Ticks 0 and 5 emit; tick 10 reports the fault and nothing after.
  ASSERT_EQ(events.size(), 3u);
  EXPECT_EQ(events[2].kind, EventKind::ap_disconnected);
  EXPECT_EQ(events[2].at, 10);
  EXPECT_EQ(events[2].ap->value(), "bbb");
  EXPECT_EQ(count(events, EventKind::signal_emitted), 2u);
}

TEST(RunSimulation, ReconnectResumesSignals) {
  SimScript script;
  script.devices.push_back(device("LG13", {{0, {3, 4}}, {30, {5, 5}}}));
  script = inject_fault(script, Fault::ap_disconnect(ApCode::parse("bbb"), 7));
  script = inject_fault(script, Fault::ap_reconnect(ApCode::parse("bbb"), 17));
  const auto events = run_simulation(script, right_triangle(), {});
  // 0, 5 | down at 10, 15 | up at 20: 20, 25, 30
  EXPECT_EQ(count(events, EventKind::signal_emitted), 5u);
  EXPECT_EQ(count(events, EventKind::ap_reconnected), 1u);
}

TEST(RunSimulation, DeviceOffline) {
  SimScript script;
  script.devices.push_back(device("LG13", {{0, {3, 4}}, {20, {3, 4}}}));
  script.devices.push_back(device("CH01", {{0, {5, 5}}, {20, {5, 5}}}));
  script = inject_fault(script, Fault::device_offline(DeviceId::parse("LG13"), 5));
  const auto events = run_simulation(script, right_triangle(), {});
  std::size_t lg = 0;
  for (const auto& e : events) {
    if (e.kind == EventKind::signal_emitted && e.device->value() == "LG13") ++lg;
  }
  EXPECT_EQ(lg, 1u);
  EXPECT_EQ(count(events, EventKind::device_offline), 1u);
  EXPECT_EQ(count(events, EventKind::signal_emitted), 1u + 5u);
}

TEST(RunSimulation, SameTimeFaultsInInsertionOrder) {
  SimScript script;
  script.devices.push_back(device("LG13", {{0, {3, 4}}, {10, {3, 4}}}));
  script = inject_fault(script, Fault::ap_disconnect(ApCode::parse("ccc"), 5));
  script = inject_fault(script, Fault::ap_disconnect(ApCode::parse("aaa"), 5));
  const auto events = run_simulation(script, right_triangle(), {});
  std::vector<std::string> order;
  for (const auto& e : events) {
    if (e.kind == EventKind::ap_disconnected) order.push_back(e.ap->value());
  }
  EXPECT_EQ(order, (std::vector<std::string>{"ccc", "aaa"}));
}

TEST(RunSimulation, OutOfRange) {
  const ApLayout far({ApCode::parse("aaa"), {0, 0}}, {ApCode::parse("bbb"), {10, 0}},
                     {ApCode::parse("ccc"), {0, 10}});
  SimScript script;
  script.devices.push_back(device("LG13", {{0, {120, 0}}}));
  const auto events = run_simulation(script, far, {});
  ASSERT_FALSE(events.empty());
  EXPECT_EQ(count(events, EventKind::signal_emitted), 0u);
  for (const auto& e : events) {
    EXPECT_EQ(e.kind, EventKind::out_of_range);
    EXPECT_GT(*e.distance_m, kClassOneRange);
  }
  // aaa at 120 m, ccc at ~120.4 m; bbb at 110 m.
  EXPECT_EQ(events.size(), 3u);
}

TEST(RunSimulation, RangeGateNeverEncodesLongLegs) {
  SimScript script;
  script.devices.push_back(device("D1", {{0, {0, 0}}, {200, {150, 150}}}));
  SimOptions opts;
  opts.range_m = 60;
  const ChannelTruth truth{1.5e8, 0, 0, 1};
  const auto l = right_triangle();
  for (const auto& e : run_simulation(script, l, truth, opts)) {
    if (e.kind != EventKind::signal_emitted) continue;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(distance(l.position(i), *e.truth), 60.0);
  }
}

TEST(RunSimulation, CadenceAndOrdering) {
  SimScript script;
  script.devices.push_back(device("D1", {{0, {1, 1}}, {100, {9, 9}}}));
  script.devices.push_back(device("D2", {{0, {2, 1}}, {100, {2, 9}}}));
  SimOptions opts;
  opts.cadence = 2.5;
  const auto events = run_simulation(script, right_triangle(), {1.5e8, 0, 1e-9, 4}, opts);
  double prev = 0;
  std::map<std::string, double> last;
  for (const auto& e : events) {
    EXPECT_GE(e.at, prev);
    prev = e.at;
    if (e.kind != EventKind::signal_emitted) continue;
    auto [it, inserted] = last.emplace(e.device->value(), e.at);
    if (!inserted) {
      EXPECT_DOUBLE_EQ(e.at - it->second, 2.5);
      it->second = e.at;
    }
  }
  EXPECT_EQ(count(events, EventKind::signal_emitted), 2u * 41u);
}

TEST(RunSimulation, DeterministicByteStream) {
  SimScript script;
  script.devices.push_back(device("D1", {{0, {1, 1}}, {100, {9, 9}}}));
  const ChannelTruth truth{1.5e8, 0.2, 3e-9, 1234};
  std::ostringstream a, b, c;
  write_events(a, run_simulation(script, right_triangle(), truth));
  write_events(b, run_simulation(script, right_triangle(), truth));
  auto other = truth;
  other.seed = 1235;
  write_events(c, run_simulation(script, right_triangle(), other));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(RunSimulation, ScriptErrors) {
  SimScript non_monotone;
  non_monotone.devices.push_back(device("D1", {{0, {1, 1}}, {0, {2, 2}}}));
  EXPECT_THROW(run_simulation(non_monotone, right_triangle(), {}), ScriptError);

  SimScript empty_wps;
  empty_wps.devices.push_back(device("D1", {}));
  EXPECT_THROW(run_simulation(empty_wps, right_triangle(), {}), ScriptError);

  SimScript dup;
  dup.devices.push_back(device("D1", {{0, {1, 1}}}));
  dup.devices.push_back(device("D1", {{0, {1, 1}}}));
  EXPECT_THROW(run_simulation(dup, right_triangle(), {}), ScriptError);

  SimScript ok;
  ok.devices.push_back(device("D1", {{0, {1, 1}}, {10, {1, 1}}}));
  SimOptions zero;
  zero.cadence = 0;
  EXPECT_THROW(run_simulation(ok, right_triangle(), {}, zero), ScriptError);
  EXPECT_THROW(inject_fault(ok, Fault::ap_disconnect(ApCode::parse("aaa"), 11)), ScriptError);
  auto unknown_ap = inject_fault(ok, Fault::ap_disconnect(ApCode::parse("zzz"), 5));
  EXPECT_THROW(run_simulation(unknown_ap, right_triangle(), {}), ScriptError);
}

TEST(Scenario, ParsesDocument) {
  std::istringstream in(R"({
    "layout": [{"code":"aaa","x":0,"y":0},{"code":"bbb","x":10,"y":0},{"code":"ccc","x":0,"y":10}],
    "channel": {"speed": 2.0e8, "error": 0.5, "noise_sigma": 1e-9, "seed": 18446744073709551615},
    "cadence": 5, "range_m": 100, "duration": 30,
    "devices": [{"id":"LG13","name":"Luggage","waypoints":[{"t":0,"x":3,"y":4},{"t":30,"x":6,"y":4}]}],
    "faults": [{"kind":"ap_disconnect","ap":"bbb","at":12},{"kind":"ap_reconnect","ap":"bbb","at":20},
               {"kind":"device_offline","device":"LG13","at":25}]
  })");
  const auto sc = read_scenario(in);
  ASSERT_TRUE(sc.layout.has_value());
  EXPECT_EQ(sc.channel.speed, 2.0e8);
  EXPECT_EQ(sc.channel.seed, 18446744073709551615ULL);
  EXPECT_EQ(sc.script.devices.at(0).name, "Luggage");
  EXPECT_EQ(sc.script.faults.size(), 3u);
  EXPECT_EQ(*sc.script.duration, 30);
}

TEST(Scenario, Errors) {
  const char* docs[] = {
      "not json",
      R"({"devices": [{"id":"bad id","waypoints":[{"t":0,"x":0,"y":0}]}]})",
      R"({"devices": [{"id":"D1","waypoints":[{"t":0,"x":0}]}]})",
      R"({"devices": [], "faults": [{"kind":"meteor","at":0}]})",
      R"({"devices": [], "channel": {"speed": -1}})",
      R"({"layout": [{"code":"aaa","x":0,"y":0}], "devices": []})",
  };
  for (const char* doc : docs) {
    std::istringstream in(doc);
    EXPECT_THROW(read_scenario(in), ScriptError) << doc;
  }
}

TEST(EventFile, RoundTrip) {
  SimScript script;
  script.devices.push_back(device("D1", {{0, {1, 1}}, {20, {150, 1}}}));
  script = inject_fault(script, Fault::ap_disconnect(ApCode::parse("aaa"), 15));
  const auto events = run_simulation(script, right_triangle(), {1.5e8, 0.1, 1e-9, 5});
  std::stringstream buf;
  write_events(buf, events);
  const auto back = read_events(buf);
  ASSERT_EQ(back.size(), events.size());
  std::stringstream again;
  write_events(again, back);
  std::stringstream first;
  write_events(first, events);
  EXPECT_EQ(first.str(), again.str());
}
