#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "nmg/config.hpp"
#include "nmg/io.hpp"
#include "nmg/sim.hpp"

using namespace nmg;

namespace {

Scenario single_der(double load_p) {
  Scenario s;
  s.ders.resize(1);
  s.coupling = CouplingSpec::from_links(1, {}, 1.0, 1.0);
  s.grid = GridTopology::with_lines(1, {}, 0, 0);
  s.grid.loads.push_back({"L1", {{0, 1.0}}, 0.0, 0.0, {}});
  s.events.push_back(LoadStepEvent{0.0, 0, load_p, 0.0});
  return s;
}

std::string csv_of(const TrajectoryLog& log) {
  std::ostringstream os;
  write_trajectory_csv(os, log);
  return os.str();
}

double relative_terminal_gap(const TrajectoryLog& a, const TrajectoryLog& b) {
  const VectorXd xa = stack_states(a.states.back()), xb = stack_states(b.states.back());
  return (xa - xb).norm() / std::max(1e-300, xb.norm());
}

}  // namespace

TEST(Sim, UnloadedSystemStaysAtRest) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, -1, GainMatrix{});
  s.events.clear();
  s.horizon = 2.0;
  const auto log = run(s);
  for (const auto& row : log.states)
    for (const auto& x : row) {
      ASSERT_EQ(x.d_omega, 0.0);
      ASSERT_EQ(x.omega_c, 0.0);
      ASSERT_EQ(x.d_v, 0.0);
      ASSERT_EQ(x.e_c, 0.0);
    }
}

TEST(Sim, DroopSettlesWithinFiveTimeConstants) {
  auto s = single_der(1000.0);
  s.dapi_enabled = false;
  const double tau = s.ders[0].tau_c;
  s.horizon = 5 * tau;
  s.dt = tau / 200;
  const auto log = run(s);
  const double target = -s.ders[0].m * 1000.0;
  EXPECT_NEAR(target, -0.1, 1e-15);
  const double err = std::abs(log.states.back()[0].d_omega - target);
  EXPECT_LE(err, std::exp(-5.0) * 0.1 * 1.001);
  EXPECT_GE(err, std::exp(-5.0) * 0.1 * 0.999);
}

TEST(Sim, ComparisonWithZeroGainIsBitIdentical) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, 1, GainMatrix{});
  s.horizon = 12.0;
  const auto [base, proposed] = run_comparison(s, GainMatrix{});
  EXPECT_EQ(csv_of(base), csv_of(proposed));
}

TEST(Sim, RepeatRunsAreIdentical) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, 2, make_gain(-0.01, -0.02, -0.001, -0.002));
  s.horizon = 13.0;
  EXPECT_EQ(csv_of(run(s)), csv_of(run(s)));
}

TEST(Sim, HalvingStepBarelyMovesTerminalState) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, 2, GainMatrix{});
  s.horizon = 14.0;
  const auto a = run(s);
  s.dt /= 2;
  const auto b = run(s);
  EXPECT_LT(relative_terminal_gap(a, b), 1e-6);
  EXPECT_EQ(b.times.size(), 2 * (a.times.size() - 1) + 1);
}

TEST(Sim, EventMarkersAndSegments) {
  auto c = load_config(test::config_path("nmg5.json"));
  const auto s = build_scenario(c, 1, GainMatrix{});
  std::vector<EventMarker> markers;
  const auto segs = build_segments(s, &markers);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_DOUBLE_EQ(segs[1].t_begin, 10.0);
  int at_ten = 0;
  for (const auto& m : markers)
    if (m.t == 10.0) ++at_ten;
  EXPECT_EQ(at_ten, 2);
  EXPECT_DOUBLE_EQ(segs[1].coupling.a_live(2, 3), 0.2);
  EXPECT_EQ(segs[1].grid.b_p(2, 3), 0.0);
}

TEST(Sim, UnorderedEventsRejected) {
  auto s = single_der(100.0);
  s.events.push_back(LoadStepEvent{5.0, 0, 1.0, 0.0});
  s.events.push_back(LoadStepEvent{4.0, 0, 2.0, 0.0});
  EXPECT_THROW(run(s), std::invalid_argument);
}

TEST(Sim, DivergenceAbortsWithDiagnostic) {
  auto s = single_der(1000.0);
  s.gain = GainMatrix{1000.0, 0.0, 0.0, 0.0};
  s.horizon = 5.0;
  const auto log = run(s);
  EXPECT_TRUE(log.aborted);
  EXPECT_NE(log.diagnostic.find("non-finite"), std::string::npos);
  EXPECT_LT(log.times.back(), 5.0);
}

TEST(Sim, DapiToggleFreezesIntegrators) {
  auto s = single_der(1000.0);
  s.events.push_back(DapiToggleEvent{1.0, false});
  s.horizon = 2.0;
  const auto log = run(s);
  const double frozen = log.states[1000][0].omega_c;
  EXPECT_EQ(log.states.back()[0].omega_c, frozen);
  EXPECT_NE(log.states[500][0].omega_c, frozen);
}

TEST(Sim, SteadyFrequencyMatchesLoadShare) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, -1, GainMatrix{});
  s.dapi_enabled = false;
  s.horizon = 60.0;
  const auto log = run(s);
  double total = 0, inv_m = 0;
  for (const auto& d : s.ders) inv_m += 1.0 / d.m;
  for (const auto& d : log.dist.back()) total += d.d_p;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& x = log.states.back()[i];
    EXPECT_NEAR(x.d_omega + s.ders[i].m * log.dist.back()[i].d_p, 0.0, 1e-9);
    EXPECT_NEAR(x.d_omega, -total / inv_m, 1e-9);
  }
  // DER 3 has half the droop and so carries twice the load.
  EXPECT_NEAR(log.dist.back()[2].d_p, 2 * log.dist.back()[0].d_p, 1e-6);
}

// ------------------------------------------------------------------------ io

TEST(Csv, RoundTrip) {
  auto s = single_der(700.0);
  s.horizon = 0.05;
  const auto log = run(s);
  std::stringstream ss;
  write_trajectory_csv(ss, log);
  const auto back = read_trajectory_csv(ss);
  ASSERT_EQ(back.times.size(), log.times.size());
  EXPECT_EQ(back.n_ders, 1);
  for (std::size_t k = 0; k < log.times.size(); ++k) {
    EXPECT_EQ(back.times[k], log.times[k]);
    EXPECT_EQ(back.states[k][0].d_omega, log.states[k][0].d_omega);
    EXPECT_EQ(back.dist[k][0].d_p, log.dist[k][0].d_p);
    EXPECT_EQ(back.inputs[k][0].u_omega, log.inputs[k][0].u_omega);
  }
  EXPECT_EQ(csv_of(back), csv_of(log));
}

TEST(Csv, MalformedInputRejected) {
  std::stringstream a("t,der0_delta,clamped\n0,1,0\n");
  EXPECT_THROW(read_trajectory_csv(a), std::runtime_error);
  auto s = single_der(1.0);
  s.horizon = 0.002;
  std::stringstream ok;
  write_trajectory_csv(ok, run(s));
  std::string text = ok.str() + "0.5,abc\n";
  std::stringstream bad(text);
  EXPECT_THROW(read_trajectory_csv(bad), std::runtime_error);
}

TEST(Csv, EventSidecar) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, 2, GainMatrix{});
  s.horizon = 12.5;
  const auto j = events_json(run(s), s.label);
  EXPECT_EQ(j["scenario"], "scenario_3");
  bool dos = false, trip = false;
  for (const auto& e : j["events"]) {
    dos = dos || (e["kind"] == "dos" && e["t_s"] == 10.0);
    trip = trip || (e["kind"] == "line_trip" && e["t_s"] == 12.0);
  }
  EXPECT_TRUE(dos);
  EXPECT_TRUE(trip);
}

// -------------------------------------------------------------------- config

TEST(Config, RoundTrip) {
  const auto c = load_config(test::config_path("nmg5.json"));
  const auto again = parse_config(serialize_config(c));
  EXPECT_TRUE(again == c);
  EXPECT_EQ(c.ders.size(), 5u);
  EXPECT_EQ(c.scenarios.size(), 3u);
}

TEST(Config, UnknownKeyRejected) {
  auto j = serialize_config(load_config(test::config_path("nmg5.json")));
  j["ders"][0]["droop"] = 1.0;
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Config, ZeroAlphaBarRejected) {
  auto j = serialize_config(load_config(test::config_path("nmg5.json")));
  j["synthesis"]["alpha_bar"] = 0.0;
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Config, UnknownEventTypeRejected) {
  auto j = serialize_config(load_config(test::config_path("nmg5.json")));
  j["scenarios"][0]["events"][0]["type"] = "meteor";
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Config, GainFileRoundTrip) {
  GainFile g;
  g.n_ders = 2;
  g.k_blocks = {GainMatrix{-1, -2, -3, -4}, GainMatrix{-1, -2, -3, -4}};
  g.alpha = 0.12;
  g.beta = 0.08;
  g.p_lyap = MatrixXd::Identity(8, 8) * 0.5;
  g.tau_v = 0.1;
  const auto back = parse_gain(gain_json(g));
  EXPECT_EQ(back.n_ders, 2);
  EXPECT_EQ(back.k_blocks[1].k_e, -4);
  EXPECT_EQ(back.alpha, 0.12);
  EXPECT_TRUE(back.p_lyap.isApprox(g.p_lyap, 0.0));
  EXPECT_TRUE(back.k_d().isApprox(g.k_d(), 0.0));
}

TEST(Config, GainFileDimensionChecked) {
  GainFile g;
  g.n_ders = 2;
  g.k_blocks = {GainMatrix{}};
  EXPECT_THROW(parse_gain(gain_json(g)), ConfigError);
}
