#pragma once

// Scenario-suite orchestration shared by the command-line tool and tests.

#include <cstdlib>
#include <string>
#include <vector>

#include "nmg/analysis.hpp"
#include "nmg/config.hpp"
#include "nmg/sim.hpp"

namespace nmg {

struct MetricsRow {
  std::string window;
  std::string signal;  // frequency | voltage
  std::string scheme;  // base | proposed
  double loss_ro = 0.0;
  double loss_re = 0.0;
};

struct SuiteLegs {
  std::string label;
  Scenario scenario;
  TrajectoryLog base, proposed;
};

/// Runs every configured scenario (or the common events alone when none are
/// listed) for both schemes.
inline std::vector<SuiteLegs> run_suite(const Config& c, const GainMatrix& gain) {
  std::vector<SuiteLegs> out;
  const int n = static_cast<int>(c.scenarios.size());
  for (int i = (n == 0 ? -1 : 0); i < std::max(n, 0); ++i) {
    SuiteLegs legs;
    legs.scenario = build_scenario(c, i, gain);
    legs.label = legs.scenario.label;
    std::tie(legs.base, legs.proposed) = run_comparison(legs.scenario, gain);
    out.push_back(std::move(legs));
    if (n == 0) break;
  }
  return out;
}

/// Comparison rows: an initialization window
/// from the first scenario, one scenario window per scenario, and the mean.
inline std::vector<MetricsRow> metrics_table(const Config& c, const std::vector<SuiteLegs>& suite) {
  std::vector<MetricsRow> rows;
  if (suite.empty()) return rows;
  const auto ders = build_ders(c);
  struct Acc {
    double f_ro = 0, f_re = 0, v_ro = 0, v_re = 0;
  };
  Acc acc[2];
  int count = 0;
  auto add = [&](const std::string& label, const TrajectoryLog& b, const TrajectoryLog& p, const Window& w) {
    const TrajectoryLog* logs[2] = {&b, &p};
    const char* names[2] = {"base", "proposed"};
    for (int s = 0; s < 2; ++s) {
      const auto m = loss_metrics(*logs[s], ders, w);
      rows.push_back({label, "frequency", names[s], m.loss_ro_freq, m.loss_re_freq});
      rows.push_back({label, "voltage", names[s], m.loss_ro_volt, m.loss_re_volt});
      acc[s].f_ro += m.loss_ro_freq;
      acc[s].f_re += m.loss_re_freq;
      acc[s].v_ro += m.loss_ro_volt;
      acc[s].v_re += m.loss_re_volt;
    }
    ++count;
  };
  const auto& iw = c.analysis.initialization_window;
  const auto& sw = c.analysis.scenario_window;
  add("Initialization", suite.front().base, suite.front().proposed, {"Initialization", iw.first, iw.second});
  for (const auto& l : suite) add(l.label, l.base, l.proposed, {l.label, sw.first, sw.second});
  const char* names[2] = {"base", "proposed"};
  for (int s = 0; s < 2; ++s) {
    rows.push_back({"Average", "frequency", names[s], acc[s].f_ro / count, acc[s].f_re / count});
    rows.push_back({"Average", "voltage", names[s], acc[s].v_ro / count, acc[s].v_re / count});
  }
  return rows;
}

inline const MetricsRow& find_row(const std::vector<MetricsRow>& rows, const std::string& window,
                                  const std::string& signal, const std::string& scheme) {
  for (const auto& r : rows)
    if (r.window == window && r.signal == signal && r.scheme == scheme) return r;
  throw std::out_of_range("metrics row not found: " + window + "/" + signal + "/" + scheme);
}

/// Worker threads from NMG_THREADS, defaulting to one.
inline int thread_count() {
  const char* v = std::getenv("NMG_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

}  // namespace nmg
