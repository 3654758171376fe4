#pragma once

// Fixed-step RK4 scenario runner for the networked microgrid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nmg/control.hpp"
#include "nmg/model.hpp"
#include "nmg/network.hpp"

namespace nmg {

struct LoadStepEvent {
  double t = 0.0;
  int load = 0;  // index into GridTopology::loads
  double p = 0.0;
  double q = 0.0;
};

struct LineTripEvent {
  double t = 0.0;
  std::vector<std::pair<int, int>> lines;
};

struct DapiToggleEvent {
  double t = 0.0;
  bool enabled = true;
};

using ScenarioEvent = std::variant<LoadStepEvent, AttackEvent, LineTripEvent, DapiToggleEvent>;

inline double event_time(const ScenarioEvent& e) {
  return std::visit(
      [](const auto& ev) {
        if constexpr (std::is_same_v<std::decay_t<decltype(ev)>, AttackEvent>) {
          return ev.t_start;
        } else {
          return ev.t;
        }
      },
      e);
}

struct Scenario {
  std::string label = "scenario";
  std::vector<DerParams> ders;
  CouplingSpec coupling;
  GridTopology grid;
  std::vector<ScenarioEvent> events;  // non-decreasing in time; ties apply in list order
  double horizon = 20.0;
  double dt = 1e-3;
  GainMatrix gain;  // zero for the base scheme
  bool dapi_enabled = true;
  bool clamp_capacity = true;
  std::uint64_t seed = 0;
  std::vector<DerState> initial;  // empty means all zero

  void validate() const {
    const int n = static_cast<int>(ders.size());
    if (n == 0) throw std::invalid_argument("Scenario: no DERs");
    if (coupling.n_ders != n || grid.n_ders != n) throw std::invalid_argument("Scenario: dimension mismatch");
    if (!(dt > 0) || !std::isfinite(dt)) throw std::invalid_argument("Scenario: dt must be positive");
    if (!(horizon > 0) || !std::isfinite(horizon)) throw std::invalid_argument("Scenario: horizon must be positive");
    if (!initial.empty() && static_cast<int>(initial.size()) != n) {
      throw std::invalid_argument("Scenario: initial state size");
    }
    for (const auto& d : ders) d.validate();
    coupling.validate();
    grid.validate();
    double last = -std::numeric_limits<double>::infinity();
    for (const auto& e : events) {
      const double t = event_time(e);
      if (t < 0 || !std::isfinite(t)) throw std::invalid_argument("Scenario: negative event time");
      if (t < last) throw std::invalid_argument("Scenario: events out of time order");
      if (t > horizon) throw std::invalid_argument("Scenario: event after horizon");
      last = t;
      if (const auto* ls = std::get_if<LoadStepEvent>(&e)) {
        if (ls->load < 0 || ls->load >= static_cast<int>(grid.loads.size())) {
          throw std::invalid_argument("Scenario: load step on unknown load");
        }
      }
    }
  }
};

struct EventMarker {
  double t = 0.0;
  std::string kind;
  std::string detail;
};

/// Coupling/grid configuration active from t_begin until the next segment.
struct Segment {
  double t_begin = 0.0;
  CouplingSpec coupling;
  GridTopology grid;
  bool dapi_enabled = true;
};

struct TrajectoryLog {
  int n_ders = 0;
  std::vector<double> times;
  std::vector<std::vector<DerState>> states;
  std::vector<std::vector<Disturbance>> dist;
  std::vector<std::vector<ControlInput>> inputs;
  std::vector<int> clamped;
  std::vector<EventMarker> markers;
  std::vector<Segment> segments;
  bool aborted = false;
  std::string diagnostic;
};

namespace detail {

inline std::string links_text(const std::vector<std::pair<int, int>>& links) {
  std::ostringstream os;
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (i) os << ' ';
    os << '(' << links[i].first << ',' << links[i].second << ')';
  }
  return os.str();
}

inline std::string ders_text(const std::vector<int>& ders) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ders.size(); ++i) os << (i ? " " : "") << ders[i];
  return os.str();
}

// Applies one event to the mutable snapshot and returns its log marker.
inline EventMarker apply_event(const ScenarioEvent& ev, CouplingSpec& coupling, GridTopology& grid,
                               bool& dapi) {
  EventMarker m;
  m.t = event_time(ev);
  if (const auto* ls = std::get_if<LoadStepEvent>(&ev)) {
    auto& load = grid.loads[static_cast<std::size_t>(ls->load)];
    load.p = ls->p;
    load.q = ls->q;
    load.profile.clear();
    m.kind = "load_step";
    m.detail = load.name + " p=" + std::to_string(ls->p) + " q=" + std::to_string(ls->q);
  } else if (const auto* at = std::get_if<AttackEvent>(&ev)) {
    std::tie(coupling, grid) = apply_attack(std::move(coupling), std::move(grid), *at, at->t_start);
    m.kind = to_string(at->kind);
    m.detail = "ders=[" + ders_text(at->target_ders) + "] links=[" + links_text(at->target_links) + "]";
  } else if (const auto* lt = std::get_if<LineTripEvent>(&ev)) {
    grid = apply_physical_island(std::move(grid), lt->lines);
    m.kind = "line_trip";
    m.detail = "lines=[" + links_text(lt->lines) + "]";
  } else if (const auto* dt = std::get_if<DapiToggleEvent>(&ev)) {
    dapi = dt->enabled;
    m.kind = "dapi_toggle";
    m.detail = dt->enabled ? "enabled" : "disabled";
  }
  return m;
}

}  // namespace detail

/// Segment schedule of a scenario: the configuration after each event time.
inline std::vector<Segment> build_segments(const Scenario& sc, std::vector<EventMarker>* markers = nullptr) {
  std::vector<Segment> out;
  CouplingSpec coupling = sc.coupling;
  GridTopology grid = sc.grid;
  bool dapi = sc.dapi_enabled;
  out.push_back({0.0, coupling, grid, dapi});
  std::size_t i = 0;
  while (i < sc.events.size()) {
    const double t = event_time(sc.events[i]);
    while (i < sc.events.size() && event_time(sc.events[i]) == t) {
      auto m = detail::apply_event(sc.events[i], coupling, grid, dapi);
      if (markers) markers->push_back(std::move(m));
      ++i;
    }
    if (t == out.back().t_begin) {
      out.back() = {t, coupling, grid, dapi};
    } else {
      out.push_back({t, coupling, grid, dapi});
    }
  }
  return out;
}

/// Integrates the scenario with classical RK4 at fixed dt, splitting steps at
/// event times. Loads are frozen at the start of each integration interval.
inline TrajectoryLog run(const Scenario& sc) {
  sc.validate();
  const int n = static_cast<int>(sc.ders.size());
  TrajectoryLog log;
  log.n_ders = n;
  log.segments = build_segments(sc, &log.markers);

  std::vector<DerState> x = sc.initial.empty() ? std::vector<DerState>(static_cast<std::size_t>(n)) : sc.initial;
  std::size_t seg = 0;
  SystemMatrices sys = aggregate(sc.ders, log.segments[0].coupling);

  auto evaluate = [&](const std::vector<DerState>& s, double t_load, std::vector<Disturbance>* d_out,
                      std::vector<std::pair<double, double>>* du_out, int* clamped) {
    const auto& sg = log.segments[seg];
    auto pf = electrical_powers(s, sc.ders, sg.grid, t_load, sc.clamp_capacity);
    auto du = feedback(s, sc.gain);
    auto dx = state_derivative(s, pf.d, du, sys, sg.dapi_enabled);
    if (d_out) *d_out = pf.d;
    if (du_out) *du_out = du;
    if (clamped) *clamped = pf.clamped;
    return dx;
  };
  auto axpy = [](const std::vector<DerState>& a, double h, const std::vector<DerState>& k) {
    std::vector<DerState> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      r[i].delta = a[i].delta + h * k[i].delta;
      r[i].d_omega = a[i].d_omega + h * k[i].d_omega;
      r[i].omega_c = a[i].omega_c + h * k[i].omega_c;
      r[i].d_v = a[i].d_v + h * k[i].d_v;
      r[i].e_c = a[i].e_c + h * k[i].e_c;
    }
    return r;
  };
  auto rk4 = [&](std::vector<DerState>& s, double t0, double h) {
    const auto k1 = evaluate(s, t0, nullptr, nullptr, nullptr);
    const auto k2 = evaluate(axpy(s, 0.5 * h, k1), t0, nullptr, nullptr, nullptr);
    const auto k3 = evaluate(axpy(s, 0.5 * h, k2), t0, nullptr, nullptr, nullptr);
    const auto k4 = evaluate(axpy(s, h, k3), t0, nullptr, nullptr, nullptr);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i].delta += h / 6.0 * (k1[i].delta + 2 * k2[i].delta + 2 * k3[i].delta + k4[i].delta);
      s[i].d_omega += h / 6.0 * (k1[i].d_omega + 2 * k2[i].d_omega + 2 * k3[i].d_omega + k4[i].d_omega);
      s[i].omega_c += h / 6.0 * (k1[i].omega_c + 2 * k2[i].omega_c + 2 * k3[i].omega_c + k4[i].omega_c);
      s[i].d_v += h / 6.0 * (k1[i].d_v + 2 * k2[i].d_v + 2 * k3[i].d_v + k4[i].d_v);
      s[i].e_c += h / 6.0 * (k1[i].e_c + 2 * k2[i].e_c + 2 * k3[i].e_c + k4[i].e_c);
    }
  };
  auto advance_segment = [&](double t) {
    bool changed = false;
    while (seg + 1 < log.segments.size() && log.segments[seg + 1].t_begin <= t) {
      ++seg;
      changed = true;
    }
    if (changed) sys = aggregate(sc.ders, log.segments[seg].coupling);
  };
  auto finite = [](const std::vector<DerState>& s) {
    for (const auto& v : s)
      if (!std::isfinite(v.delta) || !std::isfinite(v.d_omega) || !std::isfinite(v.omega_c) ||
          !std::isfinite(v.d_v) || !std::isfinite(v.e_c))
        return false;
    return true;
  };
  auto record = [&](double t) {
    std::vector<Disturbance> d;
    std::vector<std::pair<double, double>> du;
    int clamped = 0;
    evaluate(x, t, &d, &du, &clamped);
    log.times.push_back(t);
    log.states.push_back(x);
    log.dist.push_back(std::move(d));
    log.inputs.push_back(control_inputs(x, du));
    log.clamped.push_back(clamped);
  };

  const auto steps = static_cast<long>(std::llround(sc.horizon / sc.dt));
  advance_segment(0.0);
  record(0.0);
  for (long k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) * sc.dt;
    const double t1 = static_cast<double>(k + 1) * sc.dt;
    double t = t0;
    while (seg + 1 < log.segments.size() && log.segments[seg + 1].t_begin < t1) {
      const double te = log.segments[seg + 1].t_begin;
      if (te > t) rk4(x, t, te - t);
      t = te;
      advance_segment(t);
    }
    rk4(x, t, t1 - t);
    advance_segment(t1);
    if (!finite(x)) {
      log.aborted = true;
      log.diagnostic = "non-finite state at t=" + std::to_string(t1);
      return log;
    }
    record(t1);
  }
  return log;
}

/// Runs the scenario with K = 0 and with `gain`; nothing else differs.
inline std::pair<TrajectoryLog, TrajectoryLog> run_comparison(Scenario sc, const GainMatrix& gain) {
  sc.gain = GainMatrix{};
  auto base = run(sc);
  sc.gain = gain;
  auto proposed = run(sc);
  return {std::move(base), std::move(proposed)};
}

}  // namespace nmg
