#pragma once

// JSON configuration and gain-file formats.

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmg/analysis.hpp"
#include "nmg/model.hpp"
#include "nmg/network.hpp"
#include "nmg/sim.hpp"
#include "nmg/synthesis.hpp"

namespace nmg {

using json = nlohmann::ordered_json;

/// Raised for any schema violation; the CLI maps it to exit status 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DerConfig {
  std::string name;
  DerParams params;
  bool operator==(const DerConfig& o) const {
    const auto& a = params;
    const auto& b = o.params;
    return name == o.name && a.m == b.m && a.n == b.n && a.tau_c == b.tau_c && a.k == b.k &&
           a.kappa == b.kappa && a.xi == b.xi && a.p_star == b.p_star && a.q_star == b.q_star &&
           a.omega_star == b.omega_star && a.v_star == b.v_star && a.s_bar == b.s_bar &&
           a.q_rating == b.q_rating;
  }
};

struct CouplingConfig {
  std::vector<std::pair<int, int>> links;
  double alpha = 1.0;
  double beta = 1.0;
  bool q_rating_fallback = false;
  bool operator==(const CouplingConfig&) const = default;
};

struct LineConfig {
  int from = 0, to = 0;
  double b_p = 0.0, b_q = 0.0;
  bool operator==(const LineConfig&) const = default;
};

struct LoadConfig {
  std::string name;
  std::vector<std::pair<int, double>> attach;
  double p = 0.0, q = 0.0;
  bool operator==(const LoadConfig&) const = default;
};

struct GridConfig {
  std::vector<LineConfig> lines;
  std::vector<LoadConfig> loads;
  bool operator==(const GridConfig&) const = default;
};

struct EventConfig {
  std::string type;  // load_step, confidentiality_island, fdi, dos, line_trip, dapi_toggle
  double t = 0.0;
  std::string load;
  double p = 0.0, q = 0.0;
  std::vector<int> ders;
  std::vector<std::pair<int, int>> links;
  std::optional<double> a_offset, b_offset;
  bool zero_b = true;
  bool enabled = true;
  bool operator==(const EventConfig&) const = default;
};

struct ScenarioConfig {
  std::string label;
  std::vector<EventConfig> events;
  bool operator==(const ScenarioConfig&) const = default;
};

struct SynthesisConfig {
  std::vector<double> kappa_y{0.01, 0.1, 1.0, 10.0, 100.0};
  std::vector<double> tau{1.0};
  std::vector<double> tau_h{1.0};
  std::vector<double> tau_g{1.0};
  std::vector<double> tau_v{0.1, 1.0};
  bool tie_tau_to_tau_v = true;
  double c1 = 1.0, c2 = 1.0, c3 = 1.0;
  double alpha_bar = 1.0, beta_bar = 1.0;
  bool shared_blocks = true;
  double y_upper = 1e4;
  bool operator==(const SynthesisConfig&) const = default;
};

struct SimConfig {
  double dt = 1e-3;
  double horizon = 20.0;
  std::uint64_t seed = 0;
  std::string scheme = "proposed";
  bool clamp_capacity = true;
  bool dapi_enabled = true;
  bool operator==(const SimConfig&) const = default;
};

struct AnalysisConfig {
  std::pair<double, double> initialization_window{0.0, 10.0};
  std::pair<double, double> scenario_window{10.0, 20.0};
  int ellipsoid_trials = 200;
  double ellipsoid_horizon = 5.0;
  std::uint64_t ellipsoid_seed = 1;
  int connective_max_links = 20;
  int connective_samples = 4096;
  double dissipativity_rel_tol = 1e-6;
  bool operator==(const AnalysisConfig&) const = default;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats{"csv"};
  bool operator==(const OutputConfig&) const = default;
};

struct Config {
  std::vector<DerConfig> ders;
  CouplingConfig coupling;
  GridConfig grid;
  std::vector<EventConfig> events;
  std::vector<ScenarioConfig> scenarios;
  SynthesisConfig synthesis;
  SimConfig sim;
  AnalysisConfig analysis;
  OutputConfig output;
  bool operator==(const Config&) const = default;
};

namespace detail {

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

inline std::vector<std::pair<int, int>> pairs(const json& j, const std::string& where) {
  std::vector<std::pair<int, int>> out;
  if (!j.is_array()) throw ConfigError(where + ": expected an array of pairs");
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer()) {
      throw ConfigError(where + ": expected [i, j] integer pairs");
    }
    out.emplace_back(p[0].get<int>(), p[1].get<int>());
  }
  return out;
}

inline json pairs_json(const std::vector<std::pair<int, int>>& v) {
  json a = json::array();
  for (auto [i, j] : v) a.push_back({i, j});
  return a;
}

inline void positive(double v, const std::string& what) {
  if (!(v > 0) || !std::isfinite(v)) throw ConfigError(what + " must be positive");
}

inline EventConfig parse_event(const json& j, const std::string& where) {
  EventConfig e;
  e.type = require<std::string>(j, "type", where);
  if (e.type == "load_step") {
    allow_keys(j, where, {"type", "t_s", "load", "p_w", "q_var"});
    e.load = require<std::string>(j, "load", where);
    e.p = require<double>(j, "p_w", where);
    e.q = get_or<double>(j, "q_var", 0.0, where);
  } else if (e.type == "confidentiality_island") {
    allow_keys(j, where, {"type", "t_s", "ders"});
    e.ders = require<std::vector<int>>(j, "ders", where);
  } else if (e.type == "fdi") {
    allow_keys(j, where, {"type", "t_s", "ders", "links", "a_offset", "b_offset"});
    e.ders = get_or<std::vector<int>>(j, "ders", {}, where);
    if (j.contains("links")) e.links = pairs(j.at("links"), where + ".links");
    if (j.contains("a_offset")) e.a_offset = require<double>(j, "a_offset", where);
    if (j.contains("b_offset")) e.b_offset = require<double>(j, "b_offset", where);
  } else if (e.type == "dos") {
    allow_keys(j, where, {"type", "t_s", "ders", "links", "zero_b"});
    e.ders = get_or<std::vector<int>>(j, "ders", {}, where);
    if (j.contains("links")) e.links = pairs(j.at("links"), where + ".links");
    e.zero_b = get_or<bool>(j, "zero_b", true, where);
  } else if (e.type == "line_trip") {
    allow_keys(j, where, {"type", "t_s", "lines"});
    e.links = pairs(j.at("lines"), where + ".lines");
  } else if (e.type == "dapi_toggle") {
    allow_keys(j, where, {"type", "t_s", "enabled"});
    e.enabled = require<bool>(j, "enabled", where);
  } else {
    throw ConfigError(where + ": unknown event type '" + e.type + "'");
  }
  e.t = require<double>(j, "t_s", where);
  if (!(e.t >= 0)) throw ConfigError(where + ".t_s must be non-negative");
  if ((e.type == "fdi" || e.type == "dos") && e.ders.empty() && e.links.empty()) {
    throw ConfigError(where + ": attack without targets");
  }
  return e;
}

inline json event_json(const EventConfig& e) {
  json j;
  j["type"] = e.type;
  j["t_s"] = e.t;
  if (e.type == "load_step") {
    j["load"] = e.load;
    j["p_w"] = e.p;
    j["q_var"] = e.q;
  } else if (e.type == "confidentiality_island") {
    j["ders"] = e.ders;
  } else if (e.type == "fdi" || e.type == "dos") {
    j["ders"] = e.ders;
    j["links"] = pairs_json(e.links);
    if (e.type == "fdi") {
      if (e.a_offset) j["a_offset"] = *e.a_offset;
      if (e.b_offset) j["b_offset"] = *e.b_offset;
    } else {
      j["zero_b"] = e.zero_b;
    }
  } else if (e.type == "line_trip") {
    j["lines"] = pairs_json(e.links);
  } else if (e.type == "dapi_toggle") {
    j["enabled"] = e.enabled;
  }
  return j;
}

}  // namespace detail

inline Config parse_config(const json& j) {
  using namespace detail;
  allow_keys(j, "config", {"ders", "coupling", "grid", "events", "scenarios", "synthesis", "sim", "analysis", "output"});
  Config c;
  if (!j.contains("ders") || !j.at("ders").is_array() || j.at("ders").empty()) {
    throw ConfigError("config.ders: expected a non-empty array");
  }
  int idx = 0;
  for (const auto& d : j.at("ders")) {
    const std::string w = "ders[" + std::to_string(idx++) + "]";
    allow_keys(d, w, {"name", "m_rad_per_s_per_w", "n_v_per_var", "tau_c_s", "k_s", "kappa_s", "xi",
                      "p_star_w", "q_star_var", "omega_star_rad_per_s", "v_star_v", "s_bar_va", "q_rating_var"});
    DerConfig dc;
    DerParams def;
    dc.name = get_or<std::string>(d, "name", "DER" + std::to_string(idx), w);
    auto& p = dc.params;
    p.m = get_or(d, "m_rad_per_s_per_w", def.m, w);
    p.n = get_or(d, "n_v_per_var", def.n, w);
    p.tau_c = get_or(d, "tau_c_s", def.tau_c, w);
    p.k = get_or(d, "k_s", def.k, w);
    p.kappa = get_or(d, "kappa_s", def.kappa, w);
    p.xi = get_or(d, "xi", def.xi, w);
    p.p_star = get_or(d, "p_star_w", def.p_star, w);
    p.q_star = get_or(d, "q_star_var", def.q_star, w);
    p.omega_star = get_or(d, "omega_star_rad_per_s", def.omega_star, w);
    p.v_star = get_or(d, "v_star_v", def.v_star, w);
    p.s_bar = get_or(d, "s_bar_va", def.s_bar, w);
    p.q_rating = get_or(d, "q_rating_var", def.q_rating, w);
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(w + ": " + e.what());
    }
    c.ders.push_back(dc);
  }
  const int n = static_cast<int>(c.ders.size());
  auto check_der = [n](int i, const std::string& w) {
    if (i < 0 || i >= n) throw ConfigError(w + ": DER index " + std::to_string(i) + " out of range");
  };

  if (j.contains("coupling")) {
    const auto& cj = j.at("coupling");
    allow_keys(cj, "coupling", {"links", "alpha", "beta", "q_rating_fallback"});
    if (cj.contains("links")) c.coupling.links = pairs(cj.at("links"), "coupling.links");
    c.coupling.alpha = get_or(cj, "alpha", 1.0, "coupling");
    c.coupling.beta = get_or(cj, "beta", 1.0, "coupling");
    c.coupling.q_rating_fallback = get_or(cj, "q_rating_fallback", false, "coupling");
    positive(c.coupling.alpha, "coupling.alpha");
    positive(c.coupling.beta, "coupling.beta");
    for (auto [a, b] : c.coupling.links) {
      check_der(a, "coupling.links");
      check_der(b, "coupling.links");
      if (a == b) throw ConfigError("coupling.links: self link");
    }
  }

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    allow_keys(g, "grid", {"lines", "loads"});
    int li = 0;
    for (const auto& l : g.value("lines", json::array())) {
      const std::string w = "grid.lines[" + std::to_string(li++) + "]";
      allow_keys(l, w, {"from", "to", "b_p_w_per_rad", "b_q_var_per_v"});
      LineConfig lc{require<int>(l, "from", w), require<int>(l, "to", w), require<double>(l, "b_p_w_per_rad", w),
                    require<double>(l, "b_q_var_per_v", w)};
      check_der(lc.from, w);
      check_der(lc.to, w);
      if (lc.b_p < 0 || lc.b_q < 0) throw ConfigError(w + ": negative susceptance");
      c.grid.lines.push_back(lc);
    }
    li = 0;
    for (const auto& l : g.value("loads", json::array())) {
      const std::string w = "grid.loads[" + std::to_string(li++) + "]";
      allow_keys(l, w, {"name", "attach", "p_w", "q_var"});
      LoadConfig lc;
      lc.name = require<std::string>(l, "name", w);
      for (const auto& a : l.at("attach")) {
        allow_keys(a, w + ".attach", {"der", "weight"});
        const int der = require<int>(a, "der", w);
        check_der(der, w);
        const double wt = get_or(a, "weight", 1.0, w);
        if (!(wt > 0)) throw ConfigError(w + ": attachment weight must be positive");
        lc.attach.emplace_back(der, wt);
      }
      if (lc.attach.empty()) throw ConfigError(w + ": load without attachment");
      lc.p = get_or(l, "p_w", 0.0, w);
      lc.q = get_or(l, "q_var", 0.0, w);
      c.grid.loads.push_back(lc);
    }
  }

  auto parse_events = [&](const json& arr, const std::string& where) {
    std::vector<EventConfig> out;
    if (!arr.is_array()) throw ConfigError(where + ": expected an array");
    int ei = 0;
    for (const auto& e : arr) {
      const std::string w = where + "[" + std::to_string(ei++) + "]";
      auto ev = parse_event(e, w);
      for (int d : ev.ders) check_der(d, w);
      for (auto [a, b] : ev.links) {
        check_der(a, w);
        check_der(b, w);
      }
      if (ev.type == "load_step") {
        bool found = false;
        for (const auto& l : c.grid.loads) found = found || l.name == ev.load;
        if (!found) throw ConfigError(w + ": unknown load '" + ev.load + "'");
      }
      out.push_back(ev);
    }
    return out;
  };
  if (j.contains("events")) c.events = parse_events(j.at("events"), "events");
  if (j.contains("scenarios")) {
    int si = 0;
    for (const auto& s : j.at("scenarios")) {
      const std::string w = "scenarios[" + std::to_string(si++) + "]";
      allow_keys(s, w, {"label", "events"});
      ScenarioConfig sc;
      sc.label = require<std::string>(s, "label", w);
      sc.events = parse_events(s.value("events", json::array()), w + ".events");
      c.scenarios.push_back(sc);
    }
  }

  if (j.contains("synthesis")) {
    const auto& s = j.at("synthesis");
    allow_keys(s, "synthesis", {"kappa_y", "tau", "tau_h", "tau_g", "tau_v", "tie_tau_to_tau_v", "c1", "c2", "c3",
                                "alpha_bar", "beta_bar", "shared_blocks", "y_upper"});
    auto& sy = c.synthesis;
    sy.kappa_y = get_or(s, "kappa_y", sy.kappa_y, "synthesis");
    sy.tau = get_or(s, "tau", sy.tau, "synthesis");
    sy.tau_h = get_or(s, "tau_h", sy.tau_h, "synthesis");
    sy.tau_g = get_or(s, "tau_g", sy.tau_g, "synthesis");
    sy.tau_v = get_or(s, "tau_v", sy.tau_v, "synthesis");
    sy.tie_tau_to_tau_v = get_or(s, "tie_tau_to_tau_v", sy.tie_tau_to_tau_v, "synthesis");
    sy.c1 = get_or(s, "c1", sy.c1, "synthesis");
    sy.c2 = get_or(s, "c2", sy.c2, "synthesis");
    sy.c3 = get_or(s, "c3", sy.c3, "synthesis");
    sy.alpha_bar = get_or(s, "alpha_bar", sy.alpha_bar, "synthesis");
    sy.beta_bar = get_or(s, "beta_bar", sy.beta_bar, "synthesis");
    sy.shared_blocks = get_or(s, "shared_blocks", sy.shared_blocks, "synthesis");
    sy.y_upper = get_or(s, "y_upper", sy.y_upper, "synthesis");
    for (const auto* grid : {&sy.kappa_y, &sy.tau_h, &sy.tau_g, &sy.tau_v}) {
      if (grid->empty()) throw ConfigError("synthesis: empty multiplier grid");
      for (double v : *grid) positive(v, "synthesis grid value");
    }
    for (double v : sy.tau) positive(v, "synthesis.tau");
    positive(sy.c1, "synthesis.c1");
    positive(sy.c2, "synthesis.c2");
    positive(sy.c3, "synthesis.c3");
    positive(sy.alpha_bar, "synthesis.alpha_bar");
    positive(sy.beta_bar, "synthesis.beta_bar");
    if (sy.y_upper < 0) throw ConfigError("synthesis.y_upper must be non-negative");
  }

  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    allow_keys(s, "sim", {"dt_s", "horizon_s", "seed", "scheme", "clamp_capacity", "dapi_enabled"});
    c.sim.dt = get_or(s, "dt_s", c.sim.dt, "sim");
    c.sim.horizon = get_or(s, "horizon_s", c.sim.horizon, "sim");
    c.sim.seed = get_or(s, "seed", c.sim.seed, "sim");
    c.sim.scheme = get_or(s, "scheme", c.sim.scheme, "sim");
    c.sim.clamp_capacity = get_or(s, "clamp_capacity", c.sim.clamp_capacity, "sim");
    c.sim.dapi_enabled = get_or(s, "dapi_enabled", c.sim.dapi_enabled, "sim");
    positive(c.sim.dt, "sim.dt_s");
    positive(c.sim.horizon, "sim.horizon_s");
    if (c.sim.scheme != "base" && c.sim.scheme != "proposed") {
      throw ConfigError("sim.scheme must be 'base' or 'proposed'");
    }
  }

  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    allow_keys(a, "analysis", {"initialization_window_s", "scenario_window_s", "ellipsoid_trials",
                               "ellipsoid_horizon_s", "ellipsoid_seed", "connective_max_links",
                               "connective_samples", "dissipativity_rel_tol"});
    auto& an = c.analysis;
    an.initialization_window = get_or(a, "initialization_window_s", an.initialization_window, "analysis");
    an.scenario_window = get_or(a, "scenario_window_s", an.scenario_window, "analysis");
    an.ellipsoid_trials = get_or(a, "ellipsoid_trials", an.ellipsoid_trials, "analysis");
    an.ellipsoid_horizon = get_or(a, "ellipsoid_horizon_s", an.ellipsoid_horizon, "analysis");
    an.ellipsoid_seed = get_or(a, "ellipsoid_seed", an.ellipsoid_seed, "analysis");
    an.connective_max_links = get_or(a, "connective_max_links", an.connective_max_links, "analysis");
    an.connective_samples = get_or(a, "connective_samples", an.connective_samples, "analysis");
    an.dissipativity_rel_tol = get_or(a, "dissipativity_rel_tol", an.dissipativity_rel_tol, "analysis");
    for (const auto& w : {an.initialization_window, an.scenario_window}) {
      if (!(w.second > w.first)) throw ConfigError("analysis: window end must follow its start");
    }
    if (an.ellipsoid_trials <= 0) throw ConfigError("analysis.ellipsoid_trials must be positive");
    positive(an.ellipsoid_horizon, "analysis.ellipsoid_horizon_s");
  }

  if (j.contains("output")) {
    const auto& o = j.at("output");
    allow_keys(o, "output", {"directory", "formats"});
    c.output.directory = get_or(o, "directory", c.output.directory, "output");
    c.output.formats = get_or(o, "formats", c.output.formats, "output");
    for (const auto& f : c.output.formats)
      if (f != "csv" && f != "json") throw ConfigError("output.formats: unsupported format '" + f + "'");
  }
  return c;
}

inline json serialize_config(const Config& c) {
  using namespace detail;
  json j;
  j["ders"] = json::array();
  for (const auto& d : c.ders) {
    const auto& p = d.params;
    j["ders"].push_back({{"name", d.name},
                         {"m_rad_per_s_per_w", p.m},
                         {"n_v_per_var", p.n},
                         {"tau_c_s", p.tau_c},
                         {"k_s", p.k},
                         {"kappa_s", p.kappa},
                         {"xi", p.xi},
                         {"p_star_w", p.p_star},
                         {"q_star_var", p.q_star},
                         {"omega_star_rad_per_s", p.omega_star},
                         {"v_star_v", p.v_star},
                         {"s_bar_va", p.s_bar},
                         {"q_rating_var", p.q_rating}});
  }
  j["coupling"] = {{"links", pairs_json(c.coupling.links)},
                   {"alpha", c.coupling.alpha},
                   {"beta", c.coupling.beta},
                   {"q_rating_fallback", c.coupling.q_rating_fallback}};
  json lines = json::array(), loads = json::array();
  for (const auto& l : c.grid.lines) {
    lines.push_back({{"from", l.from}, {"to", l.to}, {"b_p_w_per_rad", l.b_p}, {"b_q_var_per_v", l.b_q}});
  }
  for (const auto& l : c.grid.loads) {
    json att = json::array();
    for (auto [d, w] : l.attach) att.push_back({{"der", d}, {"weight", w}});
    loads.push_back({{"name", l.name}, {"attach", att}, {"p_w", l.p}, {"q_var", l.q}});
  }
  j["grid"] = {{"lines", lines}, {"loads", loads}};
  j["events"] = json::array();
  for (const auto& e : c.events) j["events"].push_back(event_json(e));
  j["scenarios"] = json::array();
  for (const auto& s : c.scenarios) {
    json ev = json::array();
    for (const auto& e : s.events) ev.push_back(event_json(e));
    j["scenarios"].push_back({{"label", s.label}, {"events", ev}});
  }
  const auto& sy = c.synthesis;
  j["synthesis"] = {{"kappa_y", sy.kappa_y}, {"tau", sy.tau}, {"tau_h", sy.tau_h}, {"tau_g", sy.tau_g},
                    {"tau_v", sy.tau_v}, {"tie_tau_to_tau_v", sy.tie_tau_to_tau_v}, {"c1", sy.c1},
                    {"c2", sy.c2}, {"c3", sy.c3}, {"alpha_bar", sy.alpha_bar}, {"beta_bar", sy.beta_bar},
                    {"shared_blocks", sy.shared_blocks}, {"y_upper", sy.y_upper}};
  j["sim"] = {{"dt_s", c.sim.dt}, {"horizon_s", c.sim.horizon}, {"seed", c.sim.seed}, {"scheme", c.sim.scheme},
              {"clamp_capacity", c.sim.clamp_capacity}, {"dapi_enabled", c.sim.dapi_enabled}};
  const auto& an = c.analysis;
  j["analysis"] = {{"initialization_window_s", an.initialization_window},
                   {"scenario_window_s", an.scenario_window},
                   {"ellipsoid_trials", an.ellipsoid_trials},
                   {"ellipsoid_horizon_s", an.ellipsoid_horizon},
                   {"ellipsoid_seed", an.ellipsoid_seed},
                   {"connective_max_links", an.connective_max_links},
                   {"connective_samples", an.connective_samples},
                   {"dissipativity_rel_tol", an.dissipativity_rel_tol}};
  j["output"] = {{"directory", c.output.directory}, {"formats", c.output.formats}};
  return j;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

// ----------------------------------------------------------- model builders

inline std::vector<DerParams> build_ders(const Config& c) {
  std::vector<DerParams> out;
  for (const auto& d : c.ders) out.push_back(d.params);
  return out;
}

inline CouplingSpec build_coupling(const Config& c) {
  auto cs = CouplingSpec::from_links(static_cast<int>(c.ders.size()), c.coupling.links, c.coupling.alpha,
                                     c.coupling.beta);
  cs.q_rating_fallback = c.coupling.q_rating_fallback;
  return cs;
}

inline GridTopology build_grid(const Config& c) {
  GridTopology g = GridTopology::with_lines(static_cast<int>(c.ders.size()), {}, 0, 0);
  for (const auto& l : c.grid.lines) g.add_line(l.from, l.to, l.b_p, l.b_q);
  for (const auto& l : c.grid.loads) g.loads.push_back(LoadBus{l.name, l.attach, l.p, l.q, {}});
  return g;
}

inline ScenarioEvent build_event(const EventConfig& e, const GridTopology& grid) {
  if (e.type == "load_step") {
    for (std::size_t i = 0; i < grid.loads.size(); ++i) {
      if (grid.loads[i].name == e.load) return LoadStepEvent{e.t, static_cast<int>(i), e.p, e.q};
    }
    throw ConfigError("unknown load '" + e.load + "'");
  }
  if (e.type == "line_trip") return LineTripEvent{e.t, e.links};
  if (e.type == "dapi_toggle") return DapiToggleEvent{e.t, e.enabled};
  AttackEvent a;
  a.t_start = e.t;
  a.kind = parse_attack_kind(e.type);
  a.target_ders = e.ders;
  a.target_links = e.links;
  a.fdi_a_offset = e.a_offset;
  a.fdi_b_offset = e.b_offset;
  a.dos_zero_b = e.zero_b;
  return a;
}

/// Scenario for the common events plus those of scenario `index`
/// (-1 for the common events only).
inline Scenario build_scenario(const Config& c, int index, const GainMatrix& gain) {
  Scenario s;
  s.ders = build_ders(c);
  s.coupling = build_coupling(c);
  s.grid = build_grid(c);
  std::vector<EventConfig> evs = c.events;
  if (index >= 0) {
    if (index >= static_cast<int>(c.scenarios.size())) throw ConfigError("scenario index out of range");
    const auto& extra = c.scenarios[static_cast<std::size_t>(index)].events;
    evs.insert(evs.end(), extra.begin(), extra.end());
    s.label = c.scenarios[static_cast<std::size_t>(index)].label;
  } else {
    s.label = "common";
  }
  std::stable_sort(evs.begin(), evs.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  for (const auto& e : evs) s.events.push_back(build_event(e, s.grid));
  s.horizon = c.sim.horizon;
  s.dt = c.sim.dt;
  s.seed = c.sim.seed;
  s.clamp_capacity = c.sim.clamp_capacity;
  s.dapi_enabled = c.sim.dapi_enabled;
  s.gain = gain;
  return s;
}

inline SynthesisProblem build_synthesis_problem(const Config& c) {
  SynthesisProblem p;
  auto coupling = build_coupling(c);
  p.sys = aggregate(build_ders(c), coupling);
  p.c1 = c.synthesis.c1;
  p.c2 = c.synthesis.c2;
  p.c3 = c.synthesis.c3;
  p.alpha_bar = c.synthesis.alpha_bar;
  p.beta_bar = c.synthesis.beta_bar;
  p.shared_blocks = c.synthesis.shared_blocks;
  p.y_upper = c.synthesis.y_upper;
  return p;
}

inline SearchGrid build_search_grid(const Config& c) {
  SearchGrid g;
  g.kappa_y = c.synthesis.kappa_y;
  g.tau = c.synthesis.tau;
  g.tau_h = c.synthesis.tau_h;
  g.tau_g = c.synthesis.tau_g;
  g.tau_v = c.synthesis.tau_v;
  g.tie_tau_to_tau_v = c.synthesis.tie_tau_to_tau_v;
  return g;
}

// ---------------------------------------------------------------- gain file

struct GainFile {
  int n_ders = 0;
  std::vector<GainMatrix> k_blocks;
  double alpha = 0, beta = 0, kappa_l = 0, gamma_alpha = 0, gamma_beta = 0;
  MatrixXd p_lyap;
  double kappa_y = 0, tau = 0, tau_h = 0, tau_g = 0, tau_v = 0;
  std::map<std::string, double> residuals;

  MatrixXd k_d() const {
    MatrixXd k = MatrixXd::Zero(2 * n_ders, 4 * n_ders);
    for (int i = 0; i < n_ders; ++i) k.block<2, 4>(2 * i, 4 * i) = k_blocks[static_cast<std::size_t>(i)].block();
    return k;
  }
  Multipliers multipliers() const { return {tau, tau_h, tau_g, tau_v}; }
};

inline GainFile gain_file_from(const SynthesisResult& r, int n_ders) {
  GainFile g;
  g.n_ders = n_ders;
  g.k_blocks = r.k_blocks;
  g.alpha = r.alpha;
  g.beta = r.beta;
  g.kappa_l = r.kappa_l;
  g.gamma_alpha = r.gamma_alpha;
  g.gamma_beta = r.gamma_beta;
  g.p_lyap = r.p_lyap;
  g.kappa_y = r.kappa_y;
  g.tau = r.tau;
  g.tau_h = r.tau_h;
  g.tau_g = r.tau_g;
  g.tau_v = r.tau_v;
  g.residuals = r.residuals;
  return g;
}

inline json gain_json(const GainFile& g) {
  json j;
  j["n_ders"] = g.n_ders;
  j["k_blocks"] = json::array();
  for (const auto& k : g.k_blocks) {
    j["k_blocks"].push_back({{"k_omega", k.k_omega}, {"k_Omega", k.k_Omega}, {"k_v", k.k_v}, {"k_e", k.k_e}});
  }
  j["alpha"] = g.alpha;
  j["beta"] = g.beta;
  j["kappa_l"] = g.kappa_l;
  j["gamma_alpha"] = g.gamma_alpha;
  j["gamma_beta"] = g.gamma_beta;
  j["hyperparameters"] = {{"kappa_y", g.kappa_y}, {"tau", g.tau}, {"tau_h", g.tau_h}, {"tau_g", g.tau_g},
                          {"tau_v", g.tau_v}};
  j["residuals"] = g.residuals;
  json p = json::array();
  for (Eigen::Index r = 0; r < g.p_lyap.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < g.p_lyap.cols(); ++c) row.push_back(g.p_lyap(r, c));
    p.push_back(row);
  }
  j["p_lyap"] = p;
  return j;
}

inline GainFile parse_gain(const json& j) {
  using namespace detail;
  allow_keys(j, "gains", {"n_ders", "k_blocks", "alpha", "beta", "kappa_l", "gamma_alpha", "gamma_beta",
                          "hyperparameters", "residuals", "p_lyap"});
  GainFile g;
  g.n_ders = require<int>(j, "n_ders", "gains");
  if (g.n_ders <= 0) throw ConfigError("gains.n_ders must be positive");
  for (const auto& k : j.at("k_blocks")) {
    allow_keys(k, "gains.k_blocks", {"k_omega", "k_Omega", "k_v", "k_e"});
    g.k_blocks.push_back({require<double>(k, "k_omega", "gains"), require<double>(k, "k_Omega", "gains"),
                          require<double>(k, "k_v", "gains"), require<double>(k, "k_e", "gains")});
  }
  if (static_cast<int>(g.k_blocks.size()) != g.n_ders) throw ConfigError("gains: k_blocks size differs from n_ders");
  g.alpha = require<double>(j, "alpha", "gains");
  g.beta = require<double>(j, "beta", "gains");
  g.kappa_l = get_or(j, "kappa_l", 0.0, "gains");
  g.gamma_alpha = get_or(j, "gamma_alpha", 0.0, "gains");
  g.gamma_beta = get_or(j, "gamma_beta", 0.0, "gains");
  if (j.contains("hyperparameters")) {
    const auto& h = j.at("hyperparameters");
    allow_keys(h, "gains.hyperparameters", {"kappa_y", "tau", "tau_h", "tau_g", "tau_v"});
    g.kappa_y = get_or(h, "kappa_y", 0.0, "gains");
    g.tau = get_or(h, "tau", 0.0, "gains");
    g.tau_h = get_or(h, "tau_h", 0.0, "gains");
    g.tau_g = get_or(h, "tau_g", 0.0, "gains");
    g.tau_v = get_or(h, "tau_v", 0.0, "gains");
  }
  g.residuals = get_or(j, "residuals", std::map<std::string, double>{}, "gains");
  const int n = 4 * g.n_ders;
  if (j.contains("p_lyap")) {
    const auto& p = j.at("p_lyap");
    if (!p.is_array() || static_cast<int>(p.size()) != n) throw ConfigError("gains.p_lyap: expected 4N rows");
    g.p_lyap.resize(n, n);
    for (int r = 0; r < n; ++r) {
      if (!p[r].is_array() || static_cast<int>(p[r].size()) != n) throw ConfigError("gains.p_lyap: row size");
      for (int c = 0; c < n; ++c) g.p_lyap(r, c) = p[r][c].get<double>();
    }
  }
  return g;
}

inline GainFile load_gain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open gain file '" + path + "'");
  try {
    return parse_gain(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("gain file '" + path + "': " + e.what());
  }
}

}  // namespace nmg
