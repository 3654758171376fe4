#pragma once

// Trajectory CSV and event sidecar serialization.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmg/sim.hpp"

namespace nmg {

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const std::vector<std::string>& der_columns() {
  static const std::vector<std::string> cols{"delta", "domega", "Omega", "dv",      "e",
                                             "dp",    "dq",     "u_omega", "u_v"};
  return cols;
}

}  // namespace detail

inline void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log) {
  os << "t";
  for (int i = 0; i < log.n_ders; ++i)
    for (const auto& c : detail::der_columns()) os << ",der" << i << '_' << c;
  os << ",clamped\n";
  for (std::size_t k = 0; k < log.times.size(); ++k) {
    os << detail::fmt(log.times[k]);
    for (int i = 0; i < log.n_ders; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const auto& s = log.states[k][si];
      const auto& d = log.dist[k][si];
      const auto& u = log.inputs[k][si];
      for (double v : {s.delta, s.d_omega, s.omega_c, s.d_v, s.e_c, d.d_p, d.d_q, u.u_omega, u.u_v}) {
        os << ',' << detail::fmt(v);
      }
    }
    os << ',' << log.clamped[k] << '\n';
  }
}

inline void write_trajectory_csv(const std::string& path, const TrajectoryLog& log) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  write_trajectory_csv(os, log);
}

/// Reads the time series back. Markers and segments are not part of the CSV.
inline TrajectoryLog read_trajectory_csv(std::istream& is) {
  TrajectoryLog log;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("trajectory CSV: empty input");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const std::size_t per = detail::der_columns().size();
  if (header.size() < 2 + per || header.front() != "t" || header.back() != "clamped" ||
      (header.size() - 2) % per != 0) {
    throw std::runtime_error("trajectory CSV: malformed header");
  }
  log.n_ders = static_cast<int>((header.size() - 2) / per);
  for (int i = 0; i < log.n_ders; ++i)
    for (std::size_t c = 0; c < per; ++c) {
      const auto expect = "der" + std::to_string(i) + "_" + detail::der_columns()[c];
      if (header[1 + i * per + c] != expect) throw std::runtime_error("trajectory CSV: unexpected column " + header[1 + i * per + c]);
    }
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("trajectory CSV: bad number on row " + std::to_string(row));
      }
    }
    if (v.size() != header.size()) throw std::runtime_error("trajectory CSV: wrong column count on row " + std::to_string(row));
    log.times.push_back(v[0]);
    std::vector<DerState> st(static_cast<std::size_t>(log.n_ders));
    std::vector<Disturbance> di(st.size());
    std::vector<ControlInput> in(st.size());
    for (std::size_t i = 0; i < st.size(); ++i) {
      const double* p = &v[1 + i * per];
      st[i] = {p[0], p[1], p[2], p[3], p[4]};
      di[i] = {p[5], p[6]};
      in[i].u_omega = p[7];
      in[i].u_v = p[8];
      in[i].du_omega = p[7] - p[2];
      in[i].du_v = p[8] - p[4];
    }
    log.states.push_back(std::move(st));
    log.dist.push_back(std::move(di));
    log.inputs.push_back(std::move(in));
    log.clamped.push_back(static_cast<int>(v.back()));
  }
  return log;
}

inline TrajectoryLog read_trajectory_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_trajectory_csv(is);
}

inline nlohmann::ordered_json events_json(const TrajectoryLog& log, const std::string& label) {
  nlohmann::ordered_json j;
  j["scenario"] = label;
  j["events"] = nlohmann::ordered_json::array();
  for (const auto& m : log.markers) j["events"].push_back({{"t_s", m.t}, {"kind", m.kind}, {"detail", m.detail}});
  j["aborted"] = log.aborted;
  if (log.aborted) j["diagnostic"] = log.diagnostic;
  int clamped = 0;
  for (int c : log.clamped) clamped += c;
  j["clamped_samples"] = clamped;
  return j;
}

}  // namespace nmg
