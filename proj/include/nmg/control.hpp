#pragma once

// Runtime control laws: droop with low-pass dynamics, distributed-averaging
// consensus, state feedback, and the cyberattack transformations applied to
// the coupling/grid snapshots.

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmg/model.hpp"
#include "nmg/network.hpp"

namespace nmg {

struct ControlInput {
  double u_omega = 0.0;
  double u_v = 0.0;
  double du_omega = 0.0;
  double du_v = 0.0;
};

enum class AttackKind { kConfidentialityIsland, kFdi, kDos };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kConfidentialityIsland: return "confidentiality_island";
    case AttackKind::kFdi: return "fdi";
    case AttackKind::kDos: return "dos";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "confidentiality_island") return AttackKind::kConfidentialityIsland;
  if (s == "fdi") return AttackKind::kFdi;
  if (s == "dos") return AttackKind::kDos;
  throw std::invalid_argument("unknown attack kind: " + s);
}

/// A cyberattack applied as an instantaneous step at t_start.
///
/// Targets are DERs and/or links. For confidentiality islanding the DER set
/// is cut (cyber and physical) from the rest of the network; for FDI and DoS
/// DER targets expand to every fundamental link incident on them.
struct AttackEvent {
  double t_start = 0.0;
  AttackKind kind = AttackKind::kDos;
  std::vector<int> target_ders;
  std::vector<std::pair<int, int>> target_links;
  std::optional<double> fdi_a_offset;  // default: current a_ij (doubling)
  std::optional<double> fdi_b_offset;  // default: current b_ij (doubling)
  bool dos_zero_b = true;
};

/// Per-DER secondary inputs u = [Omega + du_omega, e + du_v].
inline std::vector<ControlInput> control_inputs(const std::vector<DerState>& states,
                                                const std::vector<std::pair<double, double>>& du) {
  std::vector<ControlInput> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    out[i].du_omega = du[i].first;
    out[i].du_v = du[i].second;
    out[i].u_omega = states[i].omega_c + du[i].first;
    out[i].u_v = states[i].e_c + du[i].second;
  }
  return out;
}

/// Delta u = K_D x, evaluated DER by DER.
inline std::vector<std::pair<double, double>> feedback(const std::vector<DerState>& states,
                                                       const GainMatrix& gain) {
  std::vector<std::pair<double, double>> du(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& s = states[i];
    du[i].first = gain.k_omega * s.d_omega + gain.k_Omega * s.omega_c;
    du[i].second = gain.k_v * s.d_v + gain.k_e * s.e_c;
  }
  return du;
}

/// Consensus derivatives (Omega_dot, e_dot) computed neighbour by neighbour.
inline std::vector<std::pair<double, double>> dapi_consensus_terms(
    const std::vector<DerState>& states, const std::vector<Disturbance>& dist,
    const CouplingSpec& coupling, const std::vector<DerParams>& ders) {
  const int n = static_cast<int>(ders.size());
  if (static_cast<int>(states.size()) != n || static_cast<int>(dist.size()) != n ||
      coupling.n_ders != n) {
    throw std::invalid_argument("dapi_consensus_terms: dimension mismatch");
  }
  std::vector<std::pair<double, double>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const auto& pi = ders[si];
    double omega_sum = 0.0, q_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto sj = static_cast<std::size_t>(j);
      omega_sum += coupling.a_live(i, j) * (states[si].omega_c - states[sj].omega_c);
      const double bij = coupling.b_live(i, j);
      if (bij != 0.0) {
        const double qi = reactive_normalizer(pi, coupling.q_rating_fallback);
        const double qj = reactive_normalizer(ders[sj], coupling.q_rating_fallback);
        if (qi == 0.0 || qj == 0.0) {
          throw std::domain_error("dapi_consensus_terms: zero reactive reference with b_ij != 0");
        }
        q_sum += bij * (dist[si].d_q / qi - dist[sj].d_q / qj);
      }
    }
    out[si].first = (-states[si].d_omega - omega_sum) / pi.k;
    out[si].second = (-pi.xi * states[si].d_v - q_sum) / pi.kappa;
  }
  return out;
}

/// Time derivative of every DER state from the compact aggregated form,
/// plus delta_dot = d_omega. With dapi_enabled false the consensus states
/// are frozen.
inline std::vector<DerState> state_derivative(const std::vector<DerState>& states,
                                              const std::vector<Disturbance>& dist,
                                              const std::vector<std::pair<double, double>>& du,
                                              const SystemMatrices& sys, bool dapi_enabled = true) {
  const int n = sys.n_ders;
  if (static_cast<int>(states.size()) != n || static_cast<int>(dist.size()) != n ||
      static_cast<int>(du.size()) != n) {
    throw std::invalid_argument("state_derivative: dimension mismatch");
  }
  VectorXd omega(n), dq_norm(n);
  for (int i = 0; i < n; ++i) {
    omega(i) = states[static_cast<std::size_t>(i)].omega_c;
    dq_norm(i) = sys.q_star_inv(i) * dist[static_cast<std::size_t>(i)].d_q;
  }
  const VectorXd la_omega = sys.lap_a * omega;
  const VectorXd lb_q = sys.lap_b * dq_norm;

  std::vector<DerState> dx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const auto& s = states[si];
    DerState& r = dx[si];
    r.delta = s.d_omega;
    r.d_omega = (-s.d_omega + s.omega_c + du[si].first - sys.m_diag(i) * dist[si].d_p) / sys.tau_c(i);
    r.d_v = (-s.d_v + s.e_c + du[si].second - sys.n_diag(i) * dist[si].d_q) / sys.tau_c(i);
    if (dapi_enabled) {
      r.omega_c = (-s.d_omega - la_omega(i)) / sys.k(i);
      r.e_c = (-sys.xi(i) * s.d_v - lb_q(i)) / sys.kappa(i);
    }
  }
  return dx;
}

namespace detail {

inline void check_der(int i, int n) {
  if (i < 0 || i >= n) throw std::out_of_range("attack target: unknown DER " + std::to_string(i));
}

inline std::vector<std::pair<int, int>> attack_links(const CouplingSpec& c, const AttackEvent& ev) {
  std::set<std::pair<int, int>> links;
  for (auto [i, j] : ev.target_links) {
    check_der(i, c.n_ders);
    check_der(j, c.n_ders);
    if (c.e_fund(i, j) == 0.0) {
      throw std::invalid_argument("attack target: (" + std::to_string(i) + "," +
                                  std::to_string(j) + ") is not a fundamental link");
    }
    links.insert({std::min(i, j), std::max(i, j)});
  }
  for (int i : ev.target_ders) {
    check_der(i, c.n_ders);
    for (int j = 0; j < c.n_ders; ++j) {
      if (c.e_fund(i, j) != 0.0) links.insert({std::min(i, j), std::max(i, j)});
    }
  }
  return {links.begin(), links.end()};
}

}  // namespace detail

/// Applies `event` to copies of the coupling and grid snapshots.
inline std::pair<CouplingSpec, GridTopology> apply_attack(CouplingSpec coupling, GridTopology grid,
                                                          const AttackEvent& event, double t) {
  if (t < event.t_start) throw std::invalid_argument("apply_attack: event not yet active");
  const int n = coupling.n_ders;
  switch (event.kind) {
    case AttackKind::kConfidentialityIsland: {
      if (!event.target_links.empty()) {
        throw std::invalid_argument("confidentiality_island targets DERs, not links");
      }
      std::set<int> group;
      for (int i : event.target_ders) {
        detail::check_der(i, n);
        group.insert(i);
      }
      for (int i : group) {
        for (int j = 0; j < n; ++j) {
          if (group.contains(j)) continue;
          coupling.a_live(i, j) = coupling.a_live(j, i) = 0.0;
          coupling.b_live(i, j) = coupling.b_live(j, i) = 0.0;
          coupling.strengths(i, j) = coupling.strengths(j, i) = 0.0;
        }
      }
      grid = apply_physical_island(std::move(grid), boundary_lines(grid, group));
      break;
    }
    case AttackKind::kFdi: {
      for (auto [i, j] : detail::attack_links(coupling, event)) {
        const double da = event.fdi_a_offset.value_or(coupling.a_live(i, j));
        const double db = event.fdi_b_offset.value_or(coupling.b_live(i, j));
        coupling.a_live(i, j) = coupling.a_live(j, i) = coupling.a_live(i, j) + da;
        coupling.b_live(i, j) = coupling.b_live(j, i) = coupling.b_live(i, j) + db;
        const double s = coupling.alpha > 0 ? coupling.a_live(i, j) / coupling.alpha : 0.0;
        coupling.strengths(i, j) = coupling.strengths(j, i) = s;
      }
      break;
    }
    case AttackKind::kDos: {
      for (auto [i, j] : detail::attack_links(coupling, event)) {
        coupling.a_live(i, j) = coupling.a_live(j, i) = 0.0;
        if (event.dos_zero_b) coupling.b_live(i, j) = coupling.b_live(j, i) = 0.0;
        coupling.strengths(i, j) = coupling.strengths(j, i) = 0.0;
      }
      break;
    }
  }
  return {std::move(coupling), std::move(grid)};
}

}  // namespace nmg
