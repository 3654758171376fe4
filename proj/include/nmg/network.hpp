#pragma once

// Quasi-static lossless power-flow surrogate that maps inverter angles and
// voltages to the power deviations seen by each DER.

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmg/model.hpp"

namespace nmg {

struct LoadStep {
  double t = 0.0;
  double p = 0.0;
  double q = 0.0;
};

/// A load bus feeding from one or more DERs. The load is split among the
/// attached DERs proportionally to the feeder weights (susceptances).
struct LoadBus {
  std::string name;
  std::vector<std::pair<int, double>> attach;
  double p = 0.0;  // W, value before the first profile step
  double q = 0.0;  // var
  std::vector<LoadStep> profile;  // time-ordered steps

  std::pair<double, double> value_at(double t) const {
    double p_now = p, q_now = q;
    for (const auto& s : profile) {
      if (s.t > t) break;
      p_now = s.p;
      q_now = s.q;
    }
    return {p_now, q_now};
  }
};

struct GridTopology {
  int n_ders = 0;
  MatrixXd b_p;          // W per rad of angle difference
  MatrixXd b_q;          // var per V of voltage difference
  MatrixXd island_mask;  // 1 where a physical line connects i and j
  std::vector<LoadBus> loads;

  static GridTopology with_lines(int n, const std::vector<std::pair<int, int>>& lines,
                                 double b_p_line, double b_q_line) {
    GridTopology g;
    g.n_ders = n;
    g.b_p = MatrixXd::Zero(n, n);
    g.b_q = MatrixXd::Zero(n, n);
    g.island_mask = MatrixXd::Zero(n, n);
    for (auto [i, j] : lines) g.add_line(i, j, b_p_line, b_q_line);
    return g;
  }

  void add_line(int i, int j, double bp, double bq) {
    if (i < 0 || j < 0 || i >= n_ders || j >= n_ders || i == j) {
      throw std::invalid_argument("GridTopology: bad line");
    }
    b_p(i, j) = b_p(j, i) = bp;
    b_q(i, j) = b_q(j, i) = bq;
    island_mask(i, j) = island_mask(j, i) = 1.0;
  }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(n_ders);
    if (b_p.rows() != n || b_p.cols() != n || b_q.rows() != n || b_q.cols() != n ||
        island_mask.rows() != n || island_mask.cols() != n) {
      throw std::invalid_argument("GridTopology: dimension mismatch");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (b_p(i, i) != 0 || b_q(i, i) != 0 || island_mask(i, i) != 0) {
        throw std::invalid_argument("GridTopology: nonzero diagonal");
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        if (b_p(i, j) != b_p(j, i) || b_q(i, j) != b_q(j, i) ||
            island_mask(i, j) != island_mask(j, i)) {
          throw std::invalid_argument("GridTopology: asymmetric line data");
        }
        if (b_p(i, j) < 0 || b_q(i, j) < 0) {
          throw std::invalid_argument("GridTopology: negative susceptance");
        }
        if (island_mask(i, j) == 0 && (b_p(i, j) != 0 || b_q(i, j) != 0)) {
          throw std::invalid_argument("GridTopology: susceptance on a missing line");
        }
      }
    }
    for (const auto& l : loads) {
      double total = 0.0;
      for (auto [der, w] : l.attach) {
        if (der < 0 || der >= n_ders || w < 0) {
          throw std::invalid_argument("GridTopology: bad attachment on load " + l.name);
        }
        total += w;
      }
      if (!(total > 0)) throw std::invalid_argument("GridTopology: load " + l.name + " unattached");
    }
  }

  // Electrical island label per DER.
  std::vector<int> islands(int* count = nullptr) const { return component_labels(island_mask, count); }
};

struct PowerFlowResult {
  std::vector<Disturbance> d;
  int clamped = 0;  // DERs whose deviation was projected onto the capacity ball
};

/// Active load assigned to each DER at time t.
inline std::vector<std::pair<double, double>> load_shares(const GridTopology& grid, double t) {
  std::vector<std::pair<double, double>> share(static_cast<std::size_t>(grid.n_ders), {0.0, 0.0});
  for (const auto& l : grid.loads) {
    double total = 0.0;
    for (auto [der, w] : l.attach) total += w;
    const auto [p, q] = l.value_at(t);
    for (auto [der, w] : l.attach) {
      share[static_cast<std::size_t>(der)].first += p * w / total;
      share[static_cast<std::size_t>(der)].second += q * w / total;
    }
  }
  return share;
}

/// Power deviations [d_p, d_q] of each DER from angles, voltages and loads.
/// With clamp enabled, deviations outside d_p^2 + d_q^2 <= s_bar^2 are scaled
/// back onto the boundary and counted.
inline PowerFlowResult electrical_powers(const std::vector<DerState>& states,
                                         const std::vector<DerParams>& ders,
                                         const GridTopology& grid, double t, bool clamp = true) {
  const int n = grid.n_ders;
  if (static_cast<int>(states.size()) != n || static_cast<int>(ders.size()) != n) {
    throw std::invalid_argument("electrical_powers: dimension mismatch");
  }
  const auto share = load_shares(grid, t);
  PowerFlowResult out;
  out.d.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    double flow_p = 0.0, flow_q = 0.0;
    const double vi = ders[si].v_star + states[si].d_v;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto sj = static_cast<std::size_t>(j);
      flow_p += grid.b_p(i, j) * (states[si].delta - states[sj].delta);
      flow_q += grid.b_q(i, j) * (vi - (ders[sj].v_star + states[sj].d_v));
    }
    Disturbance& d = out.d[si];
    d.d_p = flow_p + share[si].first - ders[si].p_star;
    d.d_q = flow_q + share[si].second - ders[si].q_star;
    if (clamp) {
      const double s2 = d.d_p * d.d_p + d.d_q * d.d_q;
      const double cap = ders[si].s_bar;
      if (s2 > cap * cap) {
        const double scale = cap / std::sqrt(s2);
        d.d_p *= scale;
        d.d_q *= scale;
        ++out.clamped;
      }
    }
  }
  return out;
}

/// Removes the given physical lines. Pairs that are not lines are ignored.
inline GridTopology apply_physical_island(GridTopology grid,
                                          const std::vector<std::pair<int, int>>& cut) {
  for (auto [i, j] : cut) {
    if (i < 0 || j < 0 || i >= grid.n_ders || j >= grid.n_ders) {
      throw std::out_of_range("apply_physical_island: DER index");
    }
    grid.b_p(i, j) = grid.b_p(j, i) = 0.0;
    grid.b_q(i, j) = grid.b_q(j, i) = 0.0;
    grid.island_mask(i, j) = grid.island_mask(j, i) = 0.0;
  }
  return grid;
}

/// Lines of `grid` joining `group` to the rest of the network.
inline std::vector<std::pair<int, int>> boundary_lines(const GridTopology& grid,
                                                       const std::set<int>& group) {
  std::vector<std::pair<int, int>> out;
  for (int i : group) {
    for (int j = 0; j < grid.n_ders; ++j) {
      if (!group.contains(j) && grid.island_mask(i, j) != 0.0) out.emplace_back(i, j);
    }
  }
  return out;
}

}  // namespace nmg
