#pragma once

// Per-inverter and aggregated state-space model of a network of
// DAPI-controlled droop inverters.
//
// State ordering per DER: x_i = [d_omega, Omega, d_v, e]. Disturbance
// ordering per DER: d_i = [d_p, d_q]. Stacked vectors are DER-major.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmg/linalg.hpp"

namespace nmg {

inline constexpr int kStatesPerDer = 4;
inline constexpr int kInputsPerDer = 2;
inline constexpr int kDisturbancesPerDer = 2;

// Index of each controllable state inside a DER block.
enum StateIndex : int { kDOmega = 0, kOmega = 1, kDV = 2, kE = 3 };

/// Droop, low-pass and DAPI parameters of one inverter.
///
/// Units: m in rad/s per W, n in V per var, tau_c/k/kappa in s, powers in
/// W/var/VA, omega_star in rad/s, v_star in V.
struct DerParams {
  double m = 1e-4;
  double n = 2e-4;
  double tau_c = 1.0 / (2.0 * std::numbers::pi * 5.0);
  double k = 1.0;
  double kappa = 1.0;
  double xi = 1.0;
  double p_star = 0.0;
  double q_star = 0.0;
  double omega_star = 2.0 * std::numbers::pi * 60.0;
  double v_star = 120.0 * std::numbers::sqrt2;
  double s_bar = 5000.0;
  // Reactive rating used to normalize the voltage consensus when q_star is 0
  // and the rating fallback is enabled. Zero means "no rating configured".
  double q_rating = 0.0;

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("DerParams: ") + what);
    };
    require(m > 0, "m must be positive");
    require(n > 0, "n must be positive");
    require(tau_c > 0, "tau_c must be positive");
    require(k > 0, "k must be positive");
    require(kappa > 0, "kappa must be positive");
    require(xi >= 0, "xi must be non-negative");
    require(s_bar > 0, "s_bar must be positive");
    require(q_rating >= 0, "q_rating must be non-negative");
    require(omega_star > 0 && v_star > 0, "setpoints must be positive");
  }
};

struct DerState {
  double delta = 0.0;
  double d_omega = 0.0;
  double omega_c = 0.0;
  double d_v = 0.0;
  double e_c = 0.0;
};

struct Disturbance {
  double d_p = 0.0;
  double d_q = 0.0;
};

/// Communication coupling between DERs.
///
/// Live couplings follow a_live = alpha * strengths (and b_live = beta *
/// strengths) on links allowed by the fundamental matrix e_fund. The maximal
/// couplings a_max/b_max are the design-phase values at unit strength.
struct CouplingSpec {
  int n_ders = 0;
  MatrixXd e_fund;
  MatrixXd a_max;
  MatrixXd b_max;
  MatrixXd a_live;
  MatrixXd b_live;
  MatrixXd strengths;
  double alpha = 1.0;
  double beta = 1.0;
  // Use DerParams::q_rating in place of a zero q_star in the voltage consensus.
  bool q_rating_fallback = false;

  static CouplingSpec from_links(int n, const std::vector<std::pair<int, int>>& links,
                                 double alpha, double beta) {
    if (n <= 0) throw std::invalid_argument("CouplingSpec: n must be positive");
    if (!(alpha > 0) || !(beta > 0)) {
      throw std::invalid_argument("CouplingSpec: alpha and beta must be positive");
    }
    CouplingSpec c;
    c.n_ders = n;
    c.alpha = alpha;
    c.beta = beta;
    c.e_fund = MatrixXd::Zero(n, n);
    for (auto [i, j] : links) {
      if (i < 0 || j < 0 || i >= n || j >= n || i == j) {
        throw std::invalid_argument("CouplingSpec: bad link (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      }
      c.e_fund(i, j) = c.e_fund(j, i) = 1.0;
    }
    c.a_max = alpha * c.e_fund;
    c.b_max = beta * c.e_fund;
    c.set_strengths(c.e_fund);
    return c;
  }

  void set_strengths(const MatrixXd& s) {
    strengths = s.cwiseProduct(e_fund);
    a_live = alpha * strengths;
    b_live = beta * strengths;
  }

  std::vector<std::pair<int, int>> links() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < n_ders; ++i)
      for (int j = i + 1; j < n_ders; ++j)
        if (e_fund(i, j) != 0.0) out.emplace_back(i, j);
    return out;
  }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(n_ders);
    for (const MatrixXd* m : {&e_fund, &a_max, &b_max, &a_live, &b_live, &strengths}) {
      if (m->rows() != n || m->cols() != n) {
        throw std::invalid_argument("CouplingSpec: matrix dimension mismatch");
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (e_fund(i, i) != 0.0) throw std::invalid_argument("CouplingSpec: e_fund diagonal");
      for (Eigen::Index j = 0; j < n; ++j) {
        const double e = e_fund(i, j);
        if (e != 0.0 && e != 1.0) throw std::invalid_argument("CouplingSpec: e_fund not binary");
        if (e != e_fund(j, i)) throw std::invalid_argument("CouplingSpec: e_fund asymmetric");
        if (a_live(i, j) < 0 || b_live(i, j) < 0 || strengths(i, j) < 0 || a_max(i, j) < 0 ||
            b_max(i, j) < 0) {
          throw std::invalid_argument("CouplingSpec: negative coupling");
        }
        if (e == 0.0 && (a_live(i, j) != 0.0 || b_live(i, j) != 0.0)) {
          throw std::invalid_argument("CouplingSpec: live coupling outside e_fund");
        }
      }
    }
  }
};

/// Per-DER feedback gain K_i = [[k_omega, k_Omega, 0, 0], [0, 0, k_v, k_e]].
struct GainMatrix {
  double k_omega = 0.0;
  double k_Omega = 0.0;
  double k_v = 0.0;
  double k_e = 0.0;

  Matrix24d block() const {
    Matrix24d k = Matrix24d::Zero();
    k(0, kDOmega) = k_omega;
    k(0, kOmega) = k_Omega;
    k(1, kDV) = k_v;
    k(1, kE) = k_e;
    return k;
  }

  MatrixXd aggregate(int n_ders) const {
    return block_diagonal(std::vector<Matrix24d>(static_cast<std::size_t>(n_ders), block()));
  }

  bool is_zero() const { return k_omega == 0 && k_Omega == 0 && k_v == 0 && k_e == 0; }
};

/// Builds a gain; the four scalars must be negative unless overridden.
inline GainMatrix make_gain(double k_omega, double k_Omega, double k_v, double k_e,
                            bool allow_non_negative = false) {
  if (!allow_non_negative && (k_omega >= 0 || k_Omega >= 0 || k_v >= 0 || k_e >= 0)) {
    throw std::invalid_argument("make_gain: feedback gains must be negative");
  }
  return GainMatrix{k_omega, k_Omega, k_v, k_e};
}

struct DerMatrices {
  Matrix4d a;
  Matrix42d b;
  Matrix42d e;
};

inline DerMatrices build_der_matrices(const DerParams& p) {
  if (!(p.tau_c > 0) || !(p.k > 0) || !(p.kappa > 0)) {
    throw std::invalid_argument("build_der_matrices: tau_c, k and kappa must be positive");
  }
  const double inv_tau = 1.0 / p.tau_c;
  DerMatrices out;
  out.a.setZero();
  out.a(kDOmega, kDOmega) = -inv_tau;
  out.a(kDOmega, kOmega) = inv_tau;
  out.a(kOmega, kDOmega) = -1.0 / p.k;
  out.a(kDV, kDV) = -inv_tau;
  out.a(kDV, kE) = inv_tau;
  out.a(kE, kDV) = -p.xi / p.kappa;
  out.b.setZero();
  out.b(kDOmega, 0) = inv_tau;
  out.b(kDV, 1) = inv_tau;
  out.e.setZero();
  out.e(kDOmega, 0) = -p.m * inv_tau;
  out.e(kDV, 1) = -p.n * inv_tau;
  return out;
}

/// Normalizer used for DER i's reactive power in the voltage consensus.
/// Returns 0 when no usable normalizer exists.
inline double reactive_normalizer(const DerParams& p, bool rating_fallback) {
  if (p.q_star != 0.0) return p.q_star;
  if (rating_fallback && p.q_rating > 0.0) return p.q_rating;
  return 0.0;
}

struct UncertaintyBlocks {
  Matrix4d da_ii = Matrix4d::Zero();
  std::vector<std::pair<int, Matrix4d>> da_ij;
  Matrix42d de_ii = Matrix42d::Zero();
  std::vector<std::pair<int, Matrix42d>> de_ij;
};

// Consensus blocks of DER i for explicit coupling matrices a and b.
inline UncertaintyBlocks uncertainty_blocks_for(const std::vector<DerParams>& ders,
                                                const MatrixXd& a, const MatrixXd& b,
                                                bool rating_fallback, int i) {
  const int n = static_cast<int>(ders.size());
  if (i < 0 || i >= n) throw std::out_of_range("uncertainty blocks: DER index");
  if (a.rows() != n || a.cols() != n || b.rows() != n || b.cols() != n) {
    throw std::invalid_argument("uncertainty blocks: coupling dimension mismatch");
  }
  const DerParams& pi = ders[static_cast<std::size_t>(i)];
  UncertaintyBlocks out;
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    const double aij = a(i, j);
    const double bij = b(i, j);
    if (aij != 0.0) {
      out.da_ii(kOmega, kOmega) -= aij / pi.k;
      Matrix4d off = Matrix4d::Zero();
      off(kOmega, kOmega) = aij / pi.k;
      out.da_ij.emplace_back(j, off);
    }
    if (bij != 0.0) {
      const double qi = reactive_normalizer(pi, rating_fallback);
      const double qj = reactive_normalizer(ders[static_cast<std::size_t>(j)], rating_fallback);
      if (qi == 0.0 || qj == 0.0) {
        throw std::domain_error("uncertainty blocks: b_" + std::to_string(i + 1) +
                                std::to_string(j + 1) +
                                " is nonzero but a reactive reference is zero (division by zero)");
      }
      out.de_ii(kE, 1) -= bij / (pi.kappa * qi);
      Matrix42d off = Matrix42d::Zero();
      off(kE, 1) = bij / (pi.kappa * qj);
      out.de_ij.emplace_back(j, off);
    }
  }
  return out;
}

inline UncertaintyBlocks build_uncertainty_blocks(const std::vector<DerParams>& ders,
                                                  const CouplingSpec& coupling, int i) {
  return uncertainty_blocks_for(ders, coupling.a_live, coupling.b_live,
                                coupling.q_rating_fallback, i);
}

// Graph Laplacian diag(W 1) - W of a weighted adjacency matrix.
inline MatrixXd laplacian(const MatrixXd& w) {
  MatrixXd l = -w;
  l.diagonal().setZero();
  for (Eigen::Index i = 0; i < w.rows(); ++i) l(i, i) = -l.row(i).sum();
  return l;
}

/// Connected-component labels of the graph with edges where adj(i,j) != 0.
inline std::vector<int> component_labels(const MatrixXd& adj, int* count = nullptr) {
  const auto n = static_cast<int>(adj.rows());
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  int next = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (label[static_cast<std::size_t>(s)] >= 0) continue;
    label[static_cast<std::size_t>(s)] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v) {
        if ((adj(u, v) != 0.0 || adj(v, u) != 0.0) && label[static_cast<std::size_t>(v)] < 0) {
          label[static_cast<std::size_t>(v)] = next;
          stack.push_back(v);
        }
      }
    }
    ++next;
  }
  if (count) *count = next;
  return label;
}

inline int component_count(const MatrixXd& adj) {
  int c = 0;
  component_labels(adj, &c);
  return c;
}

/// Aggregated matrices of the closed network model.
struct SystemMatrices {
  int n_ders = 0;
  MatrixXd a_d, b_d, e_d;
  MatrixXd delta_a, delta_e;
  MatrixXd h_mat, g_mat;
  MatrixXd lap_a, lap_b;
  VectorXd m_diag, n_diag, q_star_inv;
  MatrixXd s_bar_d;
  // Per-DER time constants and gains used by the compact vector field.
  VectorXd tau_c, k, kappa, xi;
};

// Stacks consensus blocks for couplings (a, b) into 4N x 4N and 4N x 2N.
inline std::pair<MatrixXd, MatrixXd> consensus_matrices(const std::vector<DerParams>& ders,
                                                        const MatrixXd& a, const MatrixXd& b,
                                                        bool rating_fallback) {
  const int n = static_cast<int>(ders.size());
  MatrixXd da = MatrixXd::Zero(kStatesPerDer * n, kStatesPerDer * n);
  MatrixXd de = MatrixXd::Zero(kStatesPerDer * n, kDisturbancesPerDer * n);
  for (int i = 0; i < n; ++i) {
    const auto blocks = uncertainty_blocks_for(ders, a, b, rating_fallback, i);
    da.block<4, 4>(4 * i, 4 * i) += blocks.da_ii;
    for (const auto& [j, m] : blocks.da_ij) da.block<4, 4>(4 * i, 4 * j) += m;
    de.block<4, 2>(4 * i, 2 * i) += blocks.de_ii;
    for (const auto& [j, m] : blocks.de_ij) de.block<4, 2>(4 * i, 2 * j) += m;
  }
  return {da, de};
}

inline SystemMatrices aggregate(const std::vector<DerParams>& ders, const CouplingSpec& coupling) {
  const int n = static_cast<int>(ders.size());
  if (n == 0) throw std::invalid_argument("aggregate: no DERs");
  if (coupling.n_ders != n) throw std::invalid_argument("aggregate: coupling dimension mismatch");
  coupling.validate();
  for (const auto& d : ders) d.validate();

  SystemMatrices sys;
  sys.n_ders = n;
  std::vector<Matrix4d> a_blocks;
  std::vector<Matrix42d> b_blocks, e_blocks;
  for (const auto& p : ders) {
    const auto m = build_der_matrices(p);
    a_blocks.push_back(m.a);
    b_blocks.push_back(m.b);
    e_blocks.push_back(m.e);
  }
  sys.a_d = block_diagonal(a_blocks);
  sys.b_d = block_diagonal(b_blocks);
  sys.e_d = block_diagonal(e_blocks);

  std::tie(sys.delta_a, sys.delta_e) =
      consensus_matrices(ders, coupling.a_live, coupling.b_live, coupling.q_rating_fallback);
  auto [da_max, de_max] =
      consensus_matrices(ders, coupling.a_max, coupling.b_max, coupling.q_rating_fallback);
  sys.h_mat = da_max / coupling.alpha;
  sys.g_mat = de_max / coupling.beta;

  sys.lap_a = laplacian(coupling.a_live);
  sys.lap_b = laplacian(coupling.b_live);
  sys.m_diag.resize(n);
  sys.n_diag.resize(n);
  sys.q_star_inv.resize(n);
  sys.tau_c.resize(n);
  sys.k.resize(n);
  sys.kappa.resize(n);
  sys.xi.resize(n);
  sys.s_bar_d = MatrixXd::Zero(2 * n, 2 * n);
  for (int i = 0; i < n; ++i) {
    const auto& p = ders[static_cast<std::size_t>(i)];
    sys.m_diag(i) = p.m;
    sys.n_diag(i) = p.n;
    const double q = reactive_normalizer(p, coupling.q_rating_fallback);
    sys.q_star_inv(i) = q != 0.0 ? 1.0 / q : 0.0;
    sys.tau_c(i) = p.tau_c;
    sys.k(i) = p.k;
    sys.kappa(i) = p.kappa;
    sys.xi(i) = p.xi;
    const double s = 1.0 / (p.s_bar * p.s_bar);
    sys.s_bar_d(2 * i, 2 * i) = s;
    sys.s_bar_d(2 * i + 1, 2 * i + 1) = s;
  }
  return sys;
}

/// Stacks the controllable part of DER states into x (4N).
inline VectorXd stack_states(const std::vector<DerState>& s) {
  VectorXd x(kStatesPerDer * static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto b = static_cast<Eigen::Index>(4 * i);
    x(b + kDOmega) = s[i].d_omega;
    x(b + kOmega) = s[i].omega_c;
    x(b + kDV) = s[i].d_v;
    x(b + kE) = s[i].e_c;
  }
  return x;
}

inline VectorXd stack_disturbances(const std::vector<Disturbance>& d) {
  VectorXd v(kDisturbancesPerDer * static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    v(static_cast<Eigen::Index>(2 * i)) = d[i].d_p;
    v(static_cast<Eigen::Index>(2 * i + 1)) = d[i].d_q;
  }
  return v;
}

struct BoundsReport {
  bool disturbance_ok = false;
  bool state_uncertainty_ok = false;
  bool disturbance_uncertainty_ok = false;
  // Non-negative margins mean the bound holds.
  double disturbance_margin = 0.0;          // 1 - d' S d
  double state_uncertainty_margin = 0.0;    // a^2 |Hx|^2 - |dA x|^2
  double disturbance_uncertainty_margin = 0.0;
};

inline BoundsReport check_bounds(const VectorXd& x, const VectorXd& d, const SystemMatrices& sys,
                                 double alpha, double beta) {
  if (x.size() != sys.a_d.rows() || d.size() != sys.e_d.cols()) {
    throw std::invalid_argument("check_bounds: dimension mismatch");
  }
  constexpr double kRelTol = 1e-12;
  BoundsReport r;
  const double dsd = d.dot(sys.s_bar_d * d);
  r.disturbance_margin = 1.0 - dsd;
  r.disturbance_ok = r.disturbance_margin >= -kRelTol;

  const double lhs_a = (sys.delta_a * x).squaredNorm();
  const double rhs_a = alpha * alpha * (sys.h_mat * x).squaredNorm();
  r.state_uncertainty_margin = rhs_a - lhs_a;
  r.state_uncertainty_ok = r.state_uncertainty_margin >= -kRelTol * std::max(1.0, rhs_a);

  const double lhs_e = (sys.delta_e * d).squaredNorm();
  const double rhs_e = beta * beta * (sys.g_mat * d).squaredNorm();
  r.disturbance_uncertainty_margin = rhs_e - lhs_e;
  r.disturbance_uncertainty_ok =
      r.disturbance_uncertainty_margin >= -kRelTol * std::max(1.0, rhs_e);
  return r;
}

}  // namespace nmg
