#pragma once

// Post-synthesis and post-simulation checks: connective stability over all
// interconnection corners, invariant-ellipsoid Monte Carlo, dissipation
// inequality along trajectories, and loss/sharing metrics.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmg/linalg.hpp"
#include "nmg/model.hpp"
#include "nmg/sim.hpp"

namespace nmg {

// ---------------------------------------------------------------- supply rate

struct SupplyRate {
  MatrixXd q_mat;   // 2N x 2N
  MatrixXd s_mat;   // 4N x 4N
  MatrixXd r_mat;   // 2N x 4N
  MatrixXd dr_mat;  // 2N x 4N
  MatrixXd ds_mat;  // 4N x 4N
  MatrixXd dq_mat;  // 2N x 2N, identically zero
};

struct Multipliers {
  double tau = 1.0, tau_h = 1.0, tau_g = 1.0, tau_v = 1.0;
};

/// Supply-rate matrices for a closed loop with gain k_d and Lyapunov matrix p.
/// delta_a and delta_e are the live coupling matrices of the configuration.
inline SupplyRate supply_rate(const SystemMatrices& sys, const MatrixXd& k_d, const MatrixXd& p,
                              double alpha, double beta, const Multipliers& mu) {
  const auto n = sys.a_d.rows();
  const auto nd = sys.e_d.cols();
  const MatrixXd i_n = MatrixXd::Identity(n, n);
  const MatrixXd pbk = p * sys.b_d * k_d;
  SupplyRate s;
  s.q_mat = -mu.tau * sys.s_bar_d - mu.tau_g * MatrixXd::Identity(nd, nd) +
            mu.tau_g * beta * beta * sys.g_mat.transpose() * sys.g_mat;
  s.s_mat = symmetrize(-sys.a_d.transpose() * p - pbk.transpose() - p * sys.a_d - pbk - mu.tau_v * p +
                       mu.tau_h * i_n - mu.tau_h * alpha * alpha * sys.h_mat.transpose() * sys.h_mat);
  s.r_mat = sys.e_d.transpose() * p;
  s.dr_mat = sys.delta_e.transpose() * p;
  s.ds_mat = 2.0 * sys.delta_a.transpose() * p;
  s.dq_mat = MatrixXd::Zero(nd, nd);
  return s;
}

/// Right side of the dissipation inequality at (x~, d~).
inline double supply_value(const SupplyRate& s, const VectorXd& x, const VectorXd& d) {
  return -x.dot(s.s_mat * x) + d.dot(s.q_mat * d) + x.dot(s.ds_mat * x) +
         2.0 * d.dot((s.r_mat + s.dr_mat) * x);
}

// ------------------------------------------------------- connective stability

struct CornerResult {
  std::vector<int> active;  // link indices switched on
  double worst_real = -std::numeric_limits<double>::infinity();
  int zero_modes = 0;
  int predicted_zero_modes = 0;
  int laplacian_nullity = 0;
  int components = 0;
};

struct ConnectiveReport {
  bool exhaustive = true;
  int n_links = 0;
  std::vector<CornerResult> corners;
  double worst_real = -std::numeric_limits<double>::infinity();
  bool zero_modes_match = true;
  bool stable = false;
};

struct ConnectiveOptions {
  int max_links = 20;
  int samples = 4096;
  std::uint64_t seed = 0;
  double zero_tol = 1e-9;
};

/// Zero eigenvalues of A_cl implied by the structure. Each DER with xi = 0,
/// or with k_e = -1, leaves its voltage integrator without feedback; k_Omega =
/// -1 detaches Omega from the frequency loop so one mode per communication
/// component survives.
inline int structural_zero_modes(const std::vector<DerParams>& ders, const GainMatrix& k, int components) {
  int z = 0;
  for (const auto& d : ders)
    if (d.xi == 0.0 || k.k_e == -1.0) ++z;
  if (k.k_Omega == -1.0) z += components;
  return z;
}

inline ConnectiveReport connective_stability_check(const std::vector<DerParams>& ders,
                                                   const CouplingSpec& coupling, const GainMatrix& gain,
                                                   double alpha, double beta,
                                                   const ConnectiveOptions& opt = {}) {
  const int n = static_cast<int>(ders.size());
  const auto links = coupling.links();
  ConnectiveReport rep;
  rep.n_links = static_cast<int>(links.size());
  rep.exhaustive = rep.n_links <= opt.max_links;

  std::vector<std::uint64_t> masks;
  if (rep.exhaustive) {
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << rep.n_links); ++m) masks.push_back(m);
  } else {
    std::mt19937_64 rng(opt.seed);
    for (int s = 0; s < opt.samples; ++s) masks.push_back(rng());
  }

  std::vector<Matrix4d> a_blocks;
  std::vector<Matrix42d> b_blocks;
  for (const auto& p : ders) {
    const auto m = build_der_matrices(p);
    a_blocks.push_back(m.a);
    b_blocks.push_back(m.b);
  }
  const MatrixXd a_d = block_diagonal(a_blocks);
  const MatrixXd bk = block_diagonal(b_blocks) * gain.aggregate(n);

  rep.stable = true;
  for (auto mask : masks) {
    CornerResult c;
    MatrixXd e = MatrixXd::Zero(n, n);
    for (int l = 0; l < rep.n_links; ++l) {
      if ((mask >> (l % 64)) & 1u) {
        c.active.push_back(l);
        e(links[l].first, links[l].second) = e(links[l].second, links[l].first) = 1.0;
      }
    }
    const auto [da, de] = consensus_matrices(ders, alpha * e, beta * e, coupling.q_rating_fallback);
    (void)de;
    const MatrixXd a_cl = a_d + da + bk;
    Eigen::EigenSolver<MatrixXd> es(a_cl, false);
    std::vector<std::complex<double>> ev(es.eigenvalues().data(), es.eigenvalues().data() + a_cl.rows());
    for (const auto& v : ev)
      if (std::abs(v) < opt.zero_tol) ++c.zero_modes;

    c.components = component_count(e);
    const VectorXd lap_eigs = Eigen::SelfAdjointEigenSolver<MatrixXd>(laplacian(e)).eigenvalues();
    for (int i = 0; i < lap_eigs.size(); ++i)
      if (std::abs(lap_eigs(i)) < opt.zero_tol) ++c.laplacian_nullity;
    c.predicted_zero_modes = structural_zero_modes(ders, gain, c.components);

    std::sort(ev.begin(), ev.end(), [](auto x, auto y) { return std::abs(x) < std::abs(y); });
    for (std::size_t i = static_cast<std::size_t>(c.predicted_zero_modes); i < ev.size(); ++i) {
      c.worst_real = std::max(c.worst_real, ev[i].real());
    }
    if (c.zero_modes != c.predicted_zero_modes || c.laplacian_nullity != c.components) {
      rep.zero_modes_match = false;
    }
    rep.worst_real = std::max(rep.worst_real, c.worst_real);
    rep.corners.push_back(std::move(c));
  }
  rep.stable = rep.worst_real < 0 && rep.zero_modes_match;
  return rep;
}

// ------------------------------------------------------- ellipsoid containment

struct EllipsoidOptions {
  int trials = 200;
  double horizon = 5.0;
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
  // Fraction of trials driven by the state-dependent worst-case disturbance;
  // the rest use a random constant disturbance on the ball boundary.
  double worst_case_fraction = 0.5;
  bool random_corners = true;
};

struct EllipsoidReport {
  double sup_v = 0.0;
  int trials = 0;
  double dt = 0.0;
  bool pass = false;
};

/// Monte Carlo check that trajectories starting on {x^T P x = 1} stay inside
/// it under disturbances with d^T S_bar d <= 1, for the linear closed loop at
/// random corners of the interconnection set.
inline EllipsoidReport ellipsoid_containment(const MatrixXd& p, const std::vector<DerParams>& ders,
                                             const CouplingSpec& coupling, const MatrixXd& k_d,
                                             double alpha, double beta, const EllipsoidOptions& opt = {}) {
  if (min_eigenvalue(p) <= 0) throw std::invalid_argument("ellipsoid_containment: P not positive definite");
  const int n = static_cast<int>(ders.size());
  const auto links = coupling.links();
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);

  CouplingSpec full = coupling;
  full.alpha = alpha;
  full.beta = beta;
  full.a_max = alpha * full.e_fund;
  full.b_max = beta * full.e_fund;
  full.set_strengths(full.e_fund);
  const SystemMatrices base = aggregate(ders, full);
  const MatrixXd a0 = base.a_d + base.b_d * k_d;
  const MatrixXd s_inv = base.s_bar_d.inverse();

  EllipsoidReport rep;
  rep.trials = opt.trials;
  const int worst = static_cast<int>(std::lround(opt.worst_case_fraction * opt.trials));
  for (int trial = 0; trial < opt.trials; ++trial) {
    MatrixXd e = MatrixXd::Zero(n, n);
    for (const auto& [i, j] : links) {
      const double on = opt.random_corners ? coin(rng) : 1.0;
      e(i, j) = e(j, i) = on;
    }
    const auto [da, de] = consensus_matrices(ders, alpha * e, beta * e, coupling.q_rating_fallback);
    const MatrixXd a_cl = a0 + da;
    const MatrixXd e_cl = base.e_d + de;

    Eigen::EigenSolver<MatrixXd> es(a_cl, false);
    const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    const double dt = std::min(1e-3, 0.1 / std::max(rho, 1e-12));
    rep.dt = std::max(rep.dt, dt);

    VectorXd x(4 * n);
    for (int i = 0; i < x.size(); ++i) x(i) = normal(rng);
    x /= std::sqrt(x.dot(p * x));

    const bool bang = trial < worst;
    VectorXd d_const(2 * n);
    for (int i = 0; i < d_const.size(); ++i) d_const(i) = normal(rng);
    d_const /= std::sqrt(d_const.dot(base.s_bar_d * d_const));
    const MatrixXd grad = s_inv * e_cl.transpose() * p;

    auto dist = [&](const VectorXd& s) -> VectorXd {
      if (!bang) return d_const;
      VectorXd d = grad * s;
      const double nrm = std::sqrt(d.dot(base.s_bar_d * d));
      if (nrm < 1e-300) return d_const;
      return d / nrm;
    };
    auto f = [&](const VectorXd& s) -> VectorXd { return a_cl * s + e_cl * dist(s); };

    const auto steps = static_cast<long>(std::ceil(opt.horizon / dt));
    for (long k = 0; k < steps; ++k) {
      const VectorXd k1 = f(x);
      const VectorXd k2 = f(x + 0.5 * dt * k1);
      const VectorXd k3 = f(x + 0.5 * dt * k2);
      const VectorXd k4 = f(x + dt * k3);
      x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      rep.sup_v = std::max(rep.sup_v, x.dot(p * x));
    }
  }
  rep.pass = rep.sup_v <= 1.0 + opt.tolerance;
  return rep;
}

// --------------------------------------------------------------- dissipativity

struct DissipativityOptions {
  double rel_tol = 1e-6;
  int event_guard = 2;        // samples skipped on each side of an event
  double coarse_tol = 1e-4;   // step-halving disagreement relative to signal scale
};

struct DissipativityReport {
  double max_violation = 0.0;  // max (Vdot - rhs) / max(1, |rhs|)
  double max_abs_violation = 0.0;
  double t_worst = 0.0;
  int samples = 0;
  int skipped = 0;
  bool too_coarse = false;
  bool pass = false;
};

inline VectorXd stacked_x(const std::vector<DerState>& s) { return stack_states(s); }

/// Closed-loop equilibrium of a configuration for a constant disturbance.
inline VectorXd linear_equilibrium(const SystemMatrices& sys, const MatrixXd& k_d, const VectorXd& d,
                                   const VectorXd& x_hint) {
  const MatrixXd a_cl = sys.a_d + sys.delta_a + sys.b_d * k_d;
  const VectorXd rhs = -(sys.e_d + sys.delta_e) * d;
  Eigen::FullPivLU<MatrixXd> lu(a_cl);
  if (lu.isInvertible()) return lu.solve(rhs);
  // Singular: refine the terminal state toward the equilibrium set.
  const VectorXd res = a_cl * x_hint - rhs;
  return x_hint - a_cl.completeOrthogonalDecomposition().solve(res);
}

/// Evaluates the dissipation inequality along a logged trajectory. Each
/// segment is referenced to its own equilibrium (x*, d*), with d* the
/// disturbance at the last sample of the segment.
inline DissipativityReport dissipativity_check(const TrajectoryLog& log, const std::vector<DerParams>& ders,
                                               const MatrixXd& k_d, const MatrixXd& p, double alpha,
                                               double beta, const Multipliers& mu,
                                               const DissipativityOptions& opt = {}) {
  DissipativityReport rep;
  const std::size_t n_s = log.times.size();
  if (n_s < 5) throw std::invalid_argument("dissipativity_check: trajectory too short");

  std::vector<std::size_t> seg_of(n_s);
  for (std::size_t k = 0, s = 0; k < n_s; ++k) {
    while (s + 1 < log.segments.size() && log.segments[s + 1].t_begin <= log.times[k]) ++s;
    seg_of[k] = s;
  }
  std::vector<bool> near_event(n_s, false);
  for (const auto& seg : log.segments) {
    for (std::size_t k = 0; k < n_s; ++k) {
      const double dt = k + 1 < n_s ? log.times[k + 1] - log.times[k] : log.times[k] - log.times[k - 1];
      if (std::abs(log.times[k] - seg.t_begin) <= (opt.event_guard + 0.5) * dt) near_event[k] = true;
    }
  }

  struct Ref {
    VectorXd x_star, d_star;
    SupplyRate supply;
  };
  std::vector<Ref> refs;
  for (std::size_t s = 0; s < log.segments.size(); ++s) {
    std::size_t last = 0;
    for (std::size_t k = 0; k < n_s; ++k)
      if (seg_of[k] == s) last = k;
    const SystemMatrices sys = aggregate(ders, log.segments[s].coupling);
    Ref r;
    r.d_star = stack_disturbances(log.dist[last]);
    r.x_star = linear_equilibrium(sys, k_d, r.d_star, stacked_x(log.states[last]));
    r.supply = supply_rate(sys, k_d, p, alpha, beta, mu);
    refs.push_back(std::move(r));
  }

  auto v_of = [&](std::size_t k, const Ref& r) {
    const VectorXd xt = stacked_x(log.states[k]) - r.x_star;
    return xt.dot(p * xt);
  };
  for (std::size_t k = 2; k + 2 < n_s; ++k) {
    const std::size_t s = seg_of[k];
    if (near_event[k] || seg_of[k - 2] != s || seg_of[k + 2] != s || !log.segments[s].dapi_enabled) {
      ++rep.skipped;
      continue;
    }
    const Ref& r = refs[s];
    const double h = log.times[k + 1] - log.times[k];
    const double vdot = (v_of(k + 1, r) - v_of(k - 1, r)) / (2 * h);
    const double vdot2 = (v_of(k + 2, r) - v_of(k - 2, r)) / (4 * h);
    const double scale = std::max({1.0, std::abs(vdot), std::abs(vdot2)});
    if (std::abs(vdot - vdot2) > opt.coarse_tol * scale) rep.too_coarse = true;

    const VectorXd xt = stacked_x(log.states[k]) - r.x_star;
    const VectorXd dt = stack_disturbances(log.dist[k]) - r.d_star;
    const double rhs = supply_value(r.supply, xt, dt);
    const double viol = (vdot - rhs) / std::max(1.0, std::abs(rhs));
    ++rep.samples;
    if (viol > rep.max_violation || rep.samples == 1) {
      rep.max_violation = viol;
      rep.max_abs_violation = vdot - rhs;
      rep.t_worst = log.times[k];
    }
  }
  rep.pass = rep.samples > 0 && rep.max_violation <= opt.rel_tol && !rep.too_coarse;
  return rep;
}

// -------------------------------------------------------------------- metrics

struct Window {
  std::string label;
  double t_begin = 0.0;
  double t_end = 0.0;
};

struct WindowMetrics {
  std::string label;
  double loss_ro_freq = 0, loss_re_freq = 0, loss_ro_volt = 0, loss_re_volt = 0;
};

/// Relative-deviation losses per window, maximized over DERs. The frequency
/// signal is omega_star + d_omega and the voltage signal v_star + d_v.
inline WindowMetrics loss_metrics(const TrajectoryLog& log, const std::vector<DerParams>& ders,
                                  const Window& w) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < log.times.size(); ++k)
    if (log.times[k] >= w.t_begin && log.times[k] <= w.t_end) idx.push_back(k);
  if (idx.size() < 2) throw std::invalid_argument("loss_metrics: empty window " + w.label);
  WindowMetrics m;
  m.label = w.label;
  const double span = log.times[idx.back()] - log.times[idx.front()];
  for (int i = 0; i < log.n_ders; ++i) {
    const auto& par = ders[static_cast<std::size_t>(i)];
    double sup_f = 0, sup_v = 0, int_f = 0, int_v = 0;
    double prev_f = 0, prev_v = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& s = log.states[idx[j]][static_cast<std::size_t>(i)];
      const double f = std::abs(s.d_omega) / std::abs(par.omega_star + s.d_omega);
      const double v = std::abs(s.d_v) / std::abs(par.v_star + s.d_v);
      sup_f = std::max(sup_f, f);
      sup_v = std::max(sup_v, v);
      if (j > 0) {
        const double h = log.times[idx[j]] - log.times[idx[j - 1]];
        int_f += 0.5 * h * (f + prev_f);
        int_v += 0.5 * h * (v + prev_v);
      }
      prev_f = f;
      prev_v = v;
    }
    m.loss_ro_freq = std::max(m.loss_ro_freq, sup_f);
    m.loss_ro_volt = std::max(m.loss_ro_volt, sup_v);
    if (span > 0) {
      m.loss_re_freq = std::max(m.loss_re_freq, int_f / span);
      m.loss_re_volt = std::max(m.loss_re_volt, int_v / span);
    }
  }
  return m;
}

struct SharingReport {
  double err_p = 0.0;
  double err_q = 0.0;
};

/// Droop-weighted sharing residuals over the last 10% of the window, within
/// each electrical island of the configuration active at the window end.
inline SharingReport sharing_residuals(const TrajectoryLog& log, const std::vector<DerParams>& ders,
                                       const Window& w) {
  std::size_t seg = 0;
  while (seg + 1 < log.segments.size() && log.segments[seg + 1].t_begin <= w.t_end) ++seg;
  int n_islands = 0;
  const auto island = log.segments[seg].grid.islands(&n_islands);
  const double t0 = w.t_end - 0.1 * (w.t_end - w.t_begin);
  SharingReport rep;
  for (std::size_t k = 0; k < log.times.size(); ++k) {
    if (log.times[k] < t0 || log.times[k] > w.t_end) continue;
    for (int c = 0; c < n_islands; ++c) {
      std::vector<double> mp, nq;
      for (int i = 0; i < log.n_ders; ++i) {
        if (island[static_cast<std::size_t>(i)] != c) continue;
        const auto& par = ders[static_cast<std::size_t>(i)];
        const auto& d = log.dist[k][static_cast<std::size_t>(i)];
        mp.push_back(par.m * (par.p_star + d.d_p));
        nq.push_back(par.n * (par.q_star + d.d_q));
      }
      if (mp.size() < 2) continue;
      auto residual = [](const std::vector<double>& v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        double scale = 0;
        for (double x : v) scale = std::max(scale, std::abs(x));
        return scale > 0 ? (*hi - *lo) / scale : 0.0;
      };
      rep.err_p = std::max(rep.err_p, residual(mp));
      rep.err_q = std::max(rep.err_q, residual(nq));
    }
  }
  return rep;
}

}  // namespace nmg
