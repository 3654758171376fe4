#pragma once

// Robust state-feedback synthesis: LMI assembly, solution, independent
// re-verification and multiplier search.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "nmg/linalg.hpp"
#include "nmg/model.hpp"
#include "nmg/sdp.hpp"

namespace nmg {

struct SynthesisProblem {
  SystemMatrices sys;
  double tau = 1.0;    // multiplier on the disturbance ball
  double tau_h = 1.0;  // multiplier on the state-coupling bound
  double tau_g = 1.0;  // multiplier on the disturbance-coupling bound
  double tau_v = 1.0;  // decay-rate multiplier on V
  double kappa_y = 1.0;
  double c1 = 1.0, c2 = 1.0, c3 = 1.0;
  double alpha_bar = 1.0;
  double beta_bar = 1.0;
  // One (Y, L) block pair shared by every DER; otherwise one pair per DER.
  bool shared_blocks = true;
  double y_margin = 1e-8;
  // Y <= y_upper I; zero disables the bound.
  double y_upper = 1e4;
  double scalar_slack = 1e-10;

  void validate() const {
    auto pos = [](double v, const char* name) {
      if (!(v > 0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string("SynthesisProblem: ") + name + " must be positive");
      }
    };
    pos(tau, "tau");
    pos(tau_h, "tau_h");
    pos(tau_g, "tau_g");
    pos(tau_v, "tau_v");
    pos(kappa_y, "kappa_y");
    pos(c1, "c1");
    pos(c2, "c2");
    pos(c3, "c3");
    pos(alpha_bar, "alpha_bar");
    pos(beta_bar, "beta_bar");
    if (sys.n_ders <= 0) throw std::invalid_argument("SynthesisProblem: empty system");
  }
};

/// Variable layout of the LMI problem.
struct SynthesisVariables {
  int n_ders = 0;
  bool shared = true;
  int n_vars = 0;
  int gamma_alpha = 0, gamma_beta = 0, kappa_l = 0;

  static constexpr int kPerDer = 10;  // Y_f (3), Y_v (3), L (4)

  int base(int der) const { return shared ? 0 : kPerDer * der; }

  // Variable index of Y_der(r, c) or -1 when structurally zero.
  int y_var(int der, int r, int c) const {
    if (r > c) std::swap(r, c);
    const int b = base(der);
    if (r < 2 && c < 2) return b + (r == 0 ? (c == 0 ? 0 : 1) : 2);
    if (r >= 2 && c >= 2) return b + 3 + (r == 2 ? (c == 2 ? 0 : 1) : 2);
    return -1;
  }

  int l_var(int der, int r, int c) const {
    const int b = base(der) + 6;
    if (r == 0 && c == 0) return b;
    if (r == 0 && c == 1) return b + 1;
    if (r == 1 && c == 2) return b + 2;
    if (r == 1 && c == 3) return b + 3;
    return -1;
  }

  static SynthesisVariables make(int n_ders, bool shared) {
    SynthesisVariables v;
    v.n_ders = n_ders;
    v.shared = shared;
    const int blocks = shared ? 1 : n_ders;
    v.gamma_alpha = kPerDer * blocks;
    v.gamma_beta = v.gamma_alpha + 1;
    v.kappa_l = v.gamma_alpha + 2;
    v.n_vars = v.gamma_alpha + 3;
    return v;
  }

  MatrixXd y_of(const VectorXd& v) const {
    MatrixXd y = MatrixXd::Zero(4 * n_ders, 4 * n_ders);
    for (int i = 0; i < n_ders; ++i)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          const int k = y_var(i, r, c);
          if (k >= 0) y(4 * i + r, 4 * i + c) = v(k);
        }
    return y;
  }

  MatrixXd l_of(const VectorXd& v) const {
    MatrixXd l = MatrixXd::Zero(2 * n_ders, 4 * n_ders);
    for (int i = 0; i < n_ders; ++i)
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) {
          const int k = l_var(i, r, c);
          if (k >= 0) l(2 * i + r, 4 * i + c) = v(k);
        }
    return l;
  }
};

namespace detail {

// Matrix affine in the LMI variables: constant plus one coefficient per variable.
struct AffineMatrix {
  MatrixXd constant;
  std::map<int, MatrixXd> coef;

  AffineMatrix(Eigen::Index r, Eigen::Index c) : constant(MatrixXd::Zero(r, c)) {}

  MatrixXd& at(int var) {
    auto it = coef.find(var);
    if (it == coef.end()) it = coef.emplace(var, MatrixXd::Zero(constant.rows(), constant.cols())).first;
    return it->second;
  }

  AffineMatrix left(const MatrixXd& m) const {
    AffineMatrix out(m.rows(), constant.cols());
    out.constant = m * constant;
    for (const auto& [k, c] : coef) out.coef.emplace(k, m * c);
    return out;
  }

  AffineMatrix right(const MatrixXd& m) const {
    AffineMatrix out(constant.rows(), m.cols());
    out.constant = constant * m;
    for (const auto& [k, c] : coef) out.coef.emplace(k, c * m);
    return out;
  }

  AffineMatrix transpose() const {
    AffineMatrix out(constant.cols(), constant.rows());
    out.constant = constant.transpose();
    for (const auto& [k, c] : coef) out.coef.emplace(k, c.transpose());
    return out;
  }

  AffineMatrix& operator+=(const AffineMatrix& o) {
    constant += o.constant;
    for (const auto& [k, c] : o.coef) at(k) += c;
    return *this;
  }

  AffineMatrix& operator*=(double s) {
    constant *= s;
    for (auto& [k, c] : coef) c *= s;
    return *this;
  }

  // Writes this matrix into `blk` at (r0, c0). Diagonal placements only
  // visit the upper triangle.
  void place(LmiBlock& blk, int r0, int c0, bool diagonal) const {
    for (Eigen::Index i = 0; i < constant.rows(); ++i)
      for (Eigen::Index j = diagonal ? i : 0; j < constant.cols(); ++j) {
        const int r = r0 + static_cast<int>(i), c = c0 + static_cast<int>(j);
        if (constant(i, j) != 0.0) blk.add_constant(r, c, constant(i, j));
        for (const auto& [k, m] : coef)
          if (m(i, j) != 0.0) blk.add(k, r, c, m(i, j));
      }
  }
};

inline AffineMatrix y_affine(const SynthesisVariables& v) {
  const int n = 4 * v.n_ders;
  AffineMatrix y(n, n);
  for (int i = 0; i < v.n_ders; ++i)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const int k = v.y_var(i, r, c);
        if (k >= 0) y.at(k)(4 * i + r, 4 * i + c) += 1.0;
      }
  return y;
}

inline AffineMatrix l_affine(const SynthesisVariables& v) {
  AffineMatrix l(2 * v.n_ders, 4 * v.n_ders);
  for (int i = 0; i < v.n_ders; ++i)
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 4; ++c) {
        const int k = v.l_var(i, r, c);
        if (k >= 0) l.at(k)(2 * i + r, 4 * i + c) += 1.0;
      }
  return l;
}

}  // namespace detail

// Offsets of the blocks of the main LMI, ordered (x, Hx, d, Gd, h, g).
struct MainLmiLayout {
  int n = 0, nd = 0;
  int x = 0, hy = 0, d = 0, gy = 0, h = 0, g = 0, dim = 0;
  explicit MainLmiLayout(int n_ders) {
    n = 4 * n_ders;
    nd = 2 * n_ders;
    x = 0;
    hy = n;
    d = 2 * n;
    gy = d + nd;
    h = gy + n;
    g = h + n;
    dim = g + n;
  }
};

/// Builds every constraint of the synthesis problem as LMI blocks.
inline LmiProblem assemble_lmi(const SynthesisProblem& p) {
  p.validate();
  const auto& s = p.sys;
  const int nd = s.n_ders;
  const auto vars = SynthesisVariables::make(nd, p.shared_blocks);
  const MainLmiLayout lay(nd);
  const int n = lay.n;

  LmiProblem prob;
  prob.n_vars = vars.n_vars;
  prob.objective = VectorXd::Zero(vars.n_vars);
  prob.objective(vars.gamma_alpha) = p.c1;
  prob.objective(vars.gamma_beta) = p.c2;
  prob.objective(vars.kappa_l) = p.c3;

  const auto y = detail::y_affine(vars);
  const auto l = detail::l_affine(vars);

  LmiBlock main("main", lay.dim, vars.n_vars);
  {
    auto ay = y.left(s.a_d);
    ay += l.left(s.b_d);
    auto nblk = ay;
    nblk += ay.transpose();
    auto ty = y;
    ty *= p.tau_v;
    nblk += ty;
    nblk *= p.kappa_y;
    nblk.place(main, lay.x, lay.x, true);

    auto yh = y.right(s.h_mat.transpose());
    yh *= p.kappa_y;
    yh.place(main, lay.x, lay.hy, false);
  }
  for (int i = 0; i < n; ++i) main.add(vars.gamma_alpha, lay.hy + i, lay.hy + i, -1.0 / p.tau_h);
  main.add_constant_block(lay.x, lay.d, s.e_d);
  main.add_constant_block(lay.d, lay.d, -p.tau * s.s_bar_d);
  main.add_constant_block(lay.d, lay.gy, s.g_mat.transpose());
  for (int i = 0; i < n; ++i) {
    main.add(vars.gamma_beta, lay.gy + i, lay.gy + i, -1.0 / p.tau_g);
    main.add_constant(lay.x + i, lay.h + i, 1.0);
    main.add_constant(lay.x + i, lay.g + i, 1.0);
    main.add_constant(lay.h + i, lay.h + i, -p.tau_h);
    main.add_constant(lay.g + i, lay.g + i, -p.tau_g);
  }
  prob.blocks.push_back(std::move(main));

  const int blocks = p.shared_blocks ? 1 : nd;
  for (int i = 0; i < blocks; ++i) {
    for (int half = 0; half < 2; ++half) {
      LmiBlock pos("y_pd_" + std::to_string(i) + (half == 0 ? "_f" : "_v"), 2, vars.n_vars);
      for (int r = 0; r < 2; ++r) {
        pos.add_constant(r, r, p.y_margin);
        for (int c = r; c < 2; ++c) pos.add(vars.y_var(i, 2 * half + r, 2 * half + c), r, c, -1.0);
      }
      prob.blocks.push_back(std::move(pos));
      if (p.y_upper > 0) {
        LmiBlock cap("y_cap_" + std::to_string(i) + (half == 0 ? "_f" : "_v"), 2, vars.n_vars);
        for (int r = 0; r < 2; ++r) {
          cap.add_constant(r, r, -p.y_upper);
          for (int c = r; c < 2; ++c) cap.add(vars.y_var(i, 2 * half + r, 2 * half + c), r, c, 1.0);
        }
        prob.blocks.push_back(std::move(cap));
      }
    }
    LmiBlock gain("gain_bound_" + std::to_string(i), 6, vars.n_vars);
    for (int r = 0; r < 4; ++r) gain.add(vars.kappa_l, r, r, -1.0);
    for (int r = 0; r < 2; ++r) {
      gain.add_constant(4 + r, 4 + r, -1.0);
      for (int c = 0; c < 4; ++c) {
        const int k = vars.l_var(i, r, c);
        if (k >= 0) gain.add(k, c, 4 + r, 1.0);
      }
    }
    prob.blocks.push_back(std::move(gain));
  }

  LmiBlock ga("alpha_bound", 1, vars.n_vars);
  ga.add_constant(0, 0, 1.0 / (p.alpha_bar * p.alpha_bar) + p.scalar_slack);
  ga.add(vars.gamma_alpha, 0, 0, -1.0);
  prob.blocks.push_back(std::move(ga));
  LmiBlock gb("beta_bound", 1, vars.n_vars);
  gb.add_constant(0, 0, 1.0 / (p.beta_bar * p.beta_bar) + p.scalar_slack);
  gb.add(vars.gamma_beta, 0, 0, -1.0);
  prob.blocks.push_back(std::move(gb));
  return prob;
}

struct SynthesisResult {
  bool feasible = false;
  SdpStatus status = SdpStatus::kNumericalFailure;
  std::string message;
  MatrixXd y, l;
  double gamma_alpha = 0, gamma_beta = 0, kappa_l = 0;
  GainMatrix k_gain;                 // DER 0 block
  std::vector<GainMatrix> k_blocks;  // one per DER
  MatrixXd k_d;
  MatrixXd p_lyap;
  double p_norm = std::numeric_limits<double>::infinity();
  double alpha = 0, beta = 0;
  double objective = std::numeric_limits<double>::infinity();
  std::map<std::string, double> residuals;  // lambda_max per constraint, independent check
  double max_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::vector<std::string> warnings;
  // Hyperparameters of the solve.
  double kappa_y = 0, tau = 0, tau_h = 0, tau_g = 0, tau_v = 0;
};

/// Substitutes (Y, L, gammas, kappa_L) into the constraint matrices, built
/// densely without the solver's data structures, and returns lambda_max of each.
inline std::map<std::string, double> verify(const SynthesisProblem& p, const MatrixXd& y,
                                            const MatrixXd& l, double gamma_alpha, double gamma_beta,
                                            double kappa_l) {
  const auto& s = p.sys;
  const MainLmiLayout lay(s.n_ders);
  const int n = lay.n, nd = lay.nd;
  const MatrixXd w = p.kappa_y * y;
  const MatrixXd lw = p.kappa_y * l;
  const MatrixXd i_n = MatrixXd::Identity(n, n);
  MatrixXd m = MatrixXd::Zero(lay.dim, lay.dim);
  m.block(lay.x, lay.x, n, n) =
      s.a_d * w + w * s.a_d.transpose() + s.b_d * lw + lw.transpose() * s.b_d.transpose() + p.tau_v * w;
  m.block(lay.x, lay.hy, n, n) = w * s.h_mat.transpose();
  m.block(lay.hy, lay.hy, n, n) = -(gamma_alpha / p.tau_h) * i_n;
  m.block(lay.x, lay.d, n, nd) = s.e_d;
  m.block(lay.d, lay.d, nd, nd) = -p.tau * s.s_bar_d;
  m.block(lay.d, lay.gy, nd, n) = s.g_mat.transpose();
  m.block(lay.gy, lay.gy, n, n) = -(gamma_beta / p.tau_g) * i_n;
  m.block(lay.x, lay.h, n, n) = i_n;
  m.block(lay.x, lay.g, n, n) = i_n;
  m.block(lay.h, lay.h, n, n) = -p.tau_h * i_n;
  m.block(lay.g, lay.g, n, n) = -p.tau_g * i_n;
  m = m.selfadjointView<Eigen::Upper>();

  auto lam_max = [](const MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(es.eigenvalues().size() - 1);
  };
  std::map<std::string, double> out;
  out["main"] = lam_max(m);
  out["y_pd"] = lam_max(p.y_margin * i_n - y);
  if (p.y_upper > 0) out["y_cap"] = lam_max(y - p.y_upper * i_n);
  MatrixXd g = MatrixXd::Zero(n + nd, n + nd);
  g.topLeftCorner(n, n) = -kappa_l * i_n;
  g.topRightCorner(n, nd) = l.transpose();
  g.bottomLeftCorner(nd, n) = l;
  g.bottomRightCorner(nd, nd) = -MatrixXd::Identity(nd, nd);
  out["gain_bound"] = lam_max(g);
  out["alpha_bound"] = 1.0 / (p.alpha_bar * p.alpha_bar) + p.scalar_slack - gamma_alpha;
  out["beta_bound"] = 1.0 / (p.beta_bar * p.beta_bar) + p.scalar_slack - gamma_beta;
  return out;
}

/// K = L Y^-1, checked for structure and conditioning.
inline MatrixXd recover_gain(const MatrixXd& l, const MatrixXd& y, std::vector<std::string>* warnings = nullptr) {
  Eigen::JacobiSVD<MatrixXd> svd(y);
  const auto& sv = svd.singularValues();
  const double cond = sv(0) / sv(sv.size() - 1);
  if (!(cond <= 1e12)) {
    throw std::runtime_error("recover_gain: Y ill-conditioned (cond = " + std::to_string(cond) + ")");
  }
  const MatrixXd k = y.transpose().ldlt().solve(l.transpose()).transpose();
  const int nd = static_cast<int>(y.rows()) / kStatesPerDer;
  double off = 0.0;
  for (int r = 0; r < 2 * nd; ++r)
    for (int c = 0; c < 4 * nd; ++c) {
      const int der = r / 2, row = r % 2;
      const bool in_pattern = c / 4 == der && (row == 0 ? (c % 4 < 2) : (c % 4 >= 2));
      if (!in_pattern) off = std::max(off, std::abs(k(r, c)));
    }
  if (off > 1e-10 * std::max(1.0, k.cwiseAbs().maxCoeff())) {
    throw std::runtime_error("recover_gain: gain left the block pattern");
  }
  if (warnings) {
    for (int r = 0; r < 2 * nd; ++r)
      for (int c = 0; c < 4 * nd; ++c) {
        const int der = r / 2, row = r % 2;
        const bool in_pattern = c / 4 == der && (row == 0 ? (c % 4 < 2) : (c % 4 >= 2));
        if (in_pattern && k(r, c) >= 0) {
          warnings->push_back("non-negative gain at DER " + std::to_string(der) + " (" +
                              std::to_string(row) + "," + std::to_string(c % 4) + ")");
        }
      }
  }
  return k;
}

inline GainMatrix gain_block(const MatrixXd& k_d, int der) {
  return GainMatrix{k_d(2 * der, 4 * der + kDOmega), k_d(2 * der, 4 * der + kOmega),
                    k_d(2 * der + 1, 4 * der + kDV), k_d(2 * der + 1, 4 * der + kE)};
}

/// Solves one synthesis instance with fixed multipliers.
inline SynthesisResult synthesize(const SynthesisProblem& p, const SdpOptions& opt = {.margin = 1e-7}) {
  SynthesisResult r;
  r.kappa_y = p.kappa_y;
  r.tau = p.tau;
  r.tau_h = p.tau_h;
  r.tau_g = p.tau_g;
  r.tau_v = p.tau_v;
  const auto prob = assemble_lmi(p);
  const auto sol = solve_sdp(prob, opt);
  r.status = sol.status;
  r.iterations = sol.iterations;
  r.message = sol.message;
  if (sol.status != SdpStatus::kOptimal) return r;

  const auto vars = SynthesisVariables::make(p.sys.n_ders, p.shared_blocks);
  r.y = vars.y_of(sol.v);
  r.l = vars.l_of(sol.v);
  r.gamma_alpha = sol.v(vars.gamma_alpha);
  r.gamma_beta = sol.v(vars.gamma_beta);
  r.kappa_l = sol.v(vars.kappa_l);
  r.objective = sol.objective;
  r.residuals = verify(p, r.y, r.l, r.gamma_alpha, r.gamma_beta, r.kappa_l);
  r.max_residual = -std::numeric_limits<double>::infinity();
  for (const auto& [name, v] : r.residuals) r.max_residual = std::max(r.max_residual, v);
  if (r.max_residual > 1e-7) {
    r.message = "verification failed: max residual " + std::to_string(r.max_residual);
    return r;
  }
  try {
    r.k_d = recover_gain(r.l, r.y, &r.warnings);
  } catch (const std::runtime_error& e) {
    r.message = e.what();
    return r;
  }
  for (int i = 0; i < p.sys.n_ders; ++i) r.k_blocks.push_back(gain_block(r.k_d, i));
  r.k_gain = r.k_blocks.front();
  r.p_lyap = symmetrize((p.kappa_y * r.y).inverse());
  r.p_norm = max_eigenvalue(r.p_lyap);
  r.alpha = 1.0 / std::sqrt(r.gamma_alpha);
  r.beta = 1.0 / std::sqrt(r.gamma_beta);
  r.feasible = true;
  return r;
}

struct SearchGrid {
  std::vector<double> kappa_y{0.01, 0.1, 1.0, 10.0, 100.0};
  std::vector<double> tau{1.0};
  std::vector<double> tau_h{1.0};
  std::vector<double> tau_g{1.0};
  std::vector<double> tau_v{0.1, 1.0};
  // Use tau = tau_v at every point and ignore the tau list.
  bool tie_tau_to_tau_v = true;
};

struct SearchPoint {
  double kappa_y = 0, tau = 0, tau_h = 0, tau_g = 0, tau_v = 0;
  bool skipped = false;  // tau > tau_v breaks the invariance argument
  bool feasible = false;
  std::string status;
  double p_norm = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::infinity();
  double max_residual = std::numeric_limits<double>::infinity();
};

struct SearchResult {
  bool found = false;
  SynthesisResult best;
  std::size_t best_index = 0;
  std::vector<SearchPoint> points;    // lexicographic grid order
  std::vector<double> best_so_far;    // ||P|| of each improving candidate
};

/// Solves every grid point and keeps the feasible result with the smallest
/// ||P||, then the smallest objective, then the earliest grid position.
inline SearchResult search_hyperparameters(const SynthesisProblem& base, const SearchGrid& grid,
                                           int threads = 1, const SdpOptions& opt = {.margin = 1e-7}) {
  if (grid.kappa_y.empty() || grid.tau_h.empty() || grid.tau_g.empty() || grid.tau_v.empty() ||
      (!grid.tie_tau_to_tau_v && grid.tau.empty())) {
    throw std::invalid_argument("search_hyperparameters: empty grid");
  }
  std::vector<SynthesisProblem> problems;
  SearchResult out;
  const std::vector<double> taus = grid.tie_tau_to_tau_v ? std::vector<double>{0.0} : grid.tau;
  for (double ky : grid.kappa_y)
    for (double t : taus)
      for (double th : grid.tau_h)
        for (double tg : grid.tau_g)
          for (double tv : grid.tau_v) {
            SynthesisProblem p = base;
            p.kappa_y = ky;
            p.tau = grid.tie_tau_to_tau_v ? tv : t;
            p.tau_h = th;
            p.tau_g = tg;
            p.tau_v = tv;
            problems.push_back(p);
            SearchPoint sp{ky, p.tau, th, tg, tv};
            sp.skipped = p.tau > p.tau_v;
            out.points.push_back(sp);
          }

  std::vector<SynthesisResult> results(problems.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < problems.size(); i += stride) {
      if (!out.points[i].skipped) results[i] = synthesize(problems[i], opt);
    }
  };
  const std::size_t n_threads = static_cast<std::size_t>(std::max(1, threads));
  if (n_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    for (auto& th : pool) th.join();
  }

  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto& sp = out.points[i];
    if (sp.skipped) {
      sp.status = "skipped";
      continue;
    }
    const auto& r = results[i];
    sp.feasible = r.feasible;
    sp.status = r.feasible ? "feasible" : (r.status == SdpStatus::kOptimal ? r.message : to_string(r.status));
    sp.p_norm = r.p_norm;
    sp.objective = r.objective;
    sp.max_residual = r.max_residual;
    if (!r.feasible) continue;
    bool better = !out.found;
    if (out.found) {
      const double pb = out.best.p_norm;
      if (r.p_norm < pb * (1 - 1e-9)) {
        better = true;
      } else if (r.p_norm <= pb * (1 + 1e-9) && r.objective < out.best.objective) {
        better = true;
      }
    }
    if (better) {
      out.found = true;
      out.best = r;
      out.best_index = i;
      out.best_so_far.push_back(r.p_norm);
    }
  }
  return out;
}

}  // namespace nmg
