#pragma once

// Small dense semidefinite programming solver.
//
// Solves   minimize c^T v   subject to   F_b(v) = F0_b + sum_i v_i F_ib <= 0
// for a list of symmetric blocks b, using an infeasible-start primal-dual
// path-following method with Nesterov-Todd scaling and a Mehrotra
// predictor-corrector step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "nmg/linalg.hpp"

namespace nmg {

struct SymEntry {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

/// One symmetric matrix-valued affine constraint F(v) <= 0.
class LmiBlock {
 public:
  LmiBlock() = default;
  LmiBlock(std::string name, int dim, int n_vars)
      : name_(std::move(name)), dim_(dim), constant_(MatrixXd::Zero(dim, dim)),
        coeffs_(static_cast<std::size_t>(n_vars)) {
    if (dim <= 0 || n_vars < 0) throw std::invalid_argument("LmiBlock: bad dimensions");
  }

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }
  int n_vars() const { return static_cast<int>(coeffs_.size()); }
  const MatrixXd& constant() const { return constant_; }
  const std::vector<SymEntry>& coeffs(int var) const { return coeffs_[static_cast<std::size_t>(var)]; }

  // Adds `value` at (r, c) and its mirror.
  void add_constant(int r, int c, double value) {
    check(r, c);
    constant_(r, c) += value;
    if (r != c) constant_(c, r) += value;
  }

  // Places m at (r0, c0) and its transpose at (c0, r0). Where the two
  // footprints overlap only the upper triangle of m is read.
  void add_constant_block(int r0, int c0, const MatrixXd& m) {
    auto inside = [&](Eigen::Index r, Eigen::Index c) {
      return r >= r0 && r < r0 + m.rows() && c >= c0 && c < c0 + m.cols();
    };
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const Eigen::Index r = r0 + i, c = c0 + j;
        if (m(i, j) == 0.0 || (r > c && inside(c, r))) continue;
        add_constant(static_cast<int>(r), static_cast<int>(c), m(i, j));
      }
  }

  // Adds `value * v_var` at (r, c) and its mirror.
  void add(int var, int r, int c, double value) {
    check(r, c);
    if (var < 0 || var >= n_vars()) throw std::out_of_range("LmiBlock: variable index");
    if (value == 0.0) return;
    if (r > c) std::swap(r, c);
    auto& list = coeffs_[static_cast<std::size_t>(var)];
    for (auto& e : list) {
      if (e.row == r && e.col == c) {
        e.value += value;
        return;
      }
    }
    list.push_back({r, c, value});
  }

  MatrixXd evaluate(const VectorXd& v) const {
    if (v.size() != n_vars()) throw std::invalid_argument("LmiBlock: variable vector size");
    MatrixXd f = constant_;
    for (int i = 0; i < n_vars(); ++i) {
      if (v(i) == 0.0) continue;
      for (const auto& e : coeffs(i)) {
        f(e.row, e.col) += v(i) * e.value;
        if (e.row != e.col) f(e.col, e.row) += v(i) * e.value;
      }
    }
    return f;
  }

  // Congruence T F T with diagonal T.
  void scale(const VectorXd& t) {
    for (int r = 0; r < dim_; ++r)
      for (int c = 0; c < dim_; ++c) constant_(r, c) *= t(r) * t(c);
    for (auto& list : coeffs_)
      for (auto& e : list) e.value *= t(e.row) * t(e.col);
  }

 private:
  void check(int r, int c) const {
    if (r < 0 || c < 0 || r >= dim_ || c >= dim_) throw std::out_of_range("LmiBlock: entry index");
  }

  std::string name_;
  int dim_ = 0;
  MatrixXd constant_;
  std::vector<std::vector<SymEntry>> coeffs_;
};

struct LmiProblem {
  int n_vars = 0;
  VectorXd objective;
  std::vector<LmiBlock> blocks;
};

enum class SdpStatus { kOptimal, kInfeasible, kMaxIterations, kNumericalFailure };

inline std::string to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::kOptimal: return "optimal";
    case SdpStatus::kInfeasible: return "infeasible";
    case SdpStatus::kMaxIterations: return "max_iterations";
    case SdpStatus::kNumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct SdpOptions {
  int max_iterations = 100;
  double gap_tol = 1e-7;
  double feas_tol = 1e-8;
  double infeas_tol = 1e-8;
  double step_fraction = 0.95;
  bool equilibrate = true;
  // Tightens every block to F(v) <= -margin I in the equilibrated scale.
  double margin = 0.0;
};

struct SdpResult {
  SdpStatus status = SdpStatus::kNumericalFailure;
  VectorXd v;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double rel_gap = std::numeric_limits<double>::infinity();
  double primal_infeas = std::numeric_limits<double>::infinity();
  double dual_infeas = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::vector<double> block_max_eig;  // lambda_max(F_b(v)) on the original data
  std::string message;
};

namespace detail {

struct SdpBlockState {
  MatrixXd x, z;
  MatrixXd g, g_inv;  // NT scaling factor, W = G G^T
  VectorXd d;         // scaled point G^-1 X G^-T = G^T Z G = diag(d)
  MatrixXd w;
  MatrixXd chol_x, chol_z;
};

// <A_i, X> for a symmetric X and upper-triangular entry list.
inline double inner(const std::vector<SymEntry>& a, const MatrixXd& x) {
  double s = 0.0;
  for (const auto& e : a) s += e.value * (e.row == e.col ? x(e.row, e.col) : 2.0 * x(e.row, e.col));
  return s;
}

inline bool cholesky_lower(const MatrixXd& m, MatrixXd& l) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return false;
  l = llt.matrixL();
  return true;
}

// Largest t in (0, inf] with L L^T + t D >= 0, given the Cholesky factor L.
inline double max_step(const MatrixXd& chol, const MatrixXd& dir) {
  const MatrixXd tmp = chol.triangularView<Eigen::Lower>().solve(dir);
  const MatrixXd s = chol.triangularView<Eigen::Lower>().solve(tmp.transpose());
  const double lam = min_eigenvalue(s);
  return lam < 0 ? -1.0 / lam : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Primal-dual interior-point solver for the LMI problem.
///
/// Internally the problem is the dual of the standard form
///   max b^T y  s.t.  Z = C - sum y_i A_i >= 0,
/// with C = -F0, A_i = F_i, b = -c and y = v.
inline SdpResult solve_sdp(LmiProblem problem, const SdpOptions& opt = {}) {
  const int m = problem.n_vars;
  if (m <= 0) throw std::invalid_argument("solve_sdp: no variables");
  if (problem.objective.size() != m) throw std::invalid_argument("solve_sdp: objective size");
  if (problem.blocks.empty()) throw std::invalid_argument("solve_sdp: no constraints");
  const std::vector<LmiBlock> original = problem.blocks;
  for (const auto& b : problem.blocks) {
    if (b.n_vars() != m) throw std::invalid_argument("solve_sdp: block variable count mismatch");
  }

  if (opt.equilibrate) {
    for (auto& blk : problem.blocks) {
      VectorXd t = VectorXd::Ones(blk.dim());
      for (int r = 0; r < blk.dim(); ++r) {
        double mag = std::abs(blk.constant()(r, r));
        for (int i = 0; i < m; ++i)
          for (const auto& e : blk.coeffs(i))
            if (e.row == r && e.col == r) mag = std::max(mag, std::abs(e.value));
        if (mag > 0) t(r) = 1.0 / std::sqrt(mag);
      }
      blk.scale(t);
    }
  }
  if (opt.margin > 0) {
    for (auto& blk : problem.blocks)
      for (int r = 0; r < blk.dim(); ++r) blk.add_constant(r, r, opt.margin);
  }

  const auto& blocks = problem.blocks;
  const std::size_t nb = blocks.size();
  const VectorXd b = -problem.objective;
  std::vector<MatrixXd> c(nb);
  int n_total = 0;
  double c_norm = 0.0, a_norm_max = 0.0;
  VectorXd a_norm = VectorXd::Zero(m);
  for (std::size_t k = 0; k < nb; ++k) {
    c[k] = -blocks[k].constant();
    n_total += blocks[k].dim();
    c_norm += c[k].squaredNorm();
    for (int i = 0; i < m; ++i)
      for (const auto& e : blocks[k].coeffs(i)) a_norm(i) += (e.row == e.col ? 1.0 : 2.0) * e.value * e.value;
  }
  c_norm = std::sqrt(c_norm);
  a_norm = a_norm.cwiseSqrt();
  a_norm_max = a_norm.maxCoeff();
  const double b_norm = b.norm();

  // Expanded (both triangles) entry lists for the Schur complement.
  std::vector<std::vector<std::vector<SymEntry>>> full(nb);
  for (std::size_t k = 0; k < nb; ++k) {
    full[k].resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      for (const auto& e : blocks[k].coeffs(i)) {
        full[k][static_cast<std::size_t>(i)].push_back(e);
        if (e.row != e.col) full[k][static_cast<std::size_t>(i)].push_back({e.col, e.row, e.value});
      }
    }
  }

  auto a_op = [&](const std::vector<MatrixXd>& x) {
    VectorXd r = VectorXd::Zero(m);
    for (std::size_t k = 0; k < nb; ++k)
      for (int i = 0; i < m; ++i) r(i) += detail::inner(blocks[k].coeffs(i), x[k]);
    return r;
  };
  auto at_op = [&](const VectorXd& y, std::size_t k) {
    MatrixXd s = MatrixXd::Zero(blocks[k].dim(), blocks[k].dim());
    for (int i = 0; i < m; ++i) {
      if (y(i) == 0.0) continue;
      for (const auto& e : full[k][static_cast<std::size_t>(i)]) s(e.row, e.col) += y(i) * e.value;
    }
    return s;
  };

  // Starting point.
  double xi = std::max(10.0, std::sqrt(static_cast<double>(n_total)));
  for (int i = 0; i < m; ++i) {
    xi = std::max(xi, std::sqrt(static_cast<double>(n_total)) * (1.0 + std::abs(b(i))) / (1.0 + a_norm(i)));
  }
  const double eta = std::max({10.0, std::sqrt(static_cast<double>(n_total)), a_norm_max, c_norm});
  std::vector<detail::SdpBlockState> st(nb);
  for (std::size_t k = 0; k < nb; ++k) {
    const int n = blocks[k].dim();
    st[k].x = xi * MatrixXd::Identity(n, n);
    st[k].z = eta * MatrixXd::Identity(n, n);
  }
  VectorXd y = VectorXd::Zero(m);

  SdpResult res;
  auto finish = [&](SdpStatus s, std::string msg) {
    res.status = s;
    res.message = std::move(msg);
    res.v = y;
    res.objective = problem.objective.dot(y);
    res.block_max_eig.clear();
    for (const auto& blk : original) res.block_max_eig.push_back(max_eigenvalue(blk.evaluate(y)));
    return res;
  };

  for (int iter = 0; iter <= opt.max_iterations; ++iter) {
    res.iterations = iter;
    std::vector<MatrixXd> r_d(nb);
    double pobj = 0.0, gap = 0.0, rd_norm = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      r_d[k] = c[k] - st[k].z - at_op(y, k);
      rd_norm += r_d[k].squaredNorm();
      pobj += (c[k].cwiseProduct(st[k].x)).sum();
      gap += (st[k].x.cwiseProduct(st[k].z)).sum();
    }
    rd_norm = std::sqrt(rd_norm);
    std::vector<MatrixXd> xs(nb);
    for (std::size_t k = 0; k < nb; ++k) xs[k] = st[k].x;
    const VectorXd ax = a_op(xs);
    const VectorXd r_p = b - ax;
    const double dobj = b.dot(y);
    const double mu = gap / n_total;

    res.rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    res.primal_infeas = r_p.norm() / (1.0 + b_norm);
    res.dual_infeas = rd_norm / (1.0 + c_norm);

    if (res.rel_gap < opt.gap_tol && res.primal_infeas < opt.feas_tol && res.dual_infeas < opt.feas_tol) {
      return finish(SdpStatus::kOptimal, "converged");
    }
    if (pobj < 0 && ax.norm() / (-pobj) < opt.infeas_tol) {
      return finish(SdpStatus::kInfeasible, "certificate: X >= 0, A(X) ~ 0, <C, X> < 0");
    }
    if (iter == opt.max_iterations) break;

    // NT scaling per block.
    bool ok = true;
    for (std::size_t k = 0; k < nb && ok; ++k) {
      auto& s = st[k];
      ok = detail::cholesky_lower(s.x, s.chol_x) && detail::cholesky_lower(s.z, s.chol_z);
      if (!ok) break;
      const MatrixXd rl = s.chol_z.transpose() * s.chol_x;
      Eigen::BDCSVD<MatrixXd> svd(rl, Eigen::ComputeFullU | Eigen::ComputeFullV);
      s.d = svd.singularValues();
      if (s.d.minCoeff() <= 0) {
        ok = false;
        break;
      }
      const VectorXd dm = s.d.cwiseSqrt().cwiseInverse();
      s.g = s.chol_x * svd.matrixV() * dm.asDiagonal();
      // G^-1 = D^{1/2} V^T L^-1
      const MatrixXd linv = s.chol_x.triangularView<Eigen::Lower>().solve(
          MatrixXd::Identity(blocks[k].dim(), blocks[k].dim()));
      s.g_inv = s.d.cwiseSqrt().asDiagonal() * svd.matrixV().transpose() * linv;
      s.w = s.g * s.g.transpose();
    }
    if (!ok) return finish(SdpStatus::kNumericalFailure, "factorization failed");

    // Schur complement M_ij = sum_k <A_i, W A_j W>.
    MatrixXd schur = MatrixXd::Zero(m, m);
    for (std::size_t k = 0; k < nb; ++k) {
      const MatrixXd& w = st[k].w;
      for (int i = 0; i < m; ++i) {
        const auto& fi = full[k][static_cast<std::size_t>(i)];
        if (fi.empty()) continue;
        for (int j = i; j < m; ++j) {
          const auto& fj = full[k][static_cast<std::size_t>(j)];
          double s = 0.0;
          for (const auto& p : fi)
            for (const auto& q : fj) s += p.value * q.value * w(p.col, q.row) * w(q.col, p.row);
          schur(i, j) += s;
        }
      }
    }
    schur = schur.selfadjointView<Eigen::Upper>();
    Eigen::LDLT<MatrixXd> schur_fact(schur);
    if (schur_fact.info() != Eigen::Success) return finish(SdpStatus::kNumericalFailure, "Schur factorization failed");

    std::vector<MatrixXd> wrw(nb);
    for (std::size_t k = 0; k < nb; ++k) wrw[k] = st[k].w * r_d[k] * st[k].w;
    const VectorXd a_wrw = a_op(wrw);

    auto direction = [&](const std::vector<MatrixXd>& r_c, VectorXd& dy, std::vector<MatrixXd>& dx,
                         std::vector<MatrixXd>& dz) {
      const VectorXd rhs = r_p - a_op(r_c) + a_wrw;
      dy = schur_fact.solve(rhs);
      dx.resize(nb);
      dz.resize(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        dz[k] = r_d[k] - at_op(dy, k);
        dx[k] = symmetrize(r_c[k] - st[k].w * dz[k] * st[k].w);
        dz[k] = symmetrize(dz[k]);
      }
    };
    auto steps = [&](const std::vector<MatrixXd>& dx, const std::vector<MatrixXd>& dz) {
      double ap = std::numeric_limits<double>::infinity(), ad = ap;
      for (std::size_t k = 0; k < nb; ++k) {
        ap = std::min(ap, detail::max_step(st[k].chol_x, dx[k]));
        ad = std::min(ad, detail::max_step(st[k].chol_z, dz[k]));
      }
      return std::pair<double, double>{ap, ad};
    };

    // Predictor.
    std::vector<MatrixXd> r_c(nb);
    for (std::size_t k = 0; k < nb; ++k) r_c[k] = -st[k].x;
    VectorXd dy;
    std::vector<MatrixXd> dx, dz;
    direction(r_c, dy, dx, dz);
    auto [ap_max, ad_max] = steps(dx, dz);
    const double ap_aff = std::min(1.0, ap_max), ad_aff = std::min(1.0, ad_max);
    double gap_aff = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      gap_aff += ((st[k].x + ap_aff * dx[k]).cwiseProduct(st[k].z + ad_aff * dz[k])).sum();
    }
    const double ratio = std::clamp(gap_aff / gap, 0.0, 1.0);
    const double sigma = std::pow(ratio, 3);

    // Corrector.
    for (std::size_t k = 0; k < nb; ++k) {
      const auto& s = st[k];
      const MatrixXd dxh = s.g_inv * dx[k] * s.g_inv.transpose();
      const MatrixXd dzh = s.g.transpose() * dz[k] * s.g;
      const MatrixXd so = 0.5 * (dxh * dzh + dzh * dxh);
      const int n = blocks[k].dim();
      MatrixXd e(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          double rhs = -so(i, j);
          if (i == j) rhs += sigma * mu - s.d(i) * s.d(i);
          e(i, j) = 2.0 * rhs / (s.d(i) + s.d(j));
        }
      }
      r_c[k] = s.g * e * s.g.transpose();
    }
    direction(r_c, dy, dx, dz);
    std::tie(ap_max, ad_max) = steps(dx, dz);
    const double ap = std::min(1.0, opt.step_fraction * ap_max);
    const double ad = std::min(1.0, opt.step_fraction * ad_max);
    if (ap < 1e-12 && ad < 1e-12) return finish(SdpStatus::kNumericalFailure, "step length collapsed");
    for (std::size_t k = 0; k < nb; ++k) {
      st[k].x = symmetrize(st[k].x + ap * dx[k]);
      st[k].z = symmetrize(st[k].z + ad * dz[k]);
    }
    y += ad * dy;
  }
  return finish(SdpStatus::kMaxIterations, "iteration limit reached");
}

}  // namespace nmg
