#include <gtest/gtest.h>

#include <map>
#include <random>

#include "fixtures.hpp"
#include "nmg/config.hpp"
#include "nmg/sdp.hpp"
#include "nmg/synthesis.hpp"

using namespace nmg;

// ------------------------------------------------------------------- solver

TEST(Sdp, TwoByTwoAnalyticOptimum) {
  // minimize t s.t. [[t, 1], [1, t]] >= 0, written as -F <= 0.
  LmiProblem p;
  p.n_vars = 1;
  p.objective = VectorXd::Ones(1);
  LmiBlock b("toy", 2, 1);
  b.add_constant(0, 1, -1.0);
  b.add(0, 0, 0, -1.0);
  b.add(0, 1, 1, -1.0);
  p.blocks.push_back(b);
  const auto r = solve_sdp(p);
  ASSERT_EQ(r.status, SdpStatus::kOptimal) << r.message;
  EXPECT_NEAR(r.v(0), 1.0, 1e-6);
  EXPECT_NEAR(r.objective, 1.0, 1e-6);
}

TEST(Sdp, TraceAbovePsdPart) {
  MatrixXd m(4, 4);
  m << 2, -1, 0.5, 0, -1, -3, 0.2, 1, 0.5, 0.2, 0.5, -2, 0, 1, -2, -1;
  // Y symmetric, 10 variables; minimize trace(Y) s.t. M - Y <= 0 and -Y <= 0.
  LmiProblem p;
  p.n_vars = 10;
  p.objective = VectorXd::Zero(10);
  LmiBlock b("cone", 4, 10);
  b.add_constant_block(0, 0, m);
  int k = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = r; c < 4; ++c, ++k) {
      b.add(k, r, c, -1.0);
      if (r == c) p.objective(k) = 1.0;
    }
  LmiBlock psd("psd", 4, 10);
  k = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = r; c < 4; ++c, ++k) psd.add(k, r, c, -1.0);
  p.blocks = {b, psd};
  const auto res = solve_sdp(p);
  ASSERT_EQ(res.status, SdpStatus::kOptimal) << res.message;
  // numpy: sum(clip(eigvalsh(M), 0))
  EXPECT_NEAR(res.objective, 4.102849098484912, 1e-6);
  EXPECT_LE(res.block_max_eig[0], 1e-7);
}

TEST(Sdp, DetectsInfeasibility) {
  // t <= -1 and t >= 1
  LmiProblem p;
  p.n_vars = 1;
  p.objective = VectorXd::Ones(1);
  LmiBlock a("upper", 1, 1), b("lower", 1, 1);
  a.add_constant(0, 0, 1.0);
  a.add(0, 0, 0, 1.0);
  b.add_constant(0, 0, 1.0);
  b.add(0, 0, 0, -1.0);
  p.blocks = {a, b};
  EXPECT_EQ(solve_sdp(p).status, SdpStatus::kInfeasible);
}

TEST(Sdp, RejectsMalformedProblem) {
  LmiProblem p;
  p.n_vars = 2;
  p.objective = VectorXd::Ones(1);
  p.blocks.emplace_back("b", 1, 2);
  EXPECT_THROW(solve_sdp(p), std::invalid_argument);
}

TEST(LmiBlock, EvaluateIsSymmetric) {
  LmiBlock b("b", 3, 2);
  b.add_constant(0, 2, 1.5);
  b.add(0, 1, 0, 2.0);
  b.add(1, 2, 2, -1.0);
  VectorXd v(2);
  v << 0.5, 3.0;
  const MatrixXd f = b.evaluate(v);
  EXPECT_TRUE(f.isApprox(f.transpose(), 0.0));
  EXPECT_DOUBLE_EQ(f(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(f(2, 0), 1.5);
  EXPECT_DOUBLE_EQ(f(2, 2), -3.0);
}

TEST(LmiBlock, ConstantBlockOnDiagonalIsNotDoubled) {
  MatrixXd m(2, 2);
  m << 1, 2, 2, 3;
  LmiBlock b("b", 3, 0);
  b.add_constant_block(1, 1, m);
  b.add_constant_block(0, 1, MatrixXd::Constant(1, 2, 5.0));
  MatrixXd want(3, 3);
  want << 0, 5, 5, 5, 1, 2, 5, 2, 3;
  EXPECT_TRUE(b.evaluate(VectorXd()).isApprox(want, 0.0));
}

// ---------------------------------------------------------------- synthesis

namespace {

SystemMatrices single_der_system() {
  return aggregate(std::vector<DerParams>(1), CouplingSpec::from_links(1, {}, 1.0, 1.0));
}

SystemMatrices nmg5_system(bool identical) {
  auto ders = test::table1_ders();
  if (identical) ders.assign(5, ders.front());
  auto c = CouplingSpec::from_links(5, test::ring5(), 0.1, 0.05);
  c.q_rating_fallback = true;
  return aggregate(ders, c);
}

SynthesisProblem tuned(SystemMatrices sys) {
  SynthesisProblem p;
  p.sys = std::move(sys);
  p.kappa_y = 0.1;
  p.tau = p.tau_v = 0.1;
  return p;
}

}  // namespace

TEST(Synthesis, VerifyMatchesDenseEvaluation) {
  SynthesisProblem p;
  p.sys = single_der_system();
  p.kappa_y = 0.5;
  p.tau_v = 0.3;
  p.tau = 0.2;
  p.tau_h = 1.5;
  p.tau_g = 2.0;
  const auto res = verify(p, MatrixXd::Identity(4, 4), MatrixXd::Zero(2, 4), 4.0, 9.0, 1.0);
  // numpy.linalg.eigvalsh of the padded 22 x 22 block
  EXPECT_NEAR(res.at("main"), 6.547026931618799, 1e-10);
}

TEST(Synthesis, AssembledLmiAgreesWithVerify) {
  auto p = tuned(nmg5_system(false));
  const auto prob = assemble_lmi(p);
  const auto vars = SynthesisVariables::make(5, true);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  VectorXd v(prob.n_vars);
  for (auto& x : v) x = g(rng);
  MatrixXd y = vars.y_of(v);
  const MatrixXd l = vars.l_of(v);
  const auto dense = verify(p, y, l, v(vars.gamma_alpha), v(vars.gamma_beta), v(vars.kappa_l));
  // Per-DER blocks are compared against the aggregated value by family.
  std::map<std::string, double> family;
  for (const auto& b : prob.blocks) {
    std::string key = b.name();
    for (const char* f : {"y_pd", "y_cap", "gain_bound"})
      if (key.rfind(f, 0) == 0) key = f;
    const double lam = Eigen::SelfAdjointEigenSolver<MatrixXd>(b.evaluate(v)).eigenvalues().maxCoeff();
    auto [it, fresh] = family.emplace(key, lam);
    if (!fresh) it->second = std::max(it->second, lam);
  }
  ASSERT_EQ(family.size(), dense.size());
  for (const auto& [key, lam] : family)
    EXPECT_NEAR(lam, dense.at(key), 1e-9 * std::max(1.0, std::abs(lam))) << key;
}

TEST(Synthesis, AlphaBelowBoundViolatesConstraint) {
  SynthesisProblem p;
  p.sys = single_der_system();
  p.alpha_bar = 0.5;
  const auto res = verify(p, MatrixXd::Identity(4, 4), MatrixXd::Zero(2, 4), 3.9, 4.1, 1.0);
  EXPECT_GT(res.at("alpha_bound"), 0.0);
  EXPECT_LT(res.at("beta_bound"), 0.0);
}

TEST(Synthesis, SingleDerIsFeasible) {
  // (A_1, B_1) controllable: numpy matrix_rank of [B AB A^2B A^3B] is 4.
  const auto r = synthesize(tuned(single_der_system()));
  ASSERT_TRUE(r.feasible) << r.message;
  EXPECT_LE(r.max_residual, 1e-7);
  EXPECT_GT(r.alpha, 0.0);
  EXPECT_GT(r.beta, 0.0);
}

TEST(Synthesis, InvalidMultiplierRejected) {
  auto p = tuned(single_der_system());
  p.tau_h = 0.0;
  EXPECT_THROW(assemble_lmi(p), std::invalid_argument);
}

TEST(RecoverGain, RoundTrip) {
  const auto k0 = make_gain(-0.4, -1.3, -0.2, -0.9);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<Matrix4d> yb;
  for (int i = 0; i < 3; ++i) {
    Eigen::Matrix2d f, v;
    f << g(rng), g(rng), g(rng), g(rng);
    v << g(rng), g(rng), g(rng), g(rng);
    Matrix4d y = Matrix4d::Zero();
    y.topLeftCorner<2, 2>() = f * f.transpose() + Eigen::Matrix2d::Identity();
    y.bottomRightCorner<2, 2>() = v * v.transpose() + Eigen::Matrix2d::Identity();
    yb.push_back(y);
  }
  const MatrixXd y = block_diagonal(yb);
  const MatrixXd kd = k0.aggregate(3);
  const MatrixXd l = kd * y;
  std::vector<std::string> warnings;
  const MatrixXd k = recover_gain(l, y, &warnings);
  EXPECT_LT((k - kd).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_TRUE(warnings.empty());
  for (int i = 0; i < 3; ++i) {
    const auto b = gain_block(k, i);
    EXPECT_NEAR(b.k_Omega, -1.3, 1e-9);
  }
}

TEST(RecoverGain, RejectsSingularY) {
  MatrixXd y = MatrixXd::Identity(4, 4);
  y(3, 3) = 1e-14;
  EXPECT_THROW(recover_gain(MatrixXd::Zero(2, 4), y), std::runtime_error);
}

TEST(RecoverGain, FlagsNonNegativeGains) {
  const MatrixXd y = MatrixXd::Identity(4, 4);
  MatrixXd l = GainMatrix{-1, 0.5, -1, -1}.aggregate(1);
  std::vector<std::string> warnings;
  recover_gain(l, y, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Synthesis, IdenticalDersGiveIdenticalBlocks) {
  auto p = tuned(nmg5_system(true));
  p.shared_blocks = false;
  const auto r = synthesize(p);
  ASSERT_TRUE(r.feasible) << r.message;
  EXPECT_LE(r.max_residual, 1e-7);
  for (int i = 1; i < 5; ++i) {
    const auto& a = r.k_blocks[0];
    const auto& b = r.k_blocks[static_cast<std::size_t>(i)];
    const double s = std::max({1.0, std::abs(a.k_omega), std::abs(a.k_Omega), std::abs(a.k_v), std::abs(a.k_e)});
    EXPECT_NEAR(a.k_omega, b.k_omega, 1e-8 * s);
    EXPECT_NEAR(a.k_Omega, b.k_Omega, 1e-8 * s);
    EXPECT_NEAR(a.k_v, b.k_v, 1e-8 * s);
    EXPECT_NEAR(a.k_e, b.k_e, 1e-8 * s);
  }
}

TEST(Synthesis, FiveDerStructure) {
  const auto r = synthesize(tuned(nmg5_system(false)));
  ASSERT_TRUE(r.feasible) << r.message;
  EXPECT_LE(r.max_residual, 1e-7);
  for (int rr = 0; rr < 10; ++rr)
    for (int c = 0; c < 20; ++c) {
      const int der = rr / 2, row = rr % 2;
      const bool in_pattern = c / 4 == der && (row == 0 ? (c % 4 < 2) : (c % 4 >= 2));
      if (!in_pattern) EXPECT_EQ(r.k_d(rr, c), 0.0) << rr << "," << c;
    }
  EXPECT_GT(r.alpha, 0.0);
  EXPECT_LE(r.alpha, 1.0);
  EXPECT_GT(r.beta, 0.0);
  EXPECT_LE(r.beta, 1.0);
  EXPECT_TRUE(r.p_lyap.isApprox(r.p_lyap.transpose()));
  EXPECT_GT(min_eigenvalue(r.p_lyap), 0.0);
}

TEST(Search, SingletonGridMatchesDirectSolve) {
  auto p = tuned(nmg5_system(false));
  SearchGrid g;
  g.kappa_y = {0.1};
  g.tau_v = {0.1};
  const auto s = search_hyperparameters(p, g);
  const auto r = synthesize(p);
  ASSERT_TRUE(s.found);
  EXPECT_EQ(s.points.size(), 1u);
  EXPECT_DOUBLE_EQ(s.best.p_norm, r.p_norm);
  EXPECT_DOUBLE_EQ(s.best.objective, r.objective);
}

TEST(Search, KeepsTheFeasiblePoint) {
  auto p = tuned(nmg5_system(false));
  SearchGrid g;
  g.kappa_y = {0.01, 0.1};
  g.tau_v = {0.1};
  const auto s = search_hyperparameters(p, g);
  ASSERT_EQ(s.points.size(), 2u);
  EXPECT_FALSE(s.points[0].feasible);
  ASSERT_TRUE(s.found);
  EXPECT_EQ(s.best_index, 1u);
  EXPECT_DOUBLE_EQ(s.best.kappa_y, 0.1);
}

TEST(Search, BestNormNonIncreasing) {
  auto p = tuned(nmg5_system(false));
  SearchGrid g;
  g.kappa_y = {0.01, 0.1, 1.0, 10.0, 100.0};
  g.tau_v = {0.1, 1.0};
  const auto s = search_hyperparameters(p, g, 2);
  ASSERT_TRUE(s.found);
  double prev = std::numeric_limits<double>::infinity();
  for (double v : s.best_so_far) {
    EXPECT_LE(v, prev);
    prev = v;
  }
  double min_feasible = std::numeric_limits<double>::infinity();
  for (const auto& pt : s.points)
    if (pt.feasible) min_feasible = std::min(min_feasible, pt.p_norm);
  EXPECT_DOUBLE_EQ(s.best.p_norm, min_feasible);
}

TEST(Search, SkipsTauAboveDecayRate) {
  auto p = tuned(single_der_system());
  SearchGrid g;
  g.kappa_y = {0.1};
  g.tie_tau_to_tau_v = false;
  g.tau = {2.0};
  g.tau_v = {1.0};
  const auto s = search_hyperparameters(p, g);
  EXPECT_FALSE(s.found);
  EXPECT_TRUE(s.points[0].skipped);
}
