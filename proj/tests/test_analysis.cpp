#include <gtest/gtest.h>

#include <numbers>

#include "fixtures.hpp"
#include "nmg/analysis.hpp"
#include "nmg/config.hpp"
#include "nmg/pipeline.hpp"
#include "nmg/synthesis.hpp"

using namespace nmg;

namespace {

std::vector<DerParams> path3_ders() {
  std::vector<DerParams> d(3);
  for (auto& p : d) p.q_rating = 5000.0;
  d[2].m = 5e-5;
  return d;
}

CouplingSpec path3_coupling() {
  auto c = CouplingSpec::from_links(3, {{0, 1}, {1, 2}}, 0.1, 0.05);
  c.q_rating_fallback = true;
  return c;
}

TrajectoryLog constant_log(const std::vector<DerParams>& ders, double eps, double t_end) {
  TrajectoryLog log;
  log.n_ders = static_cast<int>(ders.size());
  for (int k = 0; k <= 100; ++k) {
    log.times.push_back(t_end * k / 100.0);
    std::vector<DerState> s(ders.size());
    for (std::size_t i = 0; i < ders.size(); ++i) {
      s[i].d_omega = eps * ders[i].omega_star;
      s[i].d_v = eps * ders[i].v_star;
    }
    log.states.push_back(s);
    log.dist.emplace_back(ders.size());
    log.inputs.emplace_back(ders.size());
    log.clamped.push_back(0);
  }
  return log;
}

}  // namespace

TEST(Equilibrium, ConstantDisturbanceWithConsensus) {
  const auto sys = aggregate(path3_ders(), path3_coupling());
  VectorXd d(6);
  d << 1000, 0, 500, 0, 2000, 0;
  const VectorXd x = linear_equilibrium(sys, MatrixXd::Zero(6, 12), d, VectorXd::Zero(12));
  // numpy.linalg.solve(A_cl, -E d)
  const double dw[3] = {-0.00384615384615387, 0.00769230769230769, -0.00384615384615384};
  const double om[3] = {0.09615384615384613, 0.05769230769230769, 0.09615384615384616};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(x(4 * i + kDOmega), dw[i], 1e-12);
    EXPECT_NEAR(x(4 * i + kOmega), om[i], 1e-12);
  }
  EXPECT_NEAR(x(kDOmega) + x(4 + kDOmega) + x(8 + kDOmega), 0.0, 1e-12);
}

TEST(Equilibrium, UniformWeightedLoadRestoresFrequency) {
  const auto sys = aggregate(path3_ders(), path3_coupling());
  VectorXd d(6);
  d << 1000, 0, 1000, 0, 2000, 0;
  const VectorXd x = linear_equilibrium(sys, MatrixXd::Zero(6, 12), d, VectorXd::Zero(12));
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(x(4 * i + kDOmega), 0.0, 1e-12);
    EXPECT_NEAR(x(4 * i + kOmega), 0.1, 1e-12);
  }
}

TEST(Connective, DecoupledCornerMatchesPerDerSpectrum) {
  const auto ders = test::table1_ders();
  auto c = CouplingSpec::from_links(5, test::ring5(), 0.1, 0.05);
  c.q_rating_fallback = true;
  const auto k = make_gain(-0.5, -0.2, -0.3, -0.1);
  const auto rep = connective_stability_check(ders, c, k, 0.1, 0.05);
  ASSERT_TRUE(rep.exhaustive);
  ASSERT_EQ(rep.corners.size(), 32u);
  const auto& empty = rep.corners.front();
  ASSERT_TRUE(empty.active.empty());
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& p : ders) {
    const auto m = build_der_matrices(p);
    const Matrix4d a = m.a + m.b * k.block();
    Eigen::EigenSolver<Matrix4d> es(a);
    worst = std::max(worst, es.eigenvalues().real().maxCoeff());
  }
  EXPECT_NEAR(empty.worst_real, worst, 1e-9);
  EXPECT_EQ(empty.components, 5);
}

TEST(Connective, TwoDerBaseSchemeCorners) {
  std::vector<DerParams> ders(2);
  for (auto& p : ders) p.q_rating = 5000.0;
  auto c = CouplingSpec::from_links(2, {{0, 1}}, 0.1, 0.05);
  c.q_rating_fallback = true;
  const auto rep = connective_stability_check(ders, c, GainMatrix{}, 0.1, 0.05);
  ASSERT_EQ(rep.corners.size(), 2u);
  // numpy.linalg.eigvals of the 8 x 8 closed loop at each corner
  for (const auto& corner : rep.corners) {
    EXPECT_NEAR(corner.worst_real, -1.0340345679948864, 1e-9);
    EXPECT_EQ(corner.zero_modes, 0);
    EXPECT_EQ(corner.predicted_zero_modes, 0);
  }
  EXPECT_TRUE(rep.stable);
}

TEST(Connective, DetachedIntegratorsCountedPerComponent) {
  std::vector<DerParams> ders(3);
  for (auto& p : ders) p.q_rating = 5000.0;
  auto c = CouplingSpec::from_links(3, {{0, 1}, {1, 2}}, 0.1, 0.05);
  c.q_rating_fallback = true;
  const auto k = make_gain(-0.5, -1.0, -0.5, -0.3);
  const auto rep = connective_stability_check(ders, c, k, 0.1, 0.05);
  for (const auto& corner : rep.corners) EXPECT_EQ(corner.zero_modes, corner.components) << corner.active.size();
  EXPECT_TRUE(rep.zero_modes_match);
}

TEST(Connective, UnstableGainDetected) {
  const auto ders = test::table1_ders();
  auto c = CouplingSpec::from_links(5, test::ring5(), 0.1, 0.05);
  c.q_rating_fallback = true;
  const auto rep = connective_stability_check(ders, c, GainMatrix{2.0, 0.0, 0.0, 0.0}, 0.1, 0.05);
  EXPECT_FALSE(rep.stable);
  EXPECT_GT(rep.worst_real, 0.0);
}

TEST(Connective, SampledWhenTooManyLinks) {
  const auto ders = test::table1_ders();
  auto c = CouplingSpec::from_links(5, test::ring5(), 0.1, 0.05);
  c.q_rating_fallback = true;
  ConnectiveOptions opt;
  opt.max_links = 3;
  opt.samples = 10;
  const auto rep = connective_stability_check(ders, c, GainMatrix{}, 0.1, 0.05, opt);
  EXPECT_FALSE(rep.exhaustive);
  EXPECT_EQ(rep.corners.size(), 10u);
}

TEST(Supply, VanishesAtEquilibrium) {
  const auto sys = aggregate(path3_ders(), path3_coupling());
  const MatrixXd p = MatrixXd::Identity(12, 12);
  const auto s = supply_rate(sys, MatrixXd::Zero(6, 12), p, 0.1, 0.05, {});
  EXPECT_EQ(supply_value(s, VectorXd::Zero(12), VectorXd::Zero(6)), 0.0);
  EXPECT_TRUE(s.dq_mat.isZero(0.0));
}

TEST(Supply, UnforcedGapIsDecayAndCouplingSlack) {
  // With d = d*, Vdot - rhs = -tau_v V + tau_h (|x|^2 - alpha^2 |Hx|^2).
  auto c = CouplingSpec::from_links(5, test::ring5(), 0.1, 0.05);
  c.q_rating_fallback = true;
  const auto sys = aggregate(test::table1_ders(), c);
  SynthesisProblem prob;
  prob.sys = sys;
  prob.kappa_y = 0.1;
  prob.tau = prob.tau_v = 0.1;
  const auto r = synthesize(prob);
  ASSERT_TRUE(r.feasible);
  const Multipliers mu{r.tau, r.tau_h, r.tau_g, r.tau_v};
  const auto s = supply_rate(sys, r.k_d, r.p_lyap, r.alpha, r.beta, mu);
  const MatrixXd a_cl = sys.a_d + sys.delta_a + sys.b_d * r.k_d;
  VectorXd x = VectorXd::Zero(20);
  x(kOmega) = 1.0;
  x(4 + kDV) = -0.5;
  const double h = 1e-4;
  for (int k = 0; k < 2000; ++k) {
    const VectorXd f = a_cl * x;
    const double vdot = 2.0 * x.dot(r.p_lyap * f);
    const double rhs = supply_value(s, x, VectorXd::Zero(10));
    const double gap = -r.tau_v * x.dot(r.p_lyap * x) +
                       r.tau_h * (x.squaredNorm() - r.alpha * r.alpha * (sys.h_mat * x).squaredNorm());
    ASSERT_NEAR(vdot - rhs, gap, 1e-9 * std::max(1.0, std::abs(rhs)));
    x += h * f;
  }
}

TEST(Ellipsoid, ShellTrialsStayInside) {
  auto c = CouplingSpec::from_links(5, test::ring5(), 0.1, 0.05);
  c.q_rating_fallback = true;
  const auto ders = test::table1_ders();
  SynthesisProblem prob;
  prob.sys = aggregate(ders, c);
  prob.kappa_y = 0.1;
  prob.tau = prob.tau_v = 0.1;
  const auto r = synthesize(prob);
  ASSERT_TRUE(r.feasible);
  EllipsoidOptions opt;
  opt.trials = 20;
  const auto rep = ellipsoid_containment(r.p_lyap, ders, c, r.k_d, r.alpha, r.beta, opt);
  EXPECT_EQ(rep.trials, 20);
  EXPECT_LE(rep.sup_v, 1.0 + 1e-3);
  EXPECT_TRUE(rep.pass);
}

TEST(Metrics, ZeroDeviationGivesZeroLoss) {
  const auto ders = test::table1_ders();
  const auto m = loss_metrics(constant_log(ders, 0.0, 10.0), ders, {"w", 0.0, 10.0});
  EXPECT_EQ(m.loss_ro_freq, 0.0);
  EXPECT_EQ(m.loss_re_freq, 0.0);
  EXPECT_EQ(m.loss_ro_volt, 0.0);
  EXPECT_EQ(m.loss_re_volt, 0.0);
}

TEST(Metrics, ConstantRelativeDeviation) {
  const auto ders = test::table1_ders();
  const double eps = 0.02;
  const auto m = loss_metrics(constant_log(ders, eps, 10.0), ders, {"w", 2.0, 8.0});
  EXPECT_NEAR(m.loss_ro_freq, eps / (1 + eps), 1e-15);
  EXPECT_NEAR(m.loss_re_freq, eps / (1 + eps), 1e-15);
  EXPECT_NEAR(m.loss_ro_volt, eps / (1 + eps), 1e-15);
  EXPECT_NEAR(m.loss_re_volt, eps / (1 + eps), 1e-15);
}

TEST(Metrics, EmptyWindowRejected) {
  const auto ders = test::table1_ders();
  EXPECT_THROW(loss_metrics(constant_log(ders, 0.0, 10.0), ders, {"w", 20.0, 30.0}), std::invalid_argument);
}

TEST(Metrics, IdenticalLegsGiveEqualRows) {
  auto c = load_config(test::config_path("nmg5.json"));
  c.sim.horizon = 20.0;
  const auto suite = run_suite(c, GainMatrix{});
  const auto rows = metrics_table(c, suite);
  ASSERT_EQ(rows.size(), 20u);
  for (const std::string w : {"Initialization", "scenario_1", "scenario_2", "scenario_3", "Average"})
    for (const std::string sig : {"frequency", "voltage"}) {
      const auto& b = find_row(rows, w, sig, "base");
      const auto& p = find_row(rows, w, sig, "proposed");
      EXPECT_EQ(b.loss_ro, p.loss_ro);
      EXPECT_EQ(b.loss_re, p.loss_re);
    }
  double mean = 0;
  for (const std::string w : {"Initialization", "scenario_1", "scenario_2", "scenario_3"})
    mean += find_row(rows, w, "frequency", "base").loss_ro / 4;
  EXPECT_NEAR(find_row(rows, "Average", "frequency", "base").loss_ro, mean, 1e-18);
}

TEST(Sharing, SymmetricSystemHasNoResidual) {
  Scenario s;
  s.ders.resize(2);
  for (auto& p : s.ders) p.q_rating = 5000.0;
  s.coupling = CouplingSpec::from_links(2, {{0, 1}}, 0.1, 0.05);
  s.coupling.q_rating_fallback = true;
  s.grid = GridTopology::with_lines(2, {{0, 1}}, 2e4, 340);
  s.grid.loads.push_back({"mid", {{0, 1.0}, {1, 1.0}}, 0.0, 0.0, {}});
  s.events.push_back(LoadStepEvent{0.0, 0, 1000.0, 200.0});
  s.horizon = 5.0;
  const auto log = run(s);
  const auto r = sharing_residuals(log, s.ders, {"w", 0.0, 5.0});
  EXPECT_LT(r.err_p, 1e-12);
  EXPECT_LT(r.err_q, 1e-12);
}

TEST(Sharing, DenialOfServiceDuringTransientDegradesSharing) {
  auto c = load_config(test::config_path("nmg5.json"));
  auto s = build_scenario(c, -1, GainMatrix{});
  int l3 = -1;
  for (std::size_t i = 0; i < s.grid.loads.size(); ++i)
    if (s.grid.loads[i].name == "L3") l3 = static_cast<int>(i);
  ASSERT_GE(l3, 0);
  s.events.push_back(LoadStepEvent{150.0, l3, 4500.0, 600.0});
  AttackEvent dos;
  dos.t_start = 150.5;
  dos.kind = AttackKind::kDos;
  dos.target_links = {{0, 1}, {1, 2}, {4, 0}};
  s.events.push_back(dos);
  s.horizon = 300.0;
  s.dt = 2e-3;
  const auto log = run(s);
  const auto pre = sharing_residuals(log, s.ders, {"pre", 0.0, 149.0});
  const auto post = sharing_residuals(log, s.ders, {"post", 150.0, 300.0});
  EXPECT_LT(pre.err_p, 1e-3);
  EXPECT_GT(post.err_p, 10 * pre.err_p);
}
