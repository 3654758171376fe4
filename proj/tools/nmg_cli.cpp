// nmg: synthesize, simulate, analyze and report on networked microgrid
// secondary control.
//
// Exit status: 0 ok, 1 analysis verdict failure, 2 infeasible synthesis,
// 3 input error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "nmg/analysis.hpp"
#include "nmg/config.hpp"
#include "nmg/io.hpp"
#include "nmg/pipeline.hpp"
#include "nmg/sim.hpp"
#include "nmg/synthesis.hpp"

namespace fs = std::filesystem;
using namespace nmg;

namespace {

constexpr int kOk = 0;
constexpr int kVerdictFailure = 1;
constexpr int kInfeasible = 2;
constexpr int kInputError = 3;

struct Options {
  std::string config;
  std::string gains;
  std::string out;
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  std::string scheme;
};

std::string out_dir(const Options& o, const Config& c) {
  const std::string dir = o.out.empty() ? c.output.directory : o.out;
  fs::create_directories(dir);
  return dir;
}

Config load(const Options& o) {
  Config c = load_config(o.config);
  if (o.dt) {
    if (!(*o.dt > 0)) throw ConfigError("--dt must be positive");
    c.sim.dt = *o.dt;
  }
  if (o.seed) c.sim.seed = *o.seed;
  if (!o.scheme.empty()) c.sim.scheme = o.scheme;
  return c;
}

GainFile gains_for(const Options& o, const Config& c, bool required) {
  if (o.gains.empty()) {
    if (required) throw ConfigError("--gains is required for the proposed scheme");
    GainFile g;
    g.n_ders = static_cast<int>(c.ders.size());
    g.k_blocks.assign(c.ders.size(), GainMatrix{});
    return g;
  }
  GainFile g = load_gain(o.gains);
  if (g.n_ders != static_cast<int>(c.ders.size())) {
    throw ConfigError("gain file has " + std::to_string(g.n_ders) + " DERs, config has " +
                      std::to_string(c.ders.size()));
  }
  for (const auto& k : g.k_blocks) {
    const auto& k0 = g.k_blocks.front();
    if (k.k_omega != k0.k_omega || k.k_Omega != k0.k_Omega || k.k_v != k0.k_v || k.k_e != k0.k_e) {
      throw ConfigError("gain file: per-DER gains differ; the simulator applies one shared block");
    }
  }
  return g;
}

int cmd_synthesize(const Options& o) {
  const Config c = load(o);
  const std::string dir = out_dir(o, c);
  const auto problem = build_synthesis_problem(c);
  const auto search = search_hyperparameters(problem, build_search_grid(c), thread_count());

  std::ofstream pts(dir + "/search_points.csv");
  pts << "index,kappa_y,tau,tau_h,tau_g,tau_v,status,p_norm,objective,max_residual\n";
  for (std::size_t i = 0; i < search.points.size(); ++i) {
    const auto& p = search.points[i];
    pts << i << ',' << p.kappa_y << ',' << p.tau << ',' << p.tau_h << ',' << p.tau_g << ',' << p.tau_v << ','
        << p.status << ',' << p.p_norm << ',' << p.objective << ',' << p.max_residual << '\n';
  }
  if (!search.found) {
    std::cerr << "synthesis infeasible at every grid point; see " << dir << "/search_points.csv\n";
    for (const auto& p : search.points) {
      std::cerr << "  kappa_y=" << p.kappa_y << " tau=" << p.tau << " tau_h=" << p.tau_h << " tau_g=" << p.tau_g
                << " tau_v=" << p.tau_v << ": " << p.status << '\n';
    }
    return kInfeasible;
  }
  const auto& r = search.best;
  const auto gf = gain_file_from(r, problem.sys.n_ders);
  std::ofstream(dir + "/gains.json") << gain_json(gf).dump(2) << '\n';

  std::ofstream rep(dir + "/synthesis_report.txt");
  char buf[512];
  rep << "hyperparameters\n";
  std::snprintf(buf, sizeof buf, "  kappa_y %.6g  tau %.6g  tau_h %.6g  tau_g %.6g  tau_v %.6g\n", r.kappa_y, r.tau,
                r.tau_h, r.tau_g, r.tau_v);
  rep << buf;
  std::snprintf(buf, sizeof buf, "alpha %.6g  beta %.6g  kappa_L %.6g  objective %.6g\n", r.alpha, r.beta,
                r.kappa_l, r.objective);
  rep << buf;
  std::snprintf(buf, sizeof buf, "gain  k_omega %.6g  k_Omega %.6g  k_v %.6g  k_e %.6g\n", r.k_gain.k_omega,
                r.k_gain.k_Omega, r.k_gain.k_v, r.k_gain.k_e);
  rep << buf;
  std::snprintf(buf, sizeof buf, "||P_D||_2 %.6g\n", r.p_norm);
  rep << buf << "residual eigenvalues\n";
  for (const auto& [name, v] : r.residuals) {
    std::snprintf(buf, sizeof buf, "  %-12s %.3e\n", name.c_str(), v);
    rep << buf;
  }
  for (const auto& w : r.warnings) rep << "warning: " << w << '\n';
  rep << "best ||P|| sequence:";
  for (double v : search.best_so_far) rep << ' ' << v;
  rep << '\n';
  std::cout << "alpha=" << r.alpha << " beta=" << r.beta << " ||P||=" << r.p_norm << " -> " << dir
            << "/gains.json\n";
  return kOk;
}

int cmd_simulate(const Options& o) {
  const Config c = load(o);
  const std::string dir = out_dir(o, c);
  const bool proposed = c.sim.scheme == "proposed";
  const GainFile g = gains_for(o, c, proposed);
  const GainMatrix k = proposed ? g.k_blocks.front() : GainMatrix{};
  const int n = static_cast<int>(c.scenarios.size());
  bool aborted = false;
  for (int i = (n == 0 ? -1 : 0); i < std::max(n, 1); ++i) {
    const Scenario sc = build_scenario(c, i, k);
    const auto log = run(sc);
    const std::string stem = dir + "/" + sc.label + "_" + c.sim.scheme;
    write_trajectory_csv(stem + ".csv", log);
    std::ofstream(stem + "_events.json") << events_json(log, sc.label).dump(2) << '\n';
    std::cout << stem << ".csv (" << log.times.size() << " samples)\n";
    if (log.aborted) {
      std::cerr << sc.label << ": " << log.diagnostic << '\n';
      aborted = true;
    }
    if (n == 0) break;
  }
  return aborted ? kVerdictFailure : kOk;
}

int cmd_analyze(const Options& o) {
  const Config c = load(o);
  const std::string dir = out_dir(o, c);
  const GainFile g = gains_for(o, c, true);
  const auto ders = build_ders(c);
  const auto coupling = build_coupling(c);
  const GainMatrix k = g.k_blocks.front();
  const MatrixXd k_d = g.k_d();
  bool ok = true;
  nlohmann::ordered_json verdict;

  // Logs written by `simulate`; the segment schedule is replayed from the config.
  std::vector<SuiteLegs> suite;
  const int n = static_cast<int>(c.scenarios.size());
  for (int i = (n == 0 ? -1 : 0); i < std::max(n, 1); ++i) {
    SuiteLegs legs;
    legs.scenario = build_scenario(c, i, k);
    legs.label = legs.scenario.label;
    std::vector<EventMarker> markers;
    const auto segs = build_segments(legs.scenario, &markers);
    legs.base = read_trajectory_csv(dir + "/" + legs.label + "_base.csv");
    legs.proposed = read_trajectory_csv(dir + "/" + legs.label + "_proposed.csv");
    for (auto* log : {&legs.base, &legs.proposed}) {
      if (log->n_ders != static_cast<int>(ders.size())) throw ConfigError("trajectory DER count differs from config");
      log->segments = segs;
      log->markers = markers;
    }
    suite.push_back(std::move(legs));
    if (n == 0) break;
  }

  const auto rows = metrics_table(c, suite);
  {
    std::ofstream m(dir + "/metrics.csv");
    m << "window,signal,scheme,loss_ro,loss_re\n";
    for (const auto& r : rows) {
      m << r.window << ',' << r.signal << ',' << r.scheme << ',' << detail::fmt(r.loss_ro) << ','
        << detail::fmt(r.loss_re) << '\n';
    }
  }

  ConnectiveOptions copt;
  copt.max_links = c.analysis.connective_max_links;
  copt.samples = c.analysis.connective_samples;
  copt.seed = c.sim.seed;
  const auto conn = connective_stability_check(ders, coupling, k, g.alpha, g.beta, copt);
  verdict["connective"] = {{"pass", conn.stable},
                           {"exhaustive", conn.exhaustive},
                           {"corners", conn.corners.size()},
                           {"worst_real", conn.worst_real},
                           {"zero_modes_match", conn.zero_modes_match}};
  ok = ok && conn.stable;

  if (g.p_lyap.size() > 0) {
    EllipsoidOptions eopt;
    eopt.trials = c.analysis.ellipsoid_trials;
    eopt.horizon = c.analysis.ellipsoid_horizon;
    eopt.seed = c.analysis.ellipsoid_seed;
    const auto ell = ellipsoid_containment(g.p_lyap, ders, coupling, k_d, g.alpha, g.beta, eopt);
    verdict["ellipsoid"] = {{"pass", ell.pass}, {"sup_v", ell.sup_v}, {"trials", ell.trials}};
    ok = ok && ell.pass;

    DissipativityOptions dopt;
    dopt.rel_tol = c.analysis.dissipativity_rel_tol;
    nlohmann::ordered_json dis = nlohmann::ordered_json::array();
    for (const auto& legs : suite) {
      const auto d = dissipativity_check(legs.proposed, ders, k_d, g.p_lyap, g.alpha, g.beta, g.multipliers(), dopt);
      dis.push_back({{"scenario", legs.label},
                     {"pass", d.pass},
                     {"max_violation", d.max_violation},
                     {"t_worst", d.t_worst},
                     {"too_coarse", d.too_coarse}});
      ok = ok && d.pass;
    }
    verdict["dissipativity"] = dis;
  }

  nlohmann::ordered_json sharing = nlohmann::ordered_json::array();
  for (const auto& legs : suite) {
    const auto& sw = c.analysis.scenario_window;
    const auto& iw = c.analysis.initialization_window;
    const auto pre = sharing_residuals(legs.proposed, ders, {"init", iw.first, iw.second});
    const auto post = sharing_residuals(legs.proposed, ders, {legs.label, sw.first, sw.second});
    sharing.push_back({{"scenario", legs.label},
                       {"pre_p", pre.err_p},
                       {"pre_q", pre.err_q},
                       {"post_p", post.err_p},
                       {"post_q", post.err_q}});
  }
  verdict["sharing"] = sharing;
  verdict["pass"] = ok;
  std::ofstream(dir + "/verdict.json") << verdict.dump(2) << '\n';
  std::cout << verdict.dump(2) << '\n';
  return ok ? kOk : kVerdictFailure;
}

int cmd_report(const Options& o) {
  const Config c = load(o);
  const std::string dir = out_dir(o, c);
  std::ofstream rep(dir + "/summary.md");
  rep << "# nmg summary\n\n";
  auto include = [&](const std::string& title, const std::string& file, bool code) {
    std::ifstream in(dir + "/" + file);
    rep << "## " << title << "\n\n";
    if (!in) {
      rep << "(missing " << file << ")\n\n";
      return;
    }
    if (code) rep << "```\n";
    rep << in.rdbuf();
    if (code) rep << "```\n";
    rep << '\n';
  };
  include("Synthesis", "synthesis_report.txt", true);
  include("Loss metrics", "metrics.csv", true);
  include("Verdicts", "verdict.json", true);
  std::cout << dir << "/summary.md\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Networked microgrid secondary control: synthesis, simulation and analysis"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory (overrides the config)");
  };
  auto* syn = app.add_subcommand("synthesize", "solve the gain synthesis over the multiplier grid");
  add_common(syn);
  auto* sim = app.add_subcommand("simulate", "run every scenario for one scheme");
  add_common(sim);
  sim->add_option("--gains", o.gains, "gain file from synthesize");
  sim->add_option("--scheme", o.scheme, "base or proposed")->check(CLI::IsMember({"base", "proposed"}));
  sim->add_option("--dt", o.dt, "integration step override (s)");
  sim->add_option("--seed", o.seed, "seed override");
  auto* ana = app.add_subcommand("analyze", "metrics and verdicts from simulated logs");
  add_common(ana);
  ana->add_option("--gains", o.gains, "gain file from synthesize")->required();
  ana->add_option("--seed", o.seed, "seed override");
  auto* rep = app.add_subcommand("report", "bundle prior outputs into summary.md");
  add_common(rep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (syn->parsed()) return cmd_synthesize(o);
    if (sim->parsed()) return cmd_simulate(o);
    if (ana->parsed()) return cmd_analyze(o);
    if (rep->parsed()) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::out_of_range& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}
