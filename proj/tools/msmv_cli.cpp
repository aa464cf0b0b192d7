// Command-line driver for the slow-fast multivalued McKean-Vlasov lab.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "msmv/harness.hpp"

namespace fs = std::filesystem;
using namespace msmv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitGate = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitAssert = 5;

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
  int max_workers = 1;
};

Config load(const GlobalOpts& g) {
  Config cfg = load_config_file(g.config_path);
  if (g.seed_set) cfg.sim.seed = g.seed;
  if (g.max_workers > 0) cfg.experiment.max_workers = g.max_workers;
  return cfg;
}

RunRecord make_record(const Config& cfg) {
  RunRecord rec;
  rec.config_snapshot = cfg.raw;
  rec.hash = config_hash(cfg.raw);
  rec.seed = cfg.sim.seed;
  rec.run_id = "run-" + rec.hash.substr(0, 12);
  return rec;
}

void save_record(const RunRecord& rec, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "run.json") << rec.to_json().dump(2) << "\n";
}

int cmd_check(const GlobalOpts& g, bool assert_mode) {
  const Config cfg = load(g);
  const AssumptionReport rep =
      check_assumptions(cfg.model.coeffs, cfg.model.default_sampler, 10000);
  json j{{"lip_b1_sigma1", rep.lip_b1_sigma1},
         {"lip_b2_sigma2", rep.lip_b2_sigma2},
         {"beta", rep.beta},
         {"alpha", rep.alpha ? json(*rep.alpha) : json(nullptr)},
         {"sigma2_sup", rep.sigma2_sup},
         {"dissipative", rep.dissipative},
         {"gate_passed", rep.gate_passed},
         {"sigma1_y_independent_ok", rep.sigma1_y_independent_ok},
         {"samples", rep.sample_count}};
  std::cout << j.dump(2) << "\n";
  if (!rep.gate_passed) return kExitGate;
  (void)assert_mode;
  return kExitOk;
}

int cmd_simulate(const GlobalOpts& g) {
  const Config cfg = load(g);
  const Trajectory traj = simulate(cfg.model.coeffs, cfg.model.A1, cfg.model.A2,
                                   cfg.sim, g.max_workers);
  fs::create_directories(g.out_dir);
  std::ofstream os(fs::path(g.out_dir) / "trajectory.csv");
  write_trajectory_csv(traj, os);
  RunRecord rec = make_record(cfg);
  rec.status = "done";
  rec.outputs.push_back((fs::path(g.out_dir) / "trajectory.csv").string());
  rec.step_count = static_cast<long long>(cfg.sim.n_steps()) * cfg.sim.n_particles;
  save_record(rec, g.out_dir);
  return kExitOk;
}

int cmd_frozen(const GlobalOpts& g) {
  const Config cfg = load(g);
  const AssumptionReport rep =
      check_assumptions(cfg.model.coeffs, cfg.model.default_sampler, 2000);
  if (!rep.gate_passed) return kExitGate;
  ErgodicSettings es;
  es.alpha_est = rep.alpha.value_or(1.0);
  es.beta_est = rep.beta;
  es.dt_f = std::min(0.01, 1.0 / (10.0 * std::max(rep.beta, 1.0)));
  es.seed = cfg.sim.seed;
  const ParticleCloud mu = ParticleCloud::dirac(cfg.sim.x0);
  const FrozenPath path =
      simulate_frozen(cfg.sim.x0, mu, cfg.model.coeffs, cfg.model.A2,
                      es.effective_horizon(), es.dt_f, es.seed, cfg.sim.y0);
  fs::create_directories(g.out_dir);
  std::ofstream os(fs::path(g.out_dir) / "frozen.csv");
  os << "t,y\n";
  os.precision(17);
  for (size_t k = 0; k < path.times.size(); ++k) {
    os << path.times[k];
    for (int i = 0; i < path.Y.rows(); ++i) os << "," << path.Y(i, k);
    os << "\n";
  }
  return kExitOk;
}

int cmd_average(const GlobalOpts& g) {
  const Config cfg = load(g);
  const AssumptionReport rep =
      check_assumptions(cfg.model.coeffs, cfg.model.default_sampler, 2000);
  if (!rep.gate_passed) return kExitGate;
  ErgodicSettings es;
  es.alpha_est = rep.alpha.value_or(1.0);
  es.beta_est = rep.beta;
  es.dt_f = std::min(0.01, 1.0 / (10.0 * std::max(rep.beta, 1.0)));
  es.seed = cfg.sim.seed;
  const ParticleCloud mu = ParticleCloud::dirac(cfg.sim.x0);
  const InvariantEstimate inv = estimate_invariant(
      cfg.sim.x0, mu, cfg.model.coeffs, cfg.model.A2, es, cfg.sim.y0);
  const AveragedDriftValue bbar = averaged_drift(
      cfg.sim.x0, mu, cfg.model.coeffs, cfg.model.A2, es, cfg.sim.y0);
  fs::create_directories(g.out_dir);
  {
    std::ofstream os(fs::path(g.out_dir) / "invariant_cloud.csv");
    inv.cloud.write_csv(os);
  }
  std::vector<double> bb(bbar.value.data(), bbar.value.data() + bbar.value.size());
  json j{{"bbar1", bb},
         {"stderr", bbar.stderr_},
         {"samples", bbar.sample_size},
         {"invariant_second_moment", inv.cloud.second_moment()},
         {"burn_in", inv.burn_in}};
  std::ofstream(fs::path(g.out_dir) / "averaged_drift.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_converge(const GlobalOpts& g, bool assert_mode) {
  const Config cfg = load(g);
  const auto t0 = std::chrono::steady_clock::now();
  const ConvergenceResult res =
      run_convergence_experiment(cfg.experiment, cfg.model, cfg.sim);
  RunRecord rec = make_record(cfg);
  rec.status = "done";
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  emit_report(g.out_dir, &res, nullptr, rec, g.deterministic);
  save_record(rec, g.out_dir);
  if (res.slope_defined)
    std::cout << "fitted slope " << res.slope << " (r2 " << res.fit_r2 << ")\n";
  else
    std::cout << "slope undefined\n";
  if (assert_mode) {
    bool ok = res.slope_defined && res.slope >= 0.2;
    for (size_t i = 0; ok && i + 1 < res.cells.size(); ++i) {
      const auto& hi = res.cells[i];   // larger delta first by convention
      const auto& lo = res.cells[i + 1];
      if (hi.failed || lo.failed ||
          lo.err_mean + 2.0 * (lo.err_stderr + hi.err_stderr) >= hi.err_mean)
        ok = false;
    }
    if (!ok) return kExitAssert;
  }
  return kExitOk;
}

int cmd_ldp(const GlobalOpts& g, bool assert_mode, bool slow) {
  Config cfg = load(g);
  if (!slow) cfg.experiment.rare_event_mc = 0;
  const LdpResult res = run_ldp_experiment(cfg.experiment, cfg.model, cfg.sim);
  RunRecord rec = make_record(cfg);
  rec.status = "done";
  emit_report(g.out_dir, nullptr, &res, rec, g.deterministic);
  save_record(rec, g.out_dir);
  for (const auto& r : res.rates)
    std::cout << r.target_id << "  I=" << r.rate << "  residual=" << r.residual
              << (r.converged ? "" : "  (not converged)") << "\n";
  for (const auto& p : res.probes)
    std::cout << "eps=" << p.eps << "  p_hat=" << p.p_hat
              << "  -eps*log(p)=" << p.minus_eps_log_p << "\n";
  if (assert_mode) {
    bool ok = true;
    for (const auto& r : res.rates)
      if (r.target_id == "baseline" && r.rate > 1e-6) ok = false;
    if (slow && !res.probes.empty() && res.rates.size() > 1) {
      const double I = res.rates[1].rate;
      const double probe = res.probes.back().minus_eps_log_p;
      if (!(std::isfinite(probe) && probe > I / 2.0 && probe < I * 2.0))
        ok = false;
    }
    if (!ok) return kExitAssert;
  }
  return kExitOk;
}

int cmd_report(const GlobalOpts& g) {
  // regenerate plot + summary from a previously written errors.csv
  const fs::path dir(g.out_dir);
  std::ifstream rin(dir / "run.json");
  if (!rin) throw ConfigError("no run.json in " + g.out_dir);
  json rj;
  rin >> rj;
  RunRecord rec = RunRecord::from_json(rj);
  ConvergenceResult res;
  std::ifstream ein(dir / "errors.csv");
  if (ein) {
    std::string line;
    std::getline(ein, line);  // header
    while (std::getline(ein, line)) {
      if (line.empty() || line[0] == '#') continue;
      ErrorCell c;
      std::istringstream ls(line);
      char comma;
      ls >> c.delta >> comma >> c.epsilon >> comma >> c.gamma >> comma >>
          c.n_mc >> comma >> c.err_mean >> comma >> c.err_stderr;
      res.cells.push_back(c);
    }
    fit_slope(res);
  }
  emit_report(g.out_dir, &res, nullptr, rec, g.deterministic);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slow-fast multivalued McKean-Vlasov simulation lab"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config path")->required();
  app.add_option("--seed", g.seed, "seed override")
      ->each([&g](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out_dir, "output directory");
  app.add_flag("--deterministic", g.deterministic,
               "suppress timestamps in emitted files");
  app.add_option("--max-workers", g.max_workers, "worker thread cap");

  bool assert_mode = false, slow = false;
  app.add_flag("--assert", assert_mode, "exit 5 on acceptance failure");
  app.add_flag("--slow", slow, "include slow probes (ldp)");

  auto* c_sim = app.add_subcommand("simulate", "integrate the coupled system");
  auto* c_frozen = app.add_subcommand("frozen", "frozen-equation path");
  auto* c_avg = app.add_subcommand("average", "invariant measure and averaged drift");
  auto* c_conv = app.add_subcommand("converge", "convergence-rate experiment");
  auto* c_ldp = app.add_subcommand("ldp", "rate functions and rare-event probes");
  auto* c_check = app.add_subcommand("check", "assumption report");
  auto* c_rep = app.add_subcommand("report", "re-emit report files");
  // global flags may appear after the subcommand name
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (c_check->parsed()) return cmd_check(g, assert_mode);
    if (c_sim->parsed()) return cmd_simulate(g);
    if (c_frozen->parsed()) return cmd_frozen(g);
    if (c_avg->parsed()) return cmd_average(g);
    if (c_conv->parsed()) return cmd_converge(g, assert_mode);
    if (c_ldp->parsed()) return cmd_ldp(g, assert_mode, slow);
    if (c_rep->parsed()) return cmd_report(g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const AssumptionGateError& e) {
    std::cerr << "assumption gate: " << e.what() << "\n";
    return kExitGate;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
