#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "msmv/harness.hpp"

using namespace msmv;

namespace {

json valid_config() {
  return json{
      {"model", {{"name", "linear_test"}, {"params", {{"theta", 0.0}}}}},
      {"sim",
       {{"T", 1.0},
        {"dt", 0.01},
        {"delta", 0.05},
        {"n_particles", 8},
        {"x0", {0.5}},
        {"y0", {0.0}},
        {"seed", 9}}},
      {"experiment",
       {{"kind", "avg_theta_zero"},
        {"deltas", {0.1, 0.01}},
        {"n_mc", 2}}}};
}

// slow dynamics switched off entirely; the averaged system is constant
ModelBundle trivial_bundle() {
  CoefficientSet c;
  c.b1 = [](const Vec& x, const ParticleCloud&, const Vec&) {
    return Vec(Vec::Zero(x.size()));
  };
  c.sigma1 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Zero(1, 1));
  };
  c.b2 = [](const Vec&, const ParticleCloud&, const Vec& y) {
    return Vec(-2.0 * y);
  };
  c.sigma2 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Constant(1, 1, 1.0));
  };
  c.sigma1_y_independent = true;
  c.sigma2_bounded = true;
  DomainSampler ds{Vec::Constant(1, -2.0), Vec::Constant(1, 2.0),
                   Vec::Constant(1, -2.0), Vec::Constant(1, 2.0)};
  auto bbar = [](const Vec& x, const ParticleCloud&) {
    return Vec(Vec::Zero(x.size()));
  };
  return ModelBundle{std::move(c), MonotoneOperator::zero(1),
                     MonotoneOperator::zero(1), bbar, std::move(ds)};
}

// flat slow drift with constant sigma1 = s; closed-form rate function
ModelBundle flat_bundle(double s) {
  ModelBundle b = trivial_bundle();
  b.coeffs.sigma1 = [s](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Constant(1, 1, s));
  };
  return b;
}

SimConfig sim8() {
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 0.01;
  cfg.delta = 0.05;
  cfg.n_particles = 8;
  cfg.x0 = Vec::Constant(1, 0.5);
  cfg.y0 = Vec::Zero(1);
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("config parsing accepts the reference document") {
  Config c = load_config(valid_config());
  CHECK(c.sim.n_particles == 8);
  CHECK(c.sim.x0[0] == 0.5);
  CHECK(c.experiment.deltas.size() == 2);
  CHECK(c.experiment.kind == GridKind::AvgThetaZero);
}

TEST_CASE("unknown keys are rejected at every level") {
  json j = valid_config();
  j["stray"] = 1;
  CHECK_THROWS_AS(load_config(j), ConfigError);

  j = valid_config();
  j["sim"]["typo_dt"] = 0.1;
  CHECK_THROWS_AS(load_config(j), ConfigError);

  j = valid_config();
  j["model"]["params"]["unknown_param"] = 3;
  CHECK_THROWS_AS(load_config(j), ConfigError);

  j = valid_config();
  j["experiment"]["reps"] = 5;
  CHECK_THROWS_AS(load_config(j), ConfigError);

  j = valid_config();
  j["model"]["name"] = "no_such_model";
  CHECK_THROWS_AS(load_config(j), ConfigError);
}

TEST_CASE("operator section and domain membership") {
  json j = valid_config();
  j["operators"] = {
      {"A1",
       {{"variant", "indicator"},
        {"set", {{"kind", "box"}, {"lower", {-1.0}}, {"upper", {1.0}}}}}}};
  Config c = load_config(j);
  CHECK(c.model.A1.in_domain(Vec::Constant(1, 0.5)));
  CHECK_FALSE(c.model.A1.in_domain(Vec::Constant(1, 5.0)));

  // x0 outside the declared domain is a config error
  j["sim"]["x0"] = {5.0};
  CHECK_THROWS_AS(load_config(j), ConfigError);

  // bad operator variant
  json j2 = valid_config();
  j2["operators"] = {{"A2", {{"variant", "mystery"}}}};
  CHECK_THROWS_AS(load_config(j2), ConfigError);
}

TEST_CASE("timescale sanity on the experiment sweep") {
  json j = valid_config();
  j["experiment"]["kind"] = "avg_theta_pos";
  j["experiment"]["eps_exponent"] = 2.0;  // delta/eps unbounded
  CHECK_THROWS_AS(load_config(j), ConfigError);
  j["experiment"]["eps_exponent"] = 0.5;
  load_config(j);
}

TEST_CASE("config hash is key-order invariant") {
  json a = json::parse(R"({"model":{"name":"linear_test"},"sim":{"dt":0.01,"T":1.0}})");
  json b = json::parse(R"({"sim":{"T":1.0,"dt":0.01},"model":{"name":"linear_test"}})");
  CHECK(config_hash(a) == config_hash(b));
  json c = a;
  c["sim"]["dt"] = 0.02;
  CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("run record json round trip") {
  RunRecord r;
  r.run_id = "run-abc";
  r.config_snapshot = valid_config();
  r.hash = config_hash(r.config_snapshot);
  r.seed = 42;
  r.outputs = {"a.csv", "b.svg"};
  r.wall_seconds = 1.25;
  r.step_count = 9001;
  r.status = "done";
  RunRecord back = RunRecord::from_json(r.to_json());
  CHECK(back.run_id == r.run_id);
  CHECK(back.config_snapshot == r.config_snapshot);
  CHECK(back.hash == r.hash);
  CHECK(back.seed == r.seed);
  CHECK(back.outputs == r.outputs);
  CHECK(back.wall_seconds == r.wall_seconds);
  CHECK(back.step_count == r.step_count);
  CHECK(back.status == r.status);
}

TEST_CASE("slope fit recovers an exact power law") {
  ConvergenceResult res;
  for (double d : {1e-1, 1e-2, 1e-3, 1e-4}) {
    ErrorCell c;
    c.delta = d;
    c.err_mean = 3.0 * std::pow(d, 0.25);
    c.err_stderr = 0.0;
    res.cells.push_back(c);
  }
  fit_slope(res);
  REQUIRE(res.slope_defined);
  CHECK(res.slope == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(res.fit_r2 == doctest::Approx(1.0));

  // a noisy smallest-delta point is down-weighted, pulling the fit toward
  // the clean points
  ConvergenceResult noisy = res;
  noisy.cells.back().err_mean *= 4.0;  // flattened by a noise floor
  noisy.cells.back().err_stderr = noisy.cells.back().err_mean;  // > 20%
  fit_slope(noisy);
  ConvergenceResult unweighted = res;
  unweighted.cells.back().err_mean *= 4.0;
  unweighted.cells.back().err_stderr = 0.0;
  fit_slope(unweighted);
  CHECK(std::abs(noisy.slope - 0.25) < std::abs(unweighted.slope - 0.25));
}

TEST_CASE("convergence experiment: trivial slow dynamics give zero error") {
  ExperimentGrid grid;
  grid.kind = GridKind::AvgThetaZero;
  grid.deltas = {1.0};
  grid.n_mc = 2;
  SimConfig cfg = sim8();
  cfg.delta = 1.0;
  auto res = run_convergence_experiment(grid, trivial_bundle(), cfg);
  REQUIRE(res.cells.size() == 1);
  CHECK_FALSE(res.cells[0].failed);
  CHECK(res.cells[0].err_mean == 0.0);
  CHECK_FALSE(res.slope_defined);
}

TEST_CASE("convergence experiment: errors shrink with delta on the linear model") {
  LinearTestParams p;
  auto bundle = make_linear_test(p);
  ExperimentGrid grid;
  grid.kind = GridKind::AvgThetaZero;
  grid.deltas = {1e-1, 1e-2, 1e-3};
  grid.n_mc = 4;
  grid.max_workers = 8;
  auto res = run_convergence_experiment(grid, bundle, sim8());
  REQUIRE(res.cells.size() == 3);
  for (const auto& c : res.cells) CHECK_FALSE(c.failed);
  CHECK(res.cells[1].err_mean < res.cells[0].err_mean);
  CHECK(res.cells[2].err_mean < res.cells[1].err_mean);
  CHECK(res.slope_defined);
  CHECK(res.slope > 0.0);
}

TEST_CASE("convergence experiment is byte-deterministic across worker counts") {
  LinearTestParams p;
  auto bundle = make_linear_test(p);
  ExperimentGrid grid;
  grid.kind = GridKind::AvgThetaZero;
  grid.deltas = {1e-1, 1e-2};
  grid.n_mc = 3;
  grid.max_workers = 1;
  auto res1 = run_convergence_experiment(grid, bundle, sim8());
  grid.max_workers = 8;
  auto res8 = run_convergence_experiment(grid, bundle, sim8());
  std::ostringstream s1, s8;
  write_errors_csv(res1, s1);
  write_errors_csv(res8, s8);
  CHECK(s1.str() == s8.str());
}

TEST_CASE("diverging cells are marked failed, not fatal") {
  ModelBundle bundle = trivial_bundle();
  bundle.coeffs.b1 = [](const Vec& x, const ParticleCloud&, const Vec&) {
    return Vec(1e3 * x.array().cube());
  };
  bundle.analytic_averaged_drift = [](const Vec& x, const ParticleCloud&) {
    return Vec(1e3 * x.array().cube());
  };
  ExperimentGrid grid;
  grid.kind = GridKind::AvgThetaZero;
  grid.deltas = {1e-1};
  grid.n_mc = 2;
  SimConfig cfg = sim8();
  cfg.x0 = Vec::Constant(1, 5.0);
  auto res = run_convergence_experiment(grid, bundle, cfg);
  REQUIRE(res.cells.size() == 1);
  CHECK(res.cells[0].failed);
  CHECK_FALSE(res.slope_defined);
}

TEST_CASE("assumption gate aborts the experiment with its own error") {
  ModelBundle bundle = trivial_bundle();
  bundle.coeffs.b2 = [](const Vec&, const ParticleCloud&, const Vec& y) {
    return y;  // expanding fast drift
  };
  ExperimentGrid grid;
  grid.deltas = {1e-1};
  CHECK_THROWS_AS(run_convergence_experiment(grid, bundle, sim8()),
                  AssumptionGateError);
}

TEST_CASE("ldp experiment: baseline row and analytic endpoint") {
  const double s = 0.7, z = 0.5;
  auto bundle = flat_bundle(s);
  ExperimentGrid grid;
  grid.kind = GridKind::Ldp;
  grid.endpoint_targets = {Vec::Constant(1, 0.5 + z)};  // x0 = 0.5
  SimConfig cfg = sim8();
  cfg.dt = 0.05;
  auto res = run_ldp_experiment(grid, bundle, cfg);
  REQUIRE(res.rates.size() == 2);
  CHECK(res.rates[0].target_id == "baseline");
  CHECK(res.rates[0].rate == 0.0);
  CHECK(res.rates[0].converged);
  const double analytic = z * z / (2.0 * s * s * cfg.T);
  CHECK(res.rates[1].converged);
  CHECK(std::abs(res.rates[1].rate - analytic) <= 0.02 * analytic);
  CHECK(res.probes.empty());
}

TEST_CASE("csv writers produce the declared layouts") {
  // exactly representable values so precision-17 output stays short
  ConvergenceResult res;
  ErrorCell c;
  c.delta = 0.25;
  c.epsilon = 0.5;
  c.gamma = 0.5;
  c.n_mc = 4;
  c.err_mean = 0.25;
  c.err_stderr = 0.0078125;
  res.cells.push_back(c);
  std::ostringstream os;
  write_errors_csv(res, os);
  CHECK(os.str() ==
        "delta,epsilon,gamma,n_mc,err_mean,err_stderr\n"
        "0.25,0.5,0.5,4,0.25,0.0078125\n");

  LdpResult l;
  l.rates.push_back({"baseline", 0.0, 0.0, true});
  l.rates.push_back({"endpoint_0", 0.25, 0.03125, true});
  std::ostringstream os2;
  write_rates_csv(l, os2);
  CHECK(os2.str() ==
        "target_id,I,residual,converged\n"
        "baseline,0,0,1\n"
        "endpoint_0,0.25,0.03125,1\n");
}

TEST_CASE("report emission: empty, populated, deterministic") {
  namespace fs = std::filesystem;
  const std::string dir = "report_test_out";
  fs::remove_all(dir);

  // empty table: header-only CSV, no SVG, summary notes the absence
  ConvergenceResult empty;
  RunRecord rec;
  rec.hash = "feedbeef";
  rec.status = "done";
  emit_report(dir, &empty, nullptr, rec, true);
  {
    std::ifstream csv(fs::path(dir) / "errors.csv");
    std::stringstream ss;
    ss << csv.rdbuf();
    CHECK(ss.str() == "delta,epsilon,gamma,n_mc,err_mean,err_stderr\n");
    CHECK_FALSE(fs::exists(fs::path(dir) / "plot.svg"));
    std::ifstream sj(fs::path(dir) / "summary.json");
    json summary;
    sj >> summary;
    CHECK(summary["note"] == "no data");
  }

  // four-point table: SVG markers + fitted line; slope consistent everywhere
  ConvergenceResult res;
  for (double d : {1e-1, 1e-2, 1e-3, 1e-4}) {
    ErrorCell c;
    c.delta = d;
    c.epsilon = 1.0;
    c.n_mc = 4;
    c.err_mean = 2.0 * std::pow(d, 0.3);
    res.cells.push_back(c);
  }
  fit_slope(res);
  fs::remove_all(dir);
  RunRecord rec2;
  rec2.hash = "feedbeef";
  rec2.status = "done";
  emit_report(dir, &res, nullptr, rec2, true);
  std::stringstream svg1, csv1;
  {
    std::ifstream f(fs::path(dir) / "plot.svg");
    svg1 << f.rdbuf();
    std::ifstream g(fs::path(dir) / "errors.csv");
    csv1 << g.rdbuf();
  }
  size_t markers = 0, pos = 0;
  while ((pos = svg1.str().find("<circle", pos)) != std::string::npos) {
    ++markers;
    ++pos;
  }
  CHECK(markers == 4);
  CHECK(svg1.str().find("<line") != std::string::npos);
  {
    std::ifstream sj(fs::path(dir) / "summary.json");
    json summary;
    sj >> summary;
    const double js = summary["slope"];
    // CSV footer carries the same slope
    const std::string footer = "# slope," + [&] {
      std::ostringstream o;
      o.precision(17);
      o << res.slope;
      return o.str();
    }();
    CHECK(csv1.str().find(footer) != std::string::npos);
    CHECK(js == doctest::Approx(res.slope));
  }

  // deterministic re-emit is byte-identical
  RunRecord rec3;
  rec3.hash = "feedbeef";
  rec3.status = "done";
  const std::string dir2 = dir + "_2";
  fs::remove_all(dir2);
  emit_report(dir2, &res, nullptr, rec3, true);
  std::stringstream svg2, csv2;
  {
    std::ifstream f(fs::path(dir2) / "plot.svg");
    svg2 << f.rdbuf();
    std::ifstream g(fs::path(dir2) / "errors.csv");
    csv2 << g.rdbuf();
  }
  CHECK(svg1.str() == svg2.str());
  CHECK(csv1.str() == csv2.str());
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
