#pragma once

// Experiment orchestration: JSON config ingestion (unknown keys rejected),
// convergence-rate and LDP experiment recipes, run registry, and report
// emission (CSV tables, SVG log-log plot, JSON summary).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "msmv/ldp.hpp"

#include <nlohmann/json.hpp>

namespace msmv {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& section) {
  if (!j.is_object())
    throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k))
      throw ConfigError("unknown key '" + k + "' in config section '" +
                        section + "'");
}

inline Vec to_vec(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(v.data(), v.size());
}

}  // namespace detail

// canonical content hash: nlohmann objects iterate in sorted key order, so
// semantically identical configs hash identically
inline std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ------------------------------------------------------------------
// config ingestion

inline ConvexSet parse_convex_set(const json& j) {
  detail::reject_unknown(j, {"kind", "lower", "upper", "center", "radius",
                             "normal", "offset", "facets", "interior"},
                         "set");
  const std::string kind = j.at("kind");
  if (kind == "box")
    return ConvexSet::box(detail::to_vec(j.at("lower")),
                          detail::to_vec(j.at("upper")));
  if (kind == "ball")
    return ConvexSet::ball(detail::to_vec(j.at("center")), j.at("radius"));
  if (kind == "halfspace")
    return ConvexSet::halfspace(detail::to_vec(j.at("normal")), j.at("offset"));
  if (kind == "polytope") {
    std::vector<Halfspace> facets;
    for (const auto& f : j.at("facets"))
      facets.push_back({detail::to_vec(f.at("normal")), f.at("offset")});
    return ConvexSet::polytope(std::move(facets),
                               detail::to_vec(j.at("interior")));
  }
  throw ConfigError("unknown convex set kind '" + kind + "'");
}

inline MonotoneOperator parse_operator(const json& j, int dim) {
  detail::reject_unknown(j, {"variant", "set", "psi"}, "operator");
  const std::string variant = j.at("variant");
  if (variant == "zero") return MonotoneOperator::zero(dim);
  if (variant == "indicator")
    return MonotoneOperator::indicator(parse_convex_set(j.at("set")));
  if (variant == "subgradient") {
    const std::string psi = j.at("psi");
    if (psi == "abs")
      return MonotoneOperator::subgradient(
          [](double u) { return std::abs(u); }, dim);
    if (psi == "square")
      return MonotoneOperator::subgradient(
          [](double u) { return 0.5 * u * u; }, dim);
    throw ConfigError("unknown psi '" + psi + "' (use abs or square)");
  }
  throw ConfigError("unknown operator variant '" + variant + "'");
}

inline ModelBundle parse_model(const json& j) {
  detail::reject_unknown(j, {"name", "params"}, "model");
  const std::string name = j.at("name");
  const json p = j.value("params", json::object());
  if (name == "linear_test") {
    detail::reject_unknown(p,
                           {"a", "c", "kappa", "beta", "g", "s1", "s2", "theta",
                            "constrained", "bound"},
                           "model.params");
    LinearTestParams lp;
    lp.a = p.value("a", lp.a);
    lp.c = p.value("c", lp.c);
    lp.kappa = p.value("kappa", lp.kappa);
    lp.beta = p.value("beta", lp.beta);
    lp.g = p.value("g", lp.g);
    lp.s1 = p.value("s1", lp.s1);
    lp.s2 = p.value("s2", lp.s2);
    lp.theta = p.value("theta", lp.theta);
    lp.constrained = p.value("constrained", lp.constrained);
    lp.bound = p.value("bound", lp.bound);
    return make_linear_test(lp);
  }
  if (name == "ou_frozen") {
    detail::reject_unknown(p, {"beta", "gain_x", "shift", "s2"}, "model.params");
    OuFrozenParams op;
    op.beta = p.value("beta", op.beta);
    op.gain_x = p.value("gain_x", op.gain_x);
    op.shift = p.value("shift", op.shift);
    op.s2 = p.value("s2", op.s2);
    return make_ou_frozen(op);
  }
  if (name == "aggregation_diffusion") {
    // built-in quadratic potentials: grad V_i(z) = coef_i * z
    detail::reject_unknown(p, {"v1", "v2", "v3", "v4", "s1", "s2", "bound"},
                           "model.params");
    const double v1 = p.value("v1", 1.0), v2 = p.value("v2", 0.5);
    const double v3 = p.value("v3", 2.0), v4 = p.value("v4", 0.5);
    const double bound = p.value("bound", 1.0);
    AggregationDiffusionSpec spec{
        [v1](const Vec& z) { return Vec(v1 * z); },
        [v2](const Vec& z) { return Vec(v2 * z.array().tanh().matrix()); },
        [v3](const Vec& z) { return Vec(v3 * z); },
        [v4](const Vec& z) { return Vec(v4 * z.array().tanh().matrix()); },
        Mat::Constant(1, 1, p.value("s1", 0.5)),
        Mat::Constant(1, 1, p.value("s2", 1.0)),
        ConvexSet::box(Vec::Constant(1, -bound), Vec::Constant(1, bound)),
        MonotoneOperator::zero(1)};
    return build_aggregation_diffusion(spec);
  }
  throw ConfigError("unknown model '" + name + "'");
}

inline SimConfig parse_sim(const json& j, const ModelBundle& bundle) {
  detail::reject_unknown(j,
                         {"T", "dt", "epsilon", "delta", "theta", "gamma",
                          "n_particles", "x0", "y0", "fast_substeps", "seed"},
                         "sim");
  SimConfig c;
  c.T = j.value("T", 1.0);
  c.dt = j.value("dt", 1e-2);
  c.epsilon = j.value("epsilon", 1.0);
  c.delta = j.value("delta", 1e-1);
  c.theta = j.value("theta", bundle.coeffs.theta);
  c.gamma = j.value("gamma", 0.5);
  c.n_particles = j.value("n_particles", 512);
  c.x0 = j.contains("x0") ? detail::to_vec(j.at("x0"))
                          : Vec::Zero(bundle.coeffs.n);
  c.y0 = j.contains("y0") ? detail::to_vec(j.at("y0"))
                          : Vec::Zero(bundle.coeffs.m);
  c.fast_substeps = j.value("fast_substeps", 0);
  c.seed = j.value("seed", 0ULL);
  if (!bundle.A1.in_domain(c.x0))
    throw ConfigError("x0 not in the closure of D(A1)");
  if (!bundle.A2.in_domain(c.y0))
    throw ConfigError("y0 not in the closure of D(A2)");
  return c;
}

enum class GridKind { AvgThetaPos, AvgThetaZero, Ldp, Mixing, Picard };

struct ExperimentGrid {
  GridKind kind = GridKind::AvgThetaZero;
  std::vector<double> deltas;
  // epsilon as a function of delta (avg) or the eps list (ldp)
  double eps_exponent = 0.0;  // eps = delta^exponent; 0 means eps = 1
  std::vector<double> eps_list;
  double ldp_delta_exponent = 1.5;  // delta = eps^exponent for ldp probes
  double gamma = 0.5;
  int n_mc = 32;           // repetitions per cell
  int rare_event_mc = 0;   // paths for the rare-event probe (0 = skip)
  double eta = 0.0;        // exceedance level for rare-event probes
  std::vector<Vec> endpoint_targets;
  int max_workers = 1;
};

inline ExperimentGrid parse_experiment(const json& j) {
  detail::reject_unknown(
      j,
      {"kind", "deltas", "eps_exponent", "eps_list", "ldp_delta_exponent",
       "gamma", "n_mc", "rare_event_mc", "eta", "endpoint_targets",
       "max_workers"},
      "experiment");
  ExperimentGrid g;
  const std::string kind = j.value("kind", "avg_theta_zero");
  if (kind == "avg_theta_pos") g.kind = GridKind::AvgThetaPos;
  else if (kind == "avg_theta_zero") g.kind = GridKind::AvgThetaZero;
  else if (kind == "ldp") g.kind = GridKind::Ldp;
  else if (kind == "mixing") g.kind = GridKind::Mixing;
  else if (kind == "picard") g.kind = GridKind::Picard;
  else throw ConfigError("unknown experiment kind '" + kind + "'");
  if (j.contains("deltas"))
    g.deltas = j.at("deltas").get<std::vector<double>>();
  g.eps_exponent = j.value("eps_exponent", 0.0);
  if (j.contains("eps_list"))
    g.eps_list = j.at("eps_list").get<std::vector<double>>();
  g.ldp_delta_exponent = j.value("ldp_delta_exponent", 1.5);
  g.gamma = j.value("gamma", 0.5);
  g.n_mc = j.value("n_mc", 32);
  g.rare_event_mc = j.value("rare_event_mc", 0);
  g.eta = j.value("eta", 0.0);
  if (j.contains("endpoint_targets"))
    for (const auto& t : j.at("endpoint_targets"))
      g.endpoint_targets.push_back(detail::to_vec(t));
  g.max_workers = j.value("max_workers", 1);
  // timescale-separation sanity on the declared sweep
  if (g.kind == GridKind::AvgThetaPos && g.eps_exponent > 1.0)
    throw ConfigError("avg_theta_pos requires delta/eps bounded (eps_exponent <= 1)");
  return g;
}

struct Config {
  json raw;
  ModelBundle model;
  SimConfig sim;
  ExperimentGrid experiment;
};

inline Config load_config(const json& j) {
  detail::reject_unknown(j, {"model", "operators", "sim", "experiment"},
                         "config");
  Config c{j, parse_model(j.at("model")), SimConfig{}, ExperimentGrid{}};
  if (j.contains("operators")) {
    const json& ops = j.at("operators");
    detail::reject_unknown(ops, {"A1", "A2"}, "operators");
    if (ops.contains("A1"))
      c.model.A1 = parse_operator(ops.at("A1"), c.model.coeffs.n);
    if (ops.contains("A2"))
      c.model.A2 = parse_operator(ops.at("A2"), c.model.coeffs.m);
  }
  c.sim = parse_sim(j.value("sim", json::object()), c.model);
  if (j.contains("experiment")) c.experiment = parse_experiment(j.at("experiment"));
  return c;
}

inline Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return load_config(j);
}

// ------------------------------------------------------------------
// run registry

struct RunRecord {
  std::string run_id;
  json config_snapshot;
  std::string hash;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;
  long long step_count = 0;
  std::string status = "pending";

  json to_json() const {
    return json{{"run_id", run_id},       {"config", config_snapshot},
                {"hash", hash},           {"seed", seed},
                {"outputs", outputs},     {"wall_seconds", wall_seconds},
                {"step_count", step_count}, {"status", status}};
  }
  static RunRecord from_json(const json& j) {
    RunRecord r;
    r.run_id = j.at("run_id");
    r.config_snapshot = j.at("config");
    r.hash = j.at("hash");
    r.seed = j.at("seed");
    r.outputs = j.at("outputs").get<std::vector<std::string>>();
    r.wall_seconds = j.at("wall_seconds");
    r.step_count = j.at("step_count");
    r.status = j.at("status");
    return r;
  }
};

// ------------------------------------------------------------------
// convergence experiment

struct ErrorCell {
  double delta = 0.0, epsilon = 0.0, gamma = 0.5;
  int n_mc = 0;
  double err_mean = 0.0, err_stderr = 0.0;
  bool failed = false;
};

struct ConvergenceResult {
  std::vector<ErrorCell> cells;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double fit_r2 = 0.0;
  bool slope_defined = false;
};

// OLS on log err vs log delta; the smallest-delta point is down-weighted
// (half weight) when its MC stderr exceeds 20% of the error
inline void fit_slope(ConvergenceResult& res) {
  std::vector<double> lx, ly, w;
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& c : res.cells)
    if (!c.failed && c.err_mean > 0.0) dmin = std::min(dmin, c.delta);
  for (const auto& c : res.cells) {
    if (c.failed || c.err_mean <= 0.0) continue;
    lx.push_back(std::log(c.delta));
    ly.push_back(std::log(c.err_mean));
    const bool noisy = c.delta == dmin && c.err_stderr > 0.2 * c.err_mean;
    w.push_back(noisy ? 0.5 : 1.0);
  }
  if (lx.size() < 2) return;
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < lx.size(); ++i) {
    sw += w[i];
    sx += w[i] * lx[i];
    sy += w[i] * ly[i];
    sxx += w[i] * lx[i] * lx[i];
    sxy += w[i] * lx[i] * ly[i];
  }
  const double denom = sw * sxx - sx * sx;
  if (std::abs(denom) < 1e-30) return;
  res.slope = (sw * sxy - sx * sy) / denom;
  const double intercept = (sy - res.slope * sx) / sw;
  double ss_res = 0, ss_tot = 0;
  const double ymean = sy / sw;
  for (size_t i = 0; i < lx.size(); ++i) {
    const double fit = intercept + res.slope * lx[i];
    ss_res += w[i] * (ly[i] - fit) * (ly[i] - fit);
    ss_tot += w[i] * (ly[i] - ymean) * (ly[i] - ymean);
  }
  res.fit_r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
  res.slope_defined = true;
}

struct AssumptionGateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline AveragedDriftFn averaged_drift_for(const ModelBundle& bundle,
                                          const AssumptionReport& rep,
                                          const SimConfig& cfg) {
  if (bundle.analytic_averaged_drift) return bundle.analytic_averaged_drift;
  ErgodicSettings es;
  es.alpha_est = rep.alpha.value_or(1.0);
  es.beta_est = rep.beta;
  es.dt_f = std::min(0.01, 1.0 / (10.0 * std::max(rep.beta, 1.0)));
  es.seed = cfg.seed ^ 0xe7670ULL;
  return make_estimated_drift(bundle.coeffs, bundle.A2, es, cfg.y0,
                              std::make_shared<AveragedDriftCache>());
}

// E sup_t |X^{eps,delta} - limit|^2 per grid cell, full and averaged systems
// consuming identical slow noise streams
inline ConvergenceResult run_convergence_experiment(const ExperimentGrid& grid,
                                                    const ModelBundle& bundle,
                                                    const SimConfig& base_cfg) {
  const AssumptionReport rep =
      check_assumptions(bundle.coeffs, bundle.default_sampler, 2000);
  if (!rep.gate_passed)
    throw AssumptionGateError(
        "assumption gate failed: beta <= 2 L' on the sampled domain");
  const AveragedDriftFn bbar = averaged_drift_for(bundle, rep, base_cfg);

  ConvergenceResult res;
  res.cells.resize(grid.deltas.size());
  const AveragedMode mode = grid.kind == GridKind::AvgThetaPos
                                ? AveragedMode::ThetaPositive
                                : AveragedMode::ThetaZero;

  // cells x repetitions flattened; each task owns its stream family
  const int reps = grid.n_mc;
  const int n_cells = static_cast<int>(grid.deltas.size());
  std::vector<std::vector<double>> cell_errors(n_cells,
                                               std::vector<double>(reps, -1.0));
  parallel_for(n_cells * reps, grid.max_workers, [&](int task) {
    const int ci = task / reps;
    const int r = task % reps;
    SimConfig cfg = base_cfg;
    cfg.delta = grid.deltas[ci];
    cfg.epsilon = grid.eps_exponent > 0.0
                      ? std::pow(cfg.delta, grid.eps_exponent)
                      : 1.0;
    cfg.gamma = grid.gamma;
    cfg.theta = mode == AveragedMode::ThetaPositive ? std::max(base_cfg.theta, 0.5)
                                                    : 0.0;
    cfg.fast_substeps = 0;
    cfg.seed = base_cfg.seed + 7919ULL * r;
    try {
      const Trajectory full = simulate(bundle.coeffs, bundle.A1, bundle.A2, cfg);
      const Trajectory avg =
          integrate_averaged(bbar, bundle.coeffs, bundle.A1, cfg, mode);
      double acc = 0.0;
      for (int p = 0; p < cfg.n_particles; ++p) {
        double sup = 0.0;
        for (int k = 0; k < full.n_times(); ++k)
          sup = std::max(sup,
                         (full.X[k].col(p) - avg.X[k].col(p)).squaredNorm());
        acc += sup;
      }
      cell_errors[ci][r] = acc / cfg.n_particles;
    } catch (const DivergenceError&) {
      cell_errors[ci][r] = -2.0;  // cell failure marker
    }
  });

  for (int ci = 0; ci < n_cells; ++ci) {
    ErrorCell& cell = res.cells[ci];
    cell.delta = grid.deltas[ci];
    cell.epsilon = grid.eps_exponent > 0.0
                       ? std::pow(cell.delta, grid.eps_exponent)
                       : 1.0;
    cell.gamma = grid.gamma;
    cell.n_mc = reps;
    double s = 0.0;
    int n = 0;
    for (double e : cell_errors[ci]) {
      if (e < 0.0) {
        cell.failed = cell.failed || e == -2.0;
        continue;
      }
      s += e;
      ++n;
    }
    if (n == 0) {
      cell.failed = true;
      continue;
    }
    cell.err_mean = s / n;
    double var = 0.0;
    for (double e : cell_errors[ci])
      if (e >= 0.0) var += (e - cell.err_mean) * (e - cell.err_mean);
    cell.err_stderr = n > 1 ? std::sqrt(var / (n - 1) / n) : 0.0;
  }
  fit_slope(res);
  return res;
}

// ------------------------------------------------------------------
// LDP experiment

struct RateRow {
  std::string target_id;
  double rate = 0.0;
  double residual = 0.0;
  bool converged = false;
};

struct LdpResult {
  std::vector<RateRow> rates;
  std::vector<RareEventRow> probes;
};

inline LdpResult run_ldp_experiment(const ExperimentGrid& grid,
                                    const ModelBundle& bundle,
                                    const SimConfig& base_cfg) {
  const AssumptionReport rep =
      check_assumptions(bundle.coeffs, bundle.default_sampler, 2000);
  if (!rep.gate_passed)
    throw AssumptionGateError(
        "assumption gate failed: beta <= 2 L' on the sampled domain");
  const AveragedDriftFn bbar = averaged_drift_for(bundle, rep, base_cfg);

  SimConfig cfg = base_cfg;
  cfg.n_particles = 1;
  cfg.theta = 0.5;
  const Trajectory baseline =
      integrate_averaged(bbar, bundle.coeffs, bundle.A1, cfg,
                         AveragedMode::ThetaPositive);

  LdpResult out;
  // the baseline itself always appears as target 0 (I must be 0)
  {
    RateTarget t;
    std::vector<Vec> path;
    for (int k = 0; k < baseline.n_times(); ++k)
      path.push_back(baseline.X[k].col(0));
    t.path = std::move(path);
    const RateResult r = rate_function(t, baseline, bbar, bundle.coeffs,
                                       bundle.A1, cfg.dt);
    out.rates.push_back({"baseline", r.rate, r.residual, r.converged});
  }
  for (size_t i = 0; i < grid.endpoint_targets.size(); ++i) {
    RateTarget t;
    t.endpoint = grid.endpoint_targets[i];
    const RateResult r = rate_function(t, baseline, bbar, bundle.coeffs,
                                       bundle.A1, cfg.dt);
    out.rates.push_back({"endpoint_" + std::to_string(i), r.rate, r.residual,
                         r.converged});
  }
  if (grid.rare_event_mc > 0 && !grid.eps_list.empty()) {
    SimConfig pc = base_cfg;
    pc.theta = 0.5;
    out.probes = rare_event_probe(
        grid.eta, grid.eps_list,
        [&grid](double e) { return std::pow(e, grid.ldp_delta_exponent); },
        bundle.coeffs, bundle.A1, bundle.A2, pc, baseline, grid.rare_event_mc,
        grid.max_workers);
  }
  return out;
}

// ------------------------------------------------------------------
// report emission

inline void write_errors_csv(const ConvergenceResult& res, std::ostream& os) {
  os << "delta,epsilon,gamma,n_mc,err_mean,err_stderr\n";
  os.precision(17);
  for (const auto& c : res.cells) {
    if (c.failed) continue;
    os << c.delta << "," << c.epsilon << "," << c.gamma << "," << c.n_mc << ","
       << c.err_mean << "," << c.err_stderr << "\n";
  }
  if (res.slope_defined) os << "# slope," << res.slope << "\n";
}

inline void write_rates_csv(const LdpResult& res, std::ostream& os) {
  os << "target_id,I,residual,converged\n";
  os.precision(17);
  for (const auto& r : res.rates)
    os << r.target_id << "," << r.rate << "," << r.residual << ","
       << (r.converged ? 1 : 0) << "\n";
}

inline void write_svg_loglog(const ConvergenceResult& res, std::ostream& os,
                             bool deterministic) {
  const int W = 480, H = 360, M = 50;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
     << H << "'>\n";
  if (!deterministic)
    os << "<!-- generated "
       << std::chrono::duration_cast<std::chrono::seconds>(
              std::chrono::system_clock::now().time_since_epoch())
              .count()
       << " -->\n";
  std::vector<std::pair<double, double>> pts;
  for (const auto& c : res.cells)
    if (!c.failed && c.err_mean > 0)
      pts.push_back({std::log10(c.delta), std::log10(c.err_mean)});
  if (!pts.empty()) {
    double x0 = pts[0].first, x1 = x0, y0 = pts[0].second, y1 = y0;
    for (auto& [x, y] : pts) {
      x0 = std::min(x0, x); x1 = std::max(x1, x);
      y0 = std::min(y0, y); y1 = std::max(y1, y);
    }
    if (x1 - x0 < 1e-9) x1 = x0 + 1;
    if (y1 - y0 < 1e-9) y1 = y0 + 1;
    auto px = [&](double x) { return M + (x - x0) / (x1 - x0) * (W - 2 * M); };
    auto py = [&](double y) { return H - M - (y - y0) / (y1 - y0) * (H - 2 * M); };
    os << "<rect x='" << M << "' y='" << M << "' width='" << W - 2 * M
       << "' height='" << H - 2 * M << "' fill='none' stroke='black'/>\n";
    for (auto& [x, y] : pts)
      os << "<circle cx='" << px(x) << "' cy='" << py(y)
         << "' r='4' fill='steelblue'/>\n";
    if (res.slope_defined) {
      // fitted line through the point cloud centroid
      double cx = 0, cy = 0;
      for (auto& [x, y] : pts) { cx += x; cy += y; }
      cx /= pts.size();
      cy /= pts.size();
      const double ya = cy + res.slope * (x0 - cx);
      const double yb = cy + res.slope * (x1 - cx);
      os << "<line x1='" << px(x0) << "' y1='" << py(ya) << "' x2='" << px(x1)
         << "' y2='" << py(yb) << "' stroke='firebrick'/>\n";
      os << "<text x='" << M + 8 << "' y='" << M - 8 << "'>slope "
         << res.slope << "</text>\n";
    }
  } else {
    os << "<text x='" << M << "' y='" << H / 2 << "'>no data</text>\n";
  }
  os << "</svg>\n";
}

struct ReportFiles {
  std::string errors_csv, rates_csv, summary_json, plot_svg;
};

inline ReportFiles emit_report(const std::string& out_dir,
                               const ConvergenceResult* conv,
                               const LdpResult* ldp, RunRecord& record,
                               bool deterministic = false) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ReportFiles files;
  json summary;
  summary["hash"] = record.hash;
  summary["status"] = record.status;
  if (conv) {
    files.errors_csv = (fs::path(out_dir) / "errors.csv").string();
    std::ofstream os(files.errors_csv);
    write_errors_csv(*conv, os);
    record.outputs.push_back(files.errors_csv);
    if (!conv->cells.empty() &&
        std::any_of(conv->cells.begin(), conv->cells.end(),
                    [](const ErrorCell& c) { return !c.failed; })) {
      files.plot_svg = (fs::path(out_dir) / "plot.svg").string();
      std::ofstream svg(files.plot_svg);
      write_svg_loglog(*conv, svg, deterministic);
      record.outputs.push_back(files.plot_svg);
    } else {
      summary["note"] = "no data";
    }
    if (conv->slope_defined) {
      summary["slope"] = conv->slope;
      summary["fit_r2"] = conv->fit_r2;
    } else {
      summary["slope"] = nullptr;
    }
  }
  if (ldp) {
    files.rates_csv = (fs::path(out_dir) / "rates.csv").string();
    std::ofstream os(files.rates_csv);
    write_rates_csv(*ldp, os);
    record.outputs.push_back(files.rates_csv);
    json probes = json::array();
    for (const auto& p : ldp->probes)
      probes.push_back({{"eps", p.eps},
                        {"delta", p.delta},
                        {"n", p.n},
                        {"hits", p.hits},
                        {"p_hat", p.p_hat},
                        {"wilson_lo", p.wilson_lo},
                        {"wilson_hi", p.wilson_hi},
                        {"minus_eps_log_p",
                         std::isfinite(p.minus_eps_log_p)
                             ? json(p.minus_eps_log_p)
                             : json(nullptr)}});
    summary["rare_event_probes"] = probes;
  }
  files.summary_json = (fs::path(out_dir) / "summary.json").string();
  std::ofstream(files.summary_json) << summary.dump(2) << "\n";
  record.outputs.push_back(files.summary_json);
  return files;
}

}  // namespace msmv
