#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <iostream>
#include <numeric>
#include <sstream>

#include "msmv/harness.hpp"

using namespace msmv;

namespace {

class Verdict {
 public:
  Verdict(int id, const char* title)
      : id_(id), title_(title), start_(std::chrono::steady_clock::now()) {}

  void note(bool ok) { ok_ = ok_ && ok; }

  ~Verdict() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    std::ostringstream os;
    os.precision(3);
    os << "[acceptance] criterion " << id_ << " (" << title_
       << "): " << (ok_ ? "PASS" : "FAIL") << " [" << secs << " s]";
    std::cout << os.str() << std::endl;
  }

  bool ok() const { return ok_; }

 private:
  int id_;
  const char* title_;
  bool ok_ = true;
  std::chrono::steady_clock::time_point start_;
};

Vec v1(double a) { return Vec::Constant(1, a); }

Vec rand_vec(int dim, std::uint64_t seed, std::uint64_t i, std::uint64_t slot,
             double box = 5.0) {
  Vec x(dim);
  for (int k = 0; k < dim; ++k)
    x[k] = box * (2.0 * uniform(seed, NoiseRole::Aux, i, slot, k) - 1.0);
  return x;
}

// exhaustive-assignment W2 for small equal-count clouds
double w2_brute(const ParticleCloud& a, const ParticleCloud& b) {
  const int n = a.count();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += (a.point(i) - b.point(perm[i])).squaredNorm();
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / n);
}

// triangle with vertices (0,1), (1,-1), (-1,-1)
ConvexSet triangle() {
  Vec n1(2), n2(2), n3(2);
  n1 << 0.0, -1.0;
  n2 << 2.0, 1.0;
  n3 << -2.0, 1.0;
  Vec interior = Vec::Zero(2);
  return ConvexSet::polytope({{n1, 1.0}, {n2, 1.0}, {n3, 1.0}}, interior);
}

ErgodicSettings ou_settings(double beta) {
  ErgodicSettings es;
  es.alpha_est = 2.0 * beta;
  es.beta_est = 2.0 * beta;
  es.dt_f = std::min(0.01, 1.0 / (10.0 * 2.0 * beta));
  es.seed = 42;
  return es;
}

// flat 1-D slow dynamics (no drift, constant sigma1) over a dissipative fast
// equation; closed-form rate function z^2 / (2 s^2 T)
CoefficientSet flat_coeffs(double s) {
  CoefficientSet c;
  c.b1 = [](const Vec& x, const ParticleCloud&, const Vec&) {
    return Vec(Vec::Zero(x.size()));
  };
  c.sigma1 = [s](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Constant(1, 1, s));
  };
  c.b2 = [](const Vec&, const ParticleCloud&, const Vec& y) {
    return Vec(-2.0 * y);
  };
  c.sigma2 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Constant(1, 1, 1.0));
  };
  c.sigma1_y_independent = true;
  c.sigma2_bounded = true;
  return c;
}

const AveragedDriftFn kZeroDrift = [](const Vec& x, const ParticleCloud&) {
  return Vec(Vec::Zero(x.size()));
};

}  // namespace

TEST_CASE("criterion 1: monotone operator property suite") {
  Verdict verdict(1, "monotone suite, zero violations at 1e-10");
  // operators with exact resolvents; soft-thresholding realizes the
  // subdifferential of |.| in closed form
  std::vector<MonotoneOperator> ops;
  ops.push_back(MonotoneOperator::zero(2));
  ops.push_back(MonotoneOperator::indicator(
      ConvexSet::box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0))));
  ops.push_back(
      MonotoneOperator::indicator(ConvexSet::ball(Vec::Zero(2), 1.5)));
  ops.push_back(MonotoneOperator::indicator(
      ConvexSet::halfspace((Vec(2) << 1.0, 1.0).finished(), 0.5)));
  ops.push_back(MonotoneOperator::indicator(triangle()));
  ops.push_back(MonotoneOperator::custom(
      [](double lambda, const Vec& x) {
        Vec j(x.size());
        for (int i = 0; i < x.size(); ++i)
          j[i] = std::max(0.0, std::abs(x[i]) - lambda) *
                 (x[i] >= 0.0 ? 1.0 : -1.0);
        return j;
      },
      2));

  const int n_samples = 1000;
  const double tol = 1e-10;
  int violations = 0;
  for (size_t oi = 0; oi < ops.size(); ++oi) {
    const auto& op = ops[oi];
    for (int i = 0; i < n_samples; ++i) {
      const Vec x = rand_vec(2, 17 + oi, i, 0);
      const Vec y = rand_vec(2, 17 + oi, i, 1);
      for (double lam : {0.1, 1.0}) {
        const Vec jx = op.resolvent(lam, x).point;
        const Vec jy = op.resolvent(lam, y).point;
        // nonexpansiveness
        if ((jx - jy).norm() > (x - y).norm() + tol) ++violations;
        // resolvent identity J_mu(mu/lam x + (1 - mu/lam) J_lam x) = J_lam x
        const double mu = 0.5 * lam;
        const Vec mixed = (mu / lam) * x + (1.0 - mu / lam) * jx;
        if ((op.resolvent(mu, mixed).point - jx).norm() > tol) ++violations;
        // Yosida monotonicity
        const Vec ax = op.yosida(lam, x), ay = op.yosida(lam, y);
        if ((ax - ay).dot(x - y) < -tol) ++violations;
      }
      // projection idempotence for indicator variants
      if (op.is_indicator()) {
        const Vec px = op.resolvent(1.0, x).point;
        if ((op.resolvent(1.0, px).point - px).norm() > tol) ++violations;
      }
    }
  }
  verdict.note(violations == 0);
  CHECK(violations == 0);
}

TEST_CASE("criterion 2: W2 matches exhaustive assignment") {
  Verdict verdict(2, "W2 oracle equivalence on clouds of count <= 8");
  int violations = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 2 + static_cast<int>(uniform(31, NoiseRole::Aux, inst, 0, 0) * 7) % 7;
    const int dim = 1 + inst % 3;
    Mat pa(dim, n), pb(dim, n);
    for (int j = 0; j < n; ++j) {
      pa.col(j) = rand_vec(dim, 33, inst, 2 * j, 3.0);
      pb.col(j) = rand_vec(dim, 33, inst, 2 * j + 1, 3.0);
    }
    const ParticleCloud a(pa), b(pb);
    const double brute = w2_brute(a, b);
    if (std::abs(w2_distance(a, b) - brute) > 1e-9) ++violations;
  }
  verdict.note(violations == 0);
  CHECK(violations == 0);
}

TEST_CASE("criterion 3: strong order against an exact linear SDE") {
  Verdict verdict(3, "strong-order slope in [0.35, 0.65]");
  // dX = -a X dt + s X dW has the exact endpoint
  // x0 exp((-a - s^2/2) T + s W_T); W_T rebuilt from the same noise keys
  const double a = 1.0, s = 0.5, T = 1.0;
  CoefficientSet c;
  c.b1 = [a](const Vec& x, const ParticleCloud&, const Vec&) {
    return Vec(-a * x);
  };
  c.sigma1 = [s](const Vec& x, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Constant(1, 1, s * x[0]));
  };
  c.b2 = [](const Vec&, const ParticleCloud&, const Vec& y) {
    return Vec(-2.0 * y);
  };
  c.sigma2 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Zero(1, 1));
  };
  c.sigma1_y_independent = true;

  SimConfig cfg;
  cfg.T = T;
  cfg.delta = 1.0;
  cfg.epsilon = 1.0;
  cfg.theta = 0.0;
  cfg.n_particles = 300;
  cfg.x0 = v1(1.0);
  cfg.y0 = v1(0.0);
  cfg.seed = 71;

  std::vector<double> dts, errs;
  for (int p = 6; p <= 12; ++p) {
    cfg.dt = std::pow(2.0, -p);
    const Trajectory traj =
        simulate(c, MonotoneOperator::zero(1), MonotoneOperator::zero(1), cfg, 8);
    const int K = cfg.n_steps();
    double mse = 0.0;
    for (int i = 0; i < cfg.n_particles; ++i) {
      double wt = 0.0;
      for (int k = 0; k < K; ++k)
        wt += std::sqrt(cfg.dt) * gaussian(cfg.seed, NoiseRole::Slow, i, k, 0);
      const double exact = std::exp((-a - 0.5 * s * s) * T + s * wt);
      const double diff = traj.X.back()(0, i) - exact;
      mse += diff * diff;
    }
    dts.push_back(cfg.dt);
    errs.push_back(std::sqrt(mse / cfg.n_particles));
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(dts.size());
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(dts[i]), ly = std::log(errs[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  verdict.note(slope >= 0.35 && slope <= 0.65);
  CHECK(slope >= 0.35);
  CHECK(slope <= 0.65);
}

TEST_CASE("criterion 4: constraint invariance and K complementarity") {
  Verdict verdict(4, "indicator domains invariant over 1e5 steps");
  std::vector<ConvexSet> sets;
  sets.push_back(ConvexSet::box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)));
  sets.push_back(ConvexSet::ball(Vec::Zero(2), 1.0));
  sets.push_back(triangle());

  CoefficientSet c;
  c.n = 2;
  c.m = 1;
  c.d1 = 2;
  c.d2 = 1;
  // outward drift plus noise so the predictor keeps leaving the domain
  c.b1 = [](const Vec& x, const ParticleCloud&, const Vec&) {
    return Vec(3.0 * x + Vec::Constant(2, 0.5));
  };
  c.sigma1 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(0.25 * Mat::Identity(2, 2));
  };
  c.b2 = [](const Vec&, const ParticleCloud&, const Vec& y) {
    return Vec(-2.0 * y);
  };
  c.sigma2 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat(Mat::Constant(1, 1, 0.5));
  };
  c.sigma1_y_independent = true;

  SimConfig cfg;
  cfg.T = 100.0;
  cfg.dt = 1e-3;
  cfg.delta = 1.0;
  cfg.n_particles = 1;
  cfg.x0 = Vec::Zero(2);
  cfg.y0 = v1(0.0);
  cfg.seed = 99;

  int membership_violations = 0;
  int complementarity_violations = 0;
  for (const auto& set : sets) {
    const MonotoneOperator A1 = MonotoneOperator::indicator(set);
    const Trajectory traj =
        simulate(c, A1, MonotoneOperator::zero(1), cfg);
    for (int k = 0; k < traj.n_times(); ++k) {
      if (!set.contains(traj.X[k].col(0), 1e-10)) ++membership_violations;
      if (k == 0) continue;
      const double inc = traj.k1_var[k][0] - traj.k1_var[k - 1][0];
      if (inc < -1e-14) ++complementarity_violations;  // K must be monotone
      // a positive increment means the predictor exited and was projected
      // back, so the state must sit on the boundary
      if (inc > 1e-12 && std::abs(set.violation(traj.X[k].col(0))) > 1e-8)
        ++complementarity_violations;
    }
  }
  verdict.note(membership_violations == 0 && complementarity_violations == 0);
  CHECK(membership_violations == 0);
  CHECK(complementarity_violations == 0);
}

TEST_CASE("criterion 5: frozen OU ergodics") {
  Verdict verdict(5, "invariant variance 0.25 and mixing rate 4");
  const double beta = 2.0;
  auto bundle = make_ou_frozen({.beta = beta, .gain_x = 0.0, .shift = 0.0,
                                .s2 = 1.0});
  auto es = ou_settings(beta);
  const Vec x = v1(0.0);
  const ParticleCloud mu = ParticleCloud::dirac(x);

  const auto inv =
      estimate_invariant(x, mu, bundle.coeffs, bundle.A2, es, v1(0.0));
  const double var =
      inv.cloud.second_moment() - inv.cloud.mean().squaredNorm();
  const bool var_ok =
      std::abs(var - 0.25) < 3.0 * std::max(inv.variance_stderr, 0.01);

  const auto fit = mixing_decay_fit(x, mu, v1(2.0), bundle.coeffs, bundle.A2,
                                    es, Vec::Zero(1));
  const bool rate_ok = std::abs(fit.rate - 2.0 * beta) < 0.2 * 2.0 * beta;
  const bool r2_ok = fit.r2 >= 0.9;

  verdict.note(var_ok && rate_ok && r2_ok);
  CHECK(var_ok);
  CHECK(rate_ok);
  CHECK(r2_ok);
}

TEST_CASE("criterion 6: averaged drift oracle at five anchors") {
  Verdict verdict(6, "bbar1 = g / beta within 3 stderr");
  const double beta = 2.0, g = 0.6;
  auto bundle = make_ou_frozen({.beta = beta, .gain_x = 0.0, .shift = g,
                                .s2 = 1.0});
  auto es = ou_settings(beta);
  bool all_ok = true;
  for (double anchor : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    const Vec x = v1(anchor);
    const auto d = averaged_drift(x, ParticleCloud::dirac(x), bundle.coeffs,
                                  bundle.A2, es, v1(0.0));
    const bool ok =
        std::abs(d.value[0] - g / beta) < 3.0 * std::max(d.stderr_, 1e-3);
    all_ok = all_ok && ok;
    CHECK(ok);
  }
  verdict.note(all_ok);
}

TEST_CASE("criterion 7: averaging convergence on the constrained linear model") {
  Verdict verdict(7, "errors decrease in delta, slope >= 0.2");
  LinearTestParams p;
  p.constrained = true;
  p.bound = 1.0;
  p.theta = 0.5;
  auto bundle = make_linear_test(p);

  ExperimentGrid grid;
  grid.kind = GridKind::AvgThetaPos;
  grid.deltas = {1e-1, 1e-2, 1e-3, 1e-4};
  grid.eps_exponent = 0.5;  // eps = sqrt(delta)
  grid.gamma = 0.5;
  grid.n_mc = 32;
  grid.max_workers = 8;

  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 0.01;
  cfg.theta = 0.5;
  cfg.n_particles = 256;
  cfg.x0 = v1(0.5);
  cfg.y0 = v1(0.0);
  cfg.seed = 2024;

  const auto res = run_convergence_experiment(grid, bundle, cfg);
  bool decreasing = true;
  for (size_t i = 0; i + 1 < res.cells.size(); ++i) {
    const auto& a = res.cells[i];
    const auto& b = res.cells[i + 1];
    if (a.failed || b.failed ||
        b.err_mean >= a.err_mean - 2.0 * (a.err_stderr + b.err_stderr))
      decreasing = false;
  }
  verdict.note(decreasing && res.slope_defined && res.slope >= 0.2);
  CHECK(decreasing);
  REQUIRE(res.slope_defined);
  CHECK(res.slope >= 0.2);
}

TEST_CASE("criterion 8: Picard contraction") {
  Verdict verdict(8, "iterate gaps contract; decoupled model in 2 passes");
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 0.01;
  cfg.delta = 0.1;
  cfg.n_particles = 32;
  cfg.x0 = v1(0.5);
  cfg.y0 = v1(0.0);
  cfg.seed = 5;

  auto coupled = make_linear_test({});
  const auto res =
      picard_solve(coupled.coeffs, coupled.A1, coupled.A2, cfg, 20, 1e-10);
  bool contracting = res.converged && res.gaps.size() >= 2;
  for (size_t l = 1; l + 1 < res.gaps.size(); ++l)
    if (res.gaps[l + 1] >= res.gaps[l]) contracting = false;

  LinearTestParams dp;
  dp.c = 0.0;  // slow equation no longer sees the fast variable
  auto decoupled = make_linear_test(dp);
  const auto res2 =
      picard_solve(decoupled.coeffs, decoupled.A1, decoupled.A2, cfg, 20, 1e-10);
  const bool two_pass = res2.converged && res2.gaps.size() == 2;

  verdict.note(contracting && two_pass);
  CHECK(contracting);
  CHECK(two_pass);
}

TEST_CASE("criterion 9: rate function closed form and bitwise consistencies") {
  Verdict verdict(9, "I = z^2 / (2 s^2 T) within 2%; bitwise baselines");
  const double s = 0.7, z = 0.5, T = 1.0;
  auto c = flat_coeffs(s);
  SimConfig cfg;
  cfg.T = T;
  cfg.dt = 0.05;
  cfg.delta = 0.05;
  cfg.n_particles = 1;
  cfg.theta = 0.5;
  cfg.x0 = v1(0.5);
  cfg.y0 = v1(0.0);
  cfg.seed = 7;

  const MonotoneOperator A1 = MonotoneOperator::zero(1);
  const Trajectory baseline =
      integrate_averaged(kZeroDrift, c, A1, cfg, AveragedMode::ThetaPositive);

  // zero-control skeleton reproduces the baseline bitwise
  ControlPath h0 = ControlPath::zero(T, cfg.n_steps(), 1, 1);
  const Trajectory x0traj = solve_skeleton(h0, baseline, kZeroDrift, c, A1, cfg.dt);
  bool bitwise = true;
  for (int k = 0; k < baseline.n_times(); ++k)
    if (!(x0traj.X[k].col(0).array() == baseline.X[k].col(0).array()).all())
      bitwise = false;

  // the baseline path itself costs exactly zero
  RateTarget self;
  std::vector<Vec> path;
  for (int k = 0; k < baseline.n_times(); ++k)
    path.push_back(baseline.X[k].col(0));
  self.path = std::move(path);
  const RateResult rself = rate_function(self, baseline, kZeroDrift, c, A1, cfg.dt);
  const bool self_zero = rself.converged && rself.rate == 0.0;

  // endpoint oracle
  RateTarget tgt;
  tgt.endpoint = v1(0.5 + z);
  const RateResult r = rate_function(tgt, baseline, kZeroDrift, c, A1, cfg.dt);
  const double analytic = z * z / (2.0 * s * s * T);
  const bool oracle_ok =
      r.converged && std::abs(r.rate - analytic) <= 0.02 * analytic;

  verdict.note(bitwise && self_zero && oracle_ok);
  CHECK(bitwise);
  CHECK(self_zero);
  CHECK(oracle_ok);
}

TEST_CASE("criterion 10: weak continuity of the skeleton map") {
  Verdict verdict(10, "oscillatory gaps shrink, final < 10% of initial");
  const double T = 1.0;
  auto c = flat_coeffs(0.7);
  SimConfig cfg;
  cfg.T = T;
  cfg.dt = 1.0 / 4096.0;
  cfg.delta = 0.05;
  cfg.n_particles = 1;
  cfg.theta = 0.5;
  cfg.x0 = v1(0.0);
  cfg.y0 = v1(0.0);
  cfg.seed = 11;
  const MonotoneOperator A1 = MonotoneOperator::zero(1);
  const Trajectory baseline =
      integrate_averaged(kZeroDrift, c, A1, cfg, AveragedMode::ThetaPositive);

  ControlPath h = ControlPath::zero(T, cfg.n_steps(), 1, 1);
  for (int k = 0; k < h.cells(); ++k) h.values(0, k) = 1.0;
  std::vector<double> omegas;
  for (int k = 1; k <= 8; ++k)
    omegas.push_back(std::pow(2.0, k) * M_PI / T);
  const auto rows =
      weak_continuity_check(h, 1.0, omegas, baseline, kZeroDrift, c, A1, cfg.dt);

  bool shrinking = true;
  for (size_t k = 4; k < rows.size(); ++k)
    if (rows[k].sup_gap >= rows[k - 1].sup_gap) shrinking = false;
  const bool final_small = rows.back().sup_gap < 0.1 * rows.front().sup_gap;

  verdict.note(shrinking && final_small);
  CHECK(shrinking);
  CHECK(final_small);
}

TEST_CASE("criterion 11: rare-event probability vs rate function"
          * doctest::skip(true)) {
  Verdict verdict(11, "-eps log p within factor 2 of I at eps = 0.1");
  auto bundle = make_linear_test({});
  const double eps = 0.1, eta = 0.3, T = 1.0;

  SimConfig cfg;
  cfg.T = T;
  cfg.dt = 0.01;
  cfg.n_particles = 100;
  cfg.theta = 0.5;
  cfg.x0 = v1(0.0);
  cfg.y0 = v1(0.0);
  cfg.seed = 2718;

  SimConfig bcfg = cfg;
  bcfg.n_particles = 1;
  bcfg.delta = 0.05;
  const Trajectory baseline =
      integrate_averaged(bundle.analytic_averaged_drift, bundle.coeffs,
                         bundle.A1, bcfg, AveragedMode::ThetaPositive);

  // rate of reaching the eta-shell at time T, our proxy for tube exit
  RateTarget tgt;
  tgt.endpoint = v1(baseline.X.back()(0, 0) + eta);
  const RateResult r =
      rate_function(tgt, baseline, bundle.analytic_averaged_drift,
                    bundle.coeffs, bundle.A1, bcfg.dt);
  REQUIRE(r.converged);

  const auto rows = rare_event_probe(
      eta, {eps}, [](double e) { return std::pow(e, 1.5); }, bundle.coeffs,
      bundle.A1, bundle.A2, cfg, baseline, 10000, 8);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].hits > 0);
  const double estimate = rows[0].minus_eps_log_p;
  const bool ok = estimate > 0.5 * r.rate && estimate < 2.0 * r.rate;
  verdict.note(ok);
  CHECK(ok);
}

TEST_CASE("criterion 12: byte-identical errors.csv across worker counts") {
  Verdict verdict(12, "converge run deterministic at 1 vs 8 workers");
  auto bundle = make_linear_test({});
  ExperimentGrid grid;
  grid.kind = GridKind::AvgThetaZero;
  grid.deltas = {1e-1, 1e-2, 1e-3};
  grid.n_mc = 8;

  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 0.01;
  cfg.n_particles = 32;
  cfg.x0 = v1(0.5);
  cfg.y0 = v1(0.0);
  cfg.seed = 13;

  grid.max_workers = 1;
  const auto res1 = run_convergence_experiment(grid, bundle, cfg);
  grid.max_workers = 8;
  const auto res8 = run_convergence_experiment(grid, bundle, cfg);
  std::ostringstream s1, s8;
  write_errors_csv(res1, s1);
  write_errors_csv(res8, s8);
  const bool ok = s1.str() == s8.str();
  verdict.note(ok);
  CHECK(ok);
}
