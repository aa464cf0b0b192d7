#pragma once

// Large-deviation toolkit. The skeleton equation drives the deterministic
// controlled path; the rate function is half the minimal squared L^2 norm of
// a control steering the skeleton to the target, minimized here by a
// quadratic-penalty method over piecewise-constant controls.

#include <cmath>
#include <optional>
#include <vector>

#include "msmv/averaging.hpp"

namespace msmv {

// piecewise-constant control on [0, T]: value column k applies on
// [t_k, t_{k+1}); components 0..d1-1 are the slow block, d1..d1+d2-1 the
// fast block
struct ControlPath {
  std::vector<double> times;  // K+1 edges
  Mat values;                 // (d1+d2) x K
  int d1 = 1;
  double bound_n = std::numeric_limits<double>::infinity();

  int cells() const { return static_cast<int>(values.cols()); }

  double l2_norm_sq() const {
    double s = 0.0;
    for (int k = 0; k < cells(); ++k)
      s += values.col(k).squaredNorm() * (times[k + 1] - times[k]);
    return s;
  }

  Vec slow_at(int k) const { return values.col(k).head(d1); }
  Vec fast_at(int k) const { return values.col(k).tail(values.rows() - d1); }

  static ControlPath zero(double T, int K, int d1, int d2) {
    ControlPath h;
    h.d1 = d1;
    h.values = Mat::Zero(d1 + d2, K);
    h.times.resize(K + 1);
    for (int k = 0; k <= K; ++k) h.times[k] = T * k / K;
    return h;
  }

  void check_bound() const {
    if (l2_norm_sq() > bound_n + 1e-12)
      throw std::invalid_argument("control exceeds its declared L2 bound");
  }

  void write_csv(std::ostream& os) const {
    os << "t";
    for (int i = 0; i < values.rows(); ++i) os << ",h" << i;
    os << "\n";
    for (int k = 0; k < cells(); ++k) {
      os << times[k];
      for (int i = 0; i < values.rows(); ++i) os << "," << values(i, k);
      os << "\n";
    }
  }
};

// deterministic resolvent-Euler path of
//   dXbar^h in -A1 dt + bbar1(Xbar^h, D_{Xbar^0_t}) dt
//            + sigma1(Xbar^h, D_{Xbar^0_t}) pi_1 h(t) dt.
// With h = 0 this reproduces the baseline bitwise on a shared grid.
inline Trajectory solve_skeleton(const ControlPath& h,
                                 const Trajectory& baseline,
                                 const AveragedDriftFn& bbar,
                                 const CoefficientSet& coeffs,
                                 const MonotoneOperator& A1, double dt) {
  if (!coeffs.sigma1_y_independent)
    throw std::invalid_argument("skeleton requires sigma1 independent of y");
  const int K = baseline.n_times() - 1;
  if (h.cells() != K)
    throw std::invalid_argument("control grid must match the baseline grid");
  const Vec ydummy = Vec::Zero(std::max(1, coeffs.m));

  Trajectory traj;
  Vec x = baseline.X[0].col(0);
  traj.times.push_back(0.0);
  traj.X.push_back(x);
  for (int k = 0; k < K; ++k) {
    const ParticleCloud dirac = ParticleCloud::dirac(baseline.X[k].col(0));
    Vec pred = x + dt * bbar(x, dirac);
    const Vec hs = h.slow_at(k);
    if (hs.squaredNorm() != 0.0)
      pred += dt * (coeffs.sigma1(x, dirac, ydummy) * hs);
    x = A1.resolvent(dt, pred).point;
    traj.times.push_back(baseline.times[k + 1]);
    traj.X.push_back(x);
  }
  return traj;
}

struct RateTarget {
  std::optional<Vec> endpoint;              // hit z at time T
  std::optional<std::vector<Vec>> path;     // match a full path on the grid
};

struct PenaltySettings {
  double initial_penalty = 10.0;
  int max_outer = 12;
  int max_inner = 400;
  double residual_tol = 1e-3;
  double fd_step = 1e-5;  // relative
};

struct RateResult {
  double rate = 0.0;  // I = l2_norm_sq / 2 of the returned control
  ControlPath control;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool infeasible = false;
};

namespace detail {

inline double skeleton_residual(const Trajectory& xh, const RateTarget& target) {
  if (target.endpoint)
    return (xh.X.back().col(0) - *target.endpoint).norm();
  const auto& path = *target.path;
  double sup = 0.0;
  for (int k = 0; k < xh.n_times(); ++k)
    sup = std::max(sup, (xh.X[k].col(0) - path[k]).norm());
  return sup;
}

}  // namespace detail

// iterated quadratic-penalty descent with finite-difference gradients over
// the slow block of a piecewise-constant control
inline RateResult rate_function(const RateTarget& target,
                                const Trajectory& baseline,
                                const AveragedDriftFn& bbar,
                                const CoefficientSet& coeffs,
                                const MonotoneOperator& A1, double dt,
                                const PenaltySettings& ps = {}) {
  if (target.endpoint && static_cast<int>(target.endpoint->size()) != coeffs.n)
    throw std::invalid_argument("rate_function: target dimension mismatch");
  const int K = baseline.n_times() - 1;
  ControlPath h = ControlPath::zero(baseline.times.back(), K, coeffs.d1, coeffs.d2);

  auto residual_of = [&](const ControlPath& hh) {
    return detail::skeleton_residual(
        solve_skeleton(hh, baseline, bbar, coeffs, A1, dt), target);
  };

  const int dim = K * coeffs.d1;
  auto get = [&](const ControlPath& hh, int idx) {
    return hh.values(idx % coeffs.d1, idx / coeffs.d1);
  };
  auto add = [&](ControlPath& hh, int idx, double v) {
    hh.values(idx % coeffs.d1, idx / coeffs.d1) += v;
  };

  double penalty = ps.initial_penalty;
  int total_iter = 0;
  double res = residual_of(h);

  for (int outer = 0; outer < ps.max_outer; ++outer) {
    auto objective = [&](const ControlPath& hh) {
      const double r = residual_of(hh);
      return 0.5 * hh.l2_norm_sq() + penalty * r * r;
    };
    double f = objective(h);
    double step = 0.5 / penalty;
    for (int inner = 0; inner < ps.max_inner; ++inner) {
      ++total_iter;
      // central finite-difference gradient
      Vec grad(dim);
      for (int idx = 0; idx < dim; ++idx) {
        const double eps = ps.fd_step * (1.0 + std::abs(get(h, idx)));
        ControlPath hp = h, hm = h;
        add(hp, idx, eps);
        add(hm, idx, -eps);
        grad[idx] = (objective(hp) - objective(hm)) / (2.0 * eps);
      }
      const double gn = grad.norm();
      if (gn < 1e-10) break;
      // backtracking line search
      double s = step;
      ControlPath trial = h;
      double ftrial = f;
      bool improved = false;
      for (int bt = 0; bt < 30; ++bt) {
        trial = h;
        for (int idx = 0; idx < dim; ++idx) add(trial, idx, -s * grad[idx]);
        ftrial = objective(trial);
        if (ftrial < f - 1e-14) {
          improved = true;
          break;
        }
        s *= 0.5;
      }
      if (!improved) break;
      h = trial;
      step = std::min(2.0 * s, 1e3);
      if (f - ftrial < 1e-14 * (1.0 + std::abs(f))) {
        f = ftrial;
        break;
      }
      f = ftrial;
    }
    res = residual_of(h);
    if (res <= ps.residual_tol) break;
    penalty *= 2.0;
  }

  RateResult out;
  out.control = h;
  out.residual = res;
  out.iterations = total_iter;
  out.converged = res <= ps.residual_tol;
  out.infeasible = !out.converged;
  out.rate = out.infeasible ? std::numeric_limits<double>::infinity()
                            : 0.5 * h.l2_norm_sq();
  return out;
}

// ------------------------------------------------------------------
// controlled slow-fast simulation: drift gains sigma1 pi_1 u on the slow
// equation and sigma2 pi_2 u / sqrt(delta eps) on the fast one; the law
// input is the cloud sequence of an uncontrolled companion run.
inline Trajectory simulate_controlled(const ControlPath& u,
                                      const CoefficientSet& coeffs,
                                      const MonotoneOperator& A1,
                                      const MonotoneOperator& A2,
                                      const SimConfig& cfg,
                                      const Trajectory& companion,
                                      int workers = 1) {
  if (!coeffs.sigma2_bounded)
    throw std::invalid_argument(
        "simulate_controlled refused: sigma2 boundedness gate not satisfied");
  u.check_bound();
  const int K = cfg.n_steps();
  if (u.cells() != K || companion.n_times() != K + 1)
    throw std::invalid_argument("control / companion grid mismatch");
  std::vector<ParticleCloud> law;
  law.reserve(K);
  for (int k = 0; k < K; ++k) law.emplace_back(companion.X[k]);

  const double fast_ctrl_scale = 1.0 / std::sqrt(cfg.delta * cfg.epsilon);
  StepHooks hooks;
  hooks.law_sequence = &law;
  hooks.slow_extra = [&u, &coeffs, &cfg](double t, const Vec& x,
                                         const ParticleCloud& mu, const Vec& y) {
    const int k = std::min(u.cells() - 1, static_cast<int>(t / cfg.dt + 0.5));
    return Vec(coeffs.sigma1(x, mu, y) * u.slow_at(k));
  };
  hooks.fast_extra = [&u, &coeffs, &cfg, fast_ctrl_scale](
                         double t, const Vec& x, const ParticleCloud& mu,
                         const Vec& y) {
    const int k = std::min(u.cells() - 1, static_cast<int>(t / cfg.dt + 0.5));
    return Vec(fast_ctrl_scale * (coeffs.sigma2(x, mu, y) * u.fast_at(k)));
  };
  const bool trivial = u.l2_norm_sq() == 0.0;
  return simulate(coeffs, A1, A2, cfg, workers, trivial ? StepHooks{} : hooks);
}

// ------------------------------------------------------------------
// weak continuity probe: oscillatory perturbations h + A sin(w_k t) converge
// weakly but not strongly to h; the skeleton output gap should shrink
struct WeakContinuityRow {
  double omega;
  double sup_gap;
};

inline std::vector<WeakContinuityRow> weak_continuity_check(
    const ControlPath& h, double amplitude, const std::vector<double>& omegas,
    const Trajectory& baseline, const AveragedDriftFn& bbar,
    const CoefficientSet& coeffs, const MonotoneOperator& A1, double dt) {
  const Trajectory ref = solve_skeleton(h, baseline, bbar, coeffs, A1, dt);
  std::vector<WeakContinuityRow> rows;
  for (double w : omegas) {
    ControlPath hk = h;
    for (int k = 0; k < hk.cells(); ++k) {
      const double tmid = 0.5 * (hk.times[k] + hk.times[k + 1]);
      for (int i = 0; i < hk.d1; ++i)
        hk.values(i, k) += amplitude * std::sin(w * tmid);
    }
    const Trajectory xk = solve_skeleton(hk, baseline, bbar, coeffs, A1, dt);
    double sup = 0.0;
    for (int k = 0; k < xk.n_times(); ++k)
      sup = std::max(sup, (xk.X[k].col(0) - ref.X[k].col(0)).norm());
    rows.push_back({w, sup});
  }
  return rows;
}

// ------------------------------------------------------------------
// rare-event probe: P(sup_t |X^{eps,delta} - Xbar^0| > eta) per eps,
// with Wilson confidence intervals
struct RareEventRow {
  double eps = 0.0;
  double delta = 0.0;
  int n = 0;
  int hits = 0;
  double p_hat = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  double minus_eps_log_p = std::numeric_limits<double>::infinity();
};

inline std::vector<RareEventRow> rare_event_probe(
    double eta, const std::vector<double>& eps_schedule,
    const std::function<double(double)>& delta_of_eps,
    const CoefficientSet& coeffs, const MonotoneOperator& A1,
    const MonotoneOperator& A2, SimConfig cfg, const Trajectory& baseline,
    int n_mc, int workers = 1) {
  if (n_mc < 1000)
    throw std::invalid_argument("rare_event_probe: n_mc >= 1000 required");
  std::vector<RareEventRow> rows;
  for (double eps : eps_schedule) {
    SimConfig c = cfg;
    c.epsilon = eps;
    c.delta = delta_of_eps(eps);
    c.fast_substeps = 0;
    const int reps = (n_mc + c.n_particles - 1) / c.n_particles;
    int hits = 0, n = 0;
    for (int r = 0; r < reps; ++r) {
      c.seed = cfg.seed + 1000003ULL * r;
      const Trajectory traj = simulate(coeffs, A1, A2, c, workers);
      for (int p = 0; p < traj.n_particles(); ++p) {
        double sup = 0.0;
        for (int k = 0; k < traj.n_times(); ++k)
          sup = std::max(sup,
                         (traj.X[k].col(p) - baseline.X[k].col(0)).norm());
        if (sup > eta) ++hits;
        ++n;
      }
    }
    RareEventRow row;
    row.eps = eps;
    row.delta = c.delta;
    row.n = n;
    row.hits = hits;
    row.p_hat = static_cast<double>(hits) / n;
    const double z = 1.959963984540054;
    const double ph = row.p_hat, z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (ph + z2 / (2.0 * n)) / denom;
    const double half =
        z * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
    row.wilson_lo = std::max(0.0, center - half);
    row.wilson_hi = std::min(1.0, center + half);
    if (hits > 0) row.minus_eps_log_p = -eps * std::log(row.p_hat);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace msmv
