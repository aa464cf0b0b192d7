#pragma once

// Time stepping for the coupled slow-fast multivalued McKean-Vlasov particle
// system. Scheme: explicit Euler predictor followed by the resolvent of the
// monotone operator; the resolvent residual accumulates into the
// bounded-variation part K. Fast variable is sub-cycled before the slow
// update, both seeing the start-of-step empirical cloud.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "msmv/model.hpp"
#include "msmv/parallel.hpp"
#include "msmv/rng.hpp"

namespace msmv {

struct SimConfig {
  double T = 1.0;
  double dt = 1e-2;
  double epsilon = 1.0;
  double delta = 1e-1;
  double theta = 0.0;
  double gamma = 0.5;  // Khasminskii block is delta^gamma
  int n_particles = 512;
  Vec x0, y0;
  int fast_substeps = 0;  // 0 = auto: ceil(10 dt / delta)
  std::uint64_t seed = 0;

  double block_length() const { return std::pow(delta, gamma); }

  int effective_fast_substeps() const {
    if (fast_substeps > 0) return fast_substeps;
    return std::max(1, static_cast<int>(std::ceil(10.0 * dt / delta)));
  }

  int n_steps() const {
    return std::max(1, static_cast<int>(std::llround(T / dt)));
  }

  void validate() const {
    if (!(dt > 0.0 && dt <= T)) throw std::invalid_argument("need 0 < dt <= T");
    if (!(delta > 0.0)) throw std::invalid_argument("need delta > 0");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("need gamma in (0,1)");
    const double block = block_length();
    if (block < dt - 1e-12 || block > T + 1e-12)
      throw std::invalid_argument("Khasminskii block delta^gamma must lie in [dt, T]");
    const double hf = dt / effective_fast_substeps();
    if (hf > delta / 10.0 + 1e-15)
      throw std::invalid_argument("fast effective step must be <= delta/10");
    if (x0.size() == 0 || y0.size() == 0)
      throw std::invalid_argument("x0 and y0 must be set");
  }
};

struct SlowFastEnsemble {
  double t = 0.0;
  Mat X;  // n x N
  Mat Y;  // m x N
  Vec k1_var, k2_var;  // accumulated total variation per particle

  ParticleCloud cloud() const { return ParticleCloud(X); }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Mat> X;  // per-time n x N
  std::vector<Mat> Y;
  std::vector<Vec> k1_var, k2_var;
  std::uint64_t seed = 0;

  int n_times() const { return static_cast<int>(times.size()); }
  int n_particles() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }

  void push(const SlowFastEnsemble& e) {
    times.push_back(e.t);
    X.push_back(e.X);
    Y.push_back(e.Y);
    k1_var.push_back(e.k1_var);
    k2_var.push_back(e.k2_var);
  }
};

struct DivergenceError : std::runtime_error {
  double t;
  explicit DivergenceError(double time)
      : std::runtime_error("non-finite state at t = " + std::to_string(time)),
        t(time) {}
};

struct StepError : std::runtime_error {
  int particle;
  StepError(int p, const std::string& what)
      : std::runtime_error("particle " + std::to_string(p) + ": " + what),
        particle(p) {}
};

// Optional modifications to the base dynamics; used for controlled runs and
// for replaying an external law sequence.
struct StepHooks {
  // extra slow drift, added to b1 (already multiplied by whatever matrices
  // the caller needs)
  std::function<Vec(double t, const Vec& x, const ParticleCloud& mu, const Vec& y)>
      slow_extra;
  std::function<Vec(double t, const Vec& x, const ParticleCloud& mu, const Vec& y)>
      fast_extra;
  // when set, coefficients see this cloud instead of the ensemble's own
  const std::vector<ParticleCloud>* law_sequence = nullptr;
};

// One macro step. `step_index` keys the counter-based noise streams, so the
// result is a pure function of (ensemble, step_index, cfg.seed).
inline void step(SlowFastEnsemble& ens, const CoefficientSet& coeffs,
                 const MonotoneOperator& A1, const MonotoneOperator& A2,
                 const SimConfig& cfg, int step_index, int workers = 1,
                 const StepHooks& hooks = {}) {
  const int N = static_cast<int>(ens.X.cols());
  const int S = cfg.effective_fast_substeps();
  const double hf = cfg.dt / S;
  const double fast_drift = hf / cfg.delta;
  const double fast_noise = std::sqrt(hf) / std::sqrt(cfg.delta);
  const double slow_noise = std::pow(cfg.epsilon, cfg.theta) * std::sqrt(cfg.dt);
  const double t0 = ens.t;

  const ParticleCloud own_cloud = ens.cloud();
  const ParticleCloud& cloud =
      hooks.law_sequence ? (*hooks.law_sequence)[step_index] : own_cloud;

  Mat Xn = ens.X, Yn = ens.Y;
  Vec k1 = ens.k1_var, k2 = ens.k2_var;

  parallel_for(N, workers, [&](int i) {
    Vec x = ens.X.col(i);
    Vec y = ens.Y.col(i);
    try {
      for (int j = 0; j < S; ++j) {
        const std::uint64_t sub = static_cast<std::uint64_t>(step_index) * S + j;
        Vec dw(coeffs.d2);
        for (int l = 0; l < coeffs.d2; ++l)
          dw[l] = gaussian(cfg.seed, NoiseRole::Fast, i, sub, l);
        Vec pred = y + fast_drift * coeffs.b2(x, cloud, y) +
                   fast_noise * (coeffs.sigma2(x, cloud, y) * dw);
        if (hooks.fast_extra)
          pred += hf * hooks.fast_extra(t0 + j * hf, x, cloud, y);
        auto res = A2.resolvent(hf, pred);
        y = res.point;
        k2[i] += res.k_increment.norm();
      }
      Vec dw(coeffs.d1);
      for (int l = 0; l < coeffs.d1; ++l)
        dw[l] = gaussian(cfg.seed, NoiseRole::Slow, i, step_index, l);
      Vec pred = x + cfg.dt * coeffs.b1(x, cloud, y) +
                 slow_noise * (coeffs.sigma1(x, cloud, y) * dw);
      if (hooks.slow_extra) pred += cfg.dt * hooks.slow_extra(t0, x, cloud, y);
      auto res = A1.resolvent(cfg.dt, pred);
      x = res.point;
      k1[i] += res.k_increment.norm();
    } catch (const DivergenceError&) {
      throw;
    } catch (const std::exception& e) {
      throw StepError(i, e.what());
    }
    if (!x.allFinite() || !y.allFinite()) throw DivergenceError(t0 + cfg.dt);
    Xn.col(i) = x;
    Yn.col(i) = y;
  });

  ens.X = std::move(Xn);
  ens.Y = std::move(Yn);
  ens.k1_var = std::move(k1);
  ens.k2_var = std::move(k2);
  ens.t = t0 + cfg.dt;
}

inline SlowFastEnsemble make_ensemble(const SimConfig& cfg) {
  SlowFastEnsemble e;
  e.t = 0.0;
  e.X = cfg.x0.replicate(1, cfg.n_particles);
  e.Y = cfg.y0.replicate(1, cfg.n_particles);
  e.k1_var = Vec::Zero(cfg.n_particles);
  e.k2_var = Vec::Zero(cfg.n_particles);
  return e;
}

inline Trajectory simulate(const CoefficientSet& coeffs,
                           const MonotoneOperator& A1,
                           const MonotoneOperator& A2, const SimConfig& cfg,
                           int workers = 1, const StepHooks& hooks = {}) {
  cfg.validate();
  SlowFastEnsemble ens = make_ensemble(cfg);
  Trajectory traj;
  traj.seed = cfg.seed;
  traj.push(ens);
  const int K = cfg.n_steps();
  for (int k = 0; k < K; ++k) {
    step(ens, coeffs, A1, A2, cfg, k, workers, hooks);
    ens.t = (k + 1) * cfg.dt;  // avoid drift accumulation in t
    traj.push(ens);
  }
  return traj;
}

// ------------------------------------------------------------------
// Khasminskii auxiliary process: on each block of length delta^gamma the
// fast coefficients are frozen at the block-start slow state, and the
// auxiliary variable is re-initialized to the true Y there.

struct KhasminskiiResult {
  Trajectory yhat;                 // Y-hat in the Y slots, X copied from input
  std::vector<double> gap_t;       // mean |Y_t - Yhat_t|^2 on the grid
  double sup_gap = 0.0;
};

inline KhasminskiiResult khasminskii_path(const Trajectory& traj,
                                          const CoefficientSet& coeffs,
                                          const MonotoneOperator& A2,
                                          const SimConfig& cfg,
                                          int workers = 1) {
  const int K = traj.n_times() - 1;
  const int N = traj.n_particles();
  const int S = cfg.effective_fast_substeps();
  const double hf = cfg.dt / S;
  const double fast_drift = hf / cfg.delta;
  const double fast_noise = std::sqrt(hf) / std::sqrt(cfg.delta);
  const int block_steps =
      std::max(1, static_cast<int>(std::llround(cfg.block_length() / cfg.dt)));

  KhasminskiiResult out;
  out.yhat.seed = traj.seed;
  Mat Yhat = traj.Y[0];
  out.yhat.times.push_back(traj.times[0]);
  out.yhat.X.push_back(traj.X[0]);
  out.yhat.Y.push_back(Yhat);
  out.gap_t.push_back(0.0);

  for (int k = 0; k < K; ++k) {
    const int kb = (k / block_steps) * block_steps;  // block start index
    if (k == kb) Yhat = traj.Y[kb];                   // re-initialize
    const ParticleCloud frozen_cloud(traj.X[kb]);
    Mat Ynext = Yhat;
    parallel_for(N, workers, [&](int i) {
      Vec x = traj.X[kb].col(i);
      Vec y = Yhat.col(i);
      for (int j = 0; j < S; ++j) {
        const std::uint64_t sub = static_cast<std::uint64_t>(k) * S + j;
        Vec dw(coeffs.d2);
        for (int l = 0; l < coeffs.d2; ++l)
          dw[l] = gaussian(cfg.seed, NoiseRole::Fast, i, sub, l);
        Vec pred = y + fast_drift * coeffs.b2(x, frozen_cloud, y) +
                   fast_noise * (coeffs.sigma2(x, frozen_cloud, y) * dw);
        y = A2.resolvent(hf, pred).point;
      }
      Ynext.col(i) = y;
    });
    Yhat = std::move(Ynext);
    const double gap = (traj.Y[k + 1] - Yhat).colwise().squaredNorm().mean();
    out.gap_t.push_back(gap);
    out.sup_gap = std::max(out.sup_gap, gap);
    out.yhat.times.push_back(traj.times[k + 1]);
    out.yhat.X.push_back(traj.X[k + 1]);
    out.yhat.Y.push_back(Yhat);
  }
  return out;
}

// ------------------------------------------------------------------
// Picard construction: alternately solve the fast equation with the previous
// slow iterate frozen as input, then the slow equation with the new fast
// iterate, reusing the same noise streams.

struct PicardResult {
  Trajectory trajectory;
  std::vector<double> gaps;  // sup_t mean |X^(l) - X^(l-1)|^2
  bool converged = false;
};

inline PicardResult picard_solve(const CoefficientSet& coeffs,
                                 const MonotoneOperator& A1,
                                 const MonotoneOperator& A2,
                                 const SimConfig& cfg, int max_iter = 20,
                                 double tol = 1e-10, int workers = 1) {
  cfg.validate();
  if (max_iter < 2) throw std::invalid_argument("picard_solve: max_iter >= 2");
  const int K = cfg.n_steps();
  const int N = cfg.n_particles;
  const int S = cfg.effective_fast_substeps();
  const double hf = cfg.dt / S;
  const double fast_drift = hf / cfg.delta;
  const double fast_noise = std::sqrt(hf) / std::sqrt(cfg.delta);
  const double slow_noise = std::pow(cfg.epsilon, cfg.theta) * std::sqrt(cfg.dt);

  // X^(0) constant at x0
  std::vector<Mat> Xprev(K + 1, cfg.x0.replicate(1, N));
  PicardResult out;
  int rising = 0;

  for (int l = 1; l <= max_iter; ++l) {
    // fast pass: Y^(l) driven by X^(l-1)
    std::vector<Mat> Ycur(K + 1, cfg.y0.replicate(1, N));
    for (int k = 0; k < K; ++k) {
      const ParticleCloud cloud(Xprev[k]);
      Mat Ynext = Ycur[k];
      parallel_for(N, workers, [&](int i) {
        Vec x = Xprev[k].col(i);
        Vec y = Ycur[k].col(i);
        for (int j = 0; j < S; ++j) {
          const std::uint64_t sub = static_cast<std::uint64_t>(k) * S + j;
          Vec dw(coeffs.d2);
          for (int c = 0; c < coeffs.d2; ++c)
            dw[c] = gaussian(cfg.seed, NoiseRole::Fast, i, sub, c);
          Vec pred = y + fast_drift * coeffs.b2(x, cloud, y) +
                     fast_noise * (coeffs.sigma2(x, cloud, y) * dw);
          y = A2.resolvent(hf, pred).point;
        }
        Ynext.col(i) = y;
      });
      Ycur[k + 1] = std::move(Ynext);
    }
    // slow pass: X^(l) driven by Y^(l) and its own cloud
    std::vector<Mat> Xcur(K + 1, cfg.x0.replicate(1, N));
    for (int k = 0; k < K; ++k) {
      const ParticleCloud cloud(Xcur[k]);
      Mat Xnext = Xcur[k];
      parallel_for(N, workers, [&](int i) {
        Vec x = Xcur[k].col(i);
        const Vec y = Ycur[k + 1].col(i);
        Vec dw(coeffs.d1);
        for (int c = 0; c < coeffs.d1; ++c)
          dw[c] = gaussian(cfg.seed, NoiseRole::Slow, i, k, c);
        Vec pred = x + cfg.dt * coeffs.b1(x, cloud, y) +
                   slow_noise * (coeffs.sigma1(x, cloud, y) * dw);
        Xnext.col(i) = A1.resolvent(cfg.dt, pred).point;
      });
      Xcur[k + 1] = std::move(Xnext);
    }

    double gap = 0.0;
    for (int k = 0; k <= K; ++k)
      gap = std::max(gap, (Xcur[k] - Xprev[k]).colwise().squaredNorm().mean());
    out.gaps.push_back(gap);
    rising = (out.gaps.size() >= 2 && gap > out.gaps[out.gaps.size() - 2])
                 ? rising + 1
                 : 0;
    Xprev = Xcur;
    if (gap < tol) {
      out.converged = true;
      out.trajectory.seed = cfg.seed;
      for (int k = 0; k <= K; ++k) {
        out.trajectory.times.push_back(k * cfg.dt);
        out.trajectory.X.push_back(Xprev[k]);
        out.trajectory.Y.push_back(Ycur[k]);
      }
      return out;
    }
    if (rising >= 3)
      throw std::runtime_error("picard_solve: iterate gaps increasing, no contraction");
  }
  out.converged = false;
  out.trajectory.seed = cfg.seed;
  for (int k = 0; k <= K; ++k) {
    out.trajectory.times.push_back(k * cfg.dt);
    out.trajectory.X.push_back(Xprev[k]);
  }
  return out;
}

// CSV export: full mode (t, particle, X..., Y..., k1_var, k2_var) or reduced
// (t + summary statistics)
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os,
                                 bool reduced = false) {
  if (traj.times.empty()) return;
  const int n = static_cast<int>(traj.X[0].rows());
  const int m = traj.Y.empty() ? 0 : static_cast<int>(traj.Y[0].rows());
  if (reduced) {
    os << "t,x_mean,x_second_moment\n";
    for (int k = 0; k < traj.n_times(); ++k) {
      const ParticleCloud c(traj.X[k]);
      os << traj.times[k] << "," << c.mean().transpose().format(Eigen::IOFormat(
                                        Eigen::FullPrecision, 0, ";", ";"))
         << "," << c.second_moment() << "\n";
    }
    return;
  }
  os << "t,particle_id";
  for (int i = 0; i < n; ++i) os << ",x" << i;
  for (int i = 0; i < m; ++i) os << ",y" << i;
  os << ",k1_var,k2_var\n";
  for (int k = 0; k < traj.n_times(); ++k) {
    for (int p = 0; p < traj.n_particles(); ++p) {
      os << traj.times[k] << "," << p;
      for (int i = 0; i < n; ++i) os << "," << traj.X[k](i, p);
      for (int i = 0; i < m; ++i) os << "," << traj.Y[k](i, p);
      os << "," << (traj.k1_var.empty() ? 0.0 : traj.k1_var[k][p]) << ","
         << (traj.k2_var.empty() ? 0.0 : traj.k2_var[k][p]) << "\n";
    }
  }
}

}  // namespace msmv
