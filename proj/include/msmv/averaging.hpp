#pragma once

// Frozen-equation ergodics: long-run simulation of the fast equation with the
// slow pair (x, mu) held fixed, invariant-measure estimation, the averaged
// drift bbar1 with a digest-keyed cache, and integration of the averaged
// equations for theta > 0 (deterministic) and theta = 0 (stochastic).

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>

#include "msmv/engine.hpp"

#include <nlohmann/json.hpp>

namespace msmv {

struct ErgodicSettings {
  double dt_f = 0.01;
  double horizon = 0.0;   // 0 = auto: 200 / alpha_est
  double burn_in = 0.0;   // 0 = auto: max(5 / alpha_est, 50 dt_f)
  int replicas = 8;
  int mixing_replicas = 2000;
  double alpha_est = 1.0;
  double beta_est = 0.0;  // when > 0, enforces dt_f <= 1/(10 beta_est)
  int cloud_max = 4000;
  std::uint64_t seed = 7;
  double stderr_tol = std::numeric_limits<double>::infinity();

  double effective_horizon() const {
    return horizon > 0.0 ? horizon : 200.0 / alpha_est;
  }
  double effective_burn_in() const {
    return burn_in > 0.0 ? burn_in : std::max(5.0 / alpha_est, 50.0 * dt_f);
  }
  void validate() const {
    if (alpha_est <= 0.0)
      throw std::invalid_argument("ergodics refused: dissipativity alpha_est <= 0");
    if (beta_est > 0.0 && dt_f > 1.0 / (10.0 * beta_est) + 1e-15)
      throw std::invalid_argument("dt_f must be <= 1/(10 beta_est)");
  }
};

struct FrozenPath {
  std::vector<double> times;
  Mat Y;  // m x (n_steps + 1)
};

// resolvent-Euler path of dY in -A2(Y)dt + b2(x,mu,Y)dt + sigma2(x,mu,Y)dW
// with (x, mu) fixed; `replica` keys the noise stream.
inline FrozenPath simulate_frozen(const Vec& x, const ParticleCloud& mu,
                                  const CoefficientSet& coeffs,
                                  const MonotoneOperator& A2, double horizon,
                                  double dt_f, std::uint64_t seed,
                                  const Vec& y0, std::uint64_t replica = 0) {
  const int K = std::max(1, static_cast<int>(std::llround(horizon / dt_f)));
  FrozenPath path;
  path.times.resize(K + 1);
  path.Y.resize(y0.size(), K + 1);
  Vec y = y0;
  path.times[0] = 0.0;
  path.Y.col(0) = y;
  const double sdt = std::sqrt(dt_f);
  for (int k = 0; k < K; ++k) {
    Vec dw(coeffs.d2);
    for (int l = 0; l < coeffs.d2; ++l)
      dw[l] = gaussian(seed, NoiseRole::Fast, replica, k, l);
    Vec pred = y + dt_f * coeffs.b2(x, mu, y) +
               sdt * (coeffs.sigma2(x, mu, y) * dw);
    y = A2.resolvent(dt_f, pred).point;
    if (!y.allFinite()) throw DivergenceError((k + 1) * dt_f);
    path.times[k + 1] = (k + 1) * dt_f;
    path.Y.col(k + 1) = y;
  }
  return path;
}

struct MixingFit {
  double rate = 0.0;
  double r2 = 0.0;
};

struct InvariantEstimate {
  std::string anchor_digest;
  ParticleCloud cloud;
  double burn_in = 0.0;
  std::optional<MixingFit> mixing_rate_fit;
  double variance_stderr = 0.0;  // across replicas, of the scalar variance
  bool low_fit_quality = false;  // r2 < 0.8
  bool replica_disagreement = false;  // possible non-uniqueness / metastability
};

inline InvariantEstimate estimate_invariant(const Vec& x,
                                            const ParticleCloud& mu,
                                            const CoefficientSet& coeffs,
                                            const MonotoneOperator& A2,
                                            const ErgodicSettings& settings,
                                            const Vec& y0) {
  settings.validate();
  const double horizon = settings.effective_horizon();
  const double burn = settings.effective_burn_in();
  const int R = std::max(1, settings.replicas);
  const int per_replica = std::max(1, settings.cloud_max / R);

  std::vector<Vec> points;
  std::vector<double> replica_var, replica_mean;
  for (int r = 0; r < R; ++r) {
    const FrozenPath path = simulate_frozen(x, mu, coeffs, A2, horizon,
                                            settings.dt_f, settings.seed, y0, r);
    const int K = static_cast<int>(path.times.size()) - 1;
    const int k0 = static_cast<int>(burn / settings.dt_f);
    const int avail = K - k0;
    if (avail < 1) throw std::invalid_argument("horizon shorter than burn-in");
    const int stride = std::max(1, avail / per_replica);
    double s1 = 0.0, s2 = 0.0;
    int cnt = 0;
    for (int k = k0; k <= K; k += stride) {
      points.push_back(path.Y.col(k));
      ++cnt;
    }
    for (int k = k0; k <= K; ++k) {
      const double v = path.Y.col(k).squaredNorm();
      s1 += path.Y.col(k).sum();
      s2 += v;
    }
    const int tot = K - k0 + 1;
    const double mean = s1 / tot / y0.size();
    replica_mean.push_back(mean);
    replica_var.push_back(s2 / tot - mean * mean * y0.size());
    (void)cnt;
  }
  Mat pts(y0.size(), points.size());
  for (size_t i = 0; i < points.size(); ++i) pts.col(i) = points[i];

  InvariantEstimate est{.anchor_digest = mu.digest(),
                        .cloud = ParticleCloud(std::move(pts)),
                        .burn_in = burn};
  if (R >= 2) {
    double vm = 0.0, vs = 0.0;
    for (double v : replica_var) vm += v;
    vm /= R;
    for (double v : replica_var) vs += (v - vm) * (v - vm);
    est.variance_stderr = std::sqrt(vs / (R - 1) / R);
    if (est.variance_stderr > 0.0) {
      for (double v : replica_var)
        if (std::abs(v - vm) > 5.0 * est.variance_stderr * std::sqrt(double(R)))
          est.replica_disagreement = true;
    }
  }
  return est;
}

struct AveragedDriftValue {
  Vec value;
  double stderr_ = 0.0;
  int sample_size = 0;
};

// time-average of b1(x, mu, Y_t) over the post-burn-in frozen path, averaged
// over independent replicas
inline AveragedDriftValue averaged_drift(const Vec& x, const ParticleCloud& mu,
                                         const CoefficientSet& coeffs,
                                         const MonotoneOperator& A2,
                                         const ErgodicSettings& settings,
                                         const Vec& y0) {
  settings.validate();
  const double horizon = settings.effective_horizon();
  const double burn = settings.effective_burn_in();
  const int R = std::max(2, settings.replicas);

  std::vector<Vec> replica_avg;
  int total = 0;
  for (int r = 0; r < R; ++r) {
    const FrozenPath path = simulate_frozen(x, mu, coeffs, A2, horizon,
                                            settings.dt_f, settings.seed, y0, r);
    const int K = static_cast<int>(path.times.size()) - 1;
    const int k0 = static_cast<int>(burn / settings.dt_f);
    Vec acc = Vec::Zero(coeffs.n);
    int cnt = 0;
    for (int k = k0; k <= K; ++k) {
      acc += coeffs.b1(x, mu, path.Y.col(k));
      ++cnt;
    }
    replica_avg.push_back(acc / cnt);
    total += cnt;
  }
  Vec mean = Vec::Zero(coeffs.n);
  for (const auto& v : replica_avg) mean += v;
  mean /= R;
  double var = 0.0;
  for (const auto& v : replica_avg) var += (v - mean).squaredNorm();
  return {mean, std::sqrt(var / (R - 1) / R), total};
}

struct InsufficientSignalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fits log |E b1(x,mu,Y_t^{y0}) - bbar1|^2 linearly in t; returns the
// negative slope (the mixing rate) and the fit r^2. `bbar` must be estimated
// beforehand.
inline MixingFit mixing_decay_fit(const Vec& x, const ParticleCloud& mu,
                                  const Vec& y0, const CoefficientSet& coeffs,
                                  const MonotoneOperator& A2,
                                  const ErgodicSettings& settings,
                                  const Vec& bbar) {
  settings.validate();
  const int R = settings.mixing_replicas;
  const double t_max = 3.0 / settings.alpha_est;
  const int n_grid = 10;
  const double dt_f = settings.dt_f;
  const int steps_per = std::max(
      1, static_cast<int>(std::llround(t_max / n_grid / dt_f)));
  const int K = steps_per * n_grid;

  // accumulate E b1 at each grid time over replicas
  std::vector<Vec> acc(n_grid + 1, Vec::Zero(coeffs.n));
  const double sdt = std::sqrt(dt_f);
  for (int r = 0; r < R; ++r) {
    Vec y = y0;
    acc[0] += coeffs.b1(x, mu, y);
    for (int k = 0; k < K; ++k) {
      Vec dw(coeffs.d2);
      for (int l = 0; l < coeffs.d2; ++l)
        dw[l] = gaussian(settings.seed ^ 0xabcdULL, NoiseRole::Fast, r, k, l);
      Vec pred = y + dt_f * coeffs.b2(x, mu, y) +
                 sdt * (coeffs.sigma2(x, mu, y) * dw);
      y = A2.resolvent(dt_f, pred).point;
      if ((k + 1) % steps_per == 0)
        acc[(k + 1) / steps_per] += coeffs.b1(x, mu, y);
    }
  }
  // noise floor from the Monte Carlo error of the mean
  const double floor2 = 1e-4 / R;
  std::vector<double> ts, logs;
  for (int g = 0; g <= n_grid; ++g) {
    const double sig2 = (acc[g] / R - bbar).squaredNorm();
    if (sig2 > floor2) {
      ts.push_back(g * steps_per * dt_f);
      logs.push_back(std::log(sig2));
    }
  }
  if (ts.size() < 3)
    throw InsufficientSignalError(
        "mixing_decay_fit: signal below noise floor before 3 grid points");
  // OLS fit
  const int nn = static_cast<int>(ts.size());
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (int i = 0; i < nn; ++i) {
    st += ts[i];
    sl += logs[i];
    stt += ts[i] * ts[i];
    stl += ts[i] * logs[i];
  }
  const double slope = (nn * stl - st * sl) / (nn * stt - st * st);
  const double intercept = (sl - slope * st) / nn;
  double ss_res = 0, ss_tot = 0;
  const double lmean = sl / nn;
  for (int i = 0; i < nn; ++i) {
    const double fit = intercept + slope * ts[i];
    ss_res += (logs[i] - fit) * (logs[i] - fit);
    ss_tot += (logs[i] - lmean) * (logs[i] - lmean);
  }
  return {-slope, ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0};
}

// ------------------------------------------------------------------
// drift cache keyed by (x digest, mu digest)

using AveragedDriftFn = std::function<Vec(const Vec&, const ParticleCloud&)>;

class AveragedDriftCache {
 public:
  struct Entry {
    Vec value;
    double stderr_ = 0.0;
    int sample_size = 0;
  };

  static std::string x_digest(const Vec& x) {
    std::ostringstream os;
    os.precision(4);
    for (int i = 0; i < x.size(); ++i)
      os << (std::abs(x[i]) < 1e-8 ? 0.0 : x[i]) << ",";
    return os.str();
  }

  std::optional<Entry> lookup(const Vec& x, const ParticleCloud& mu) const {
    std::scoped_lock lk(mu_);
    auto it = map_.find(x_digest(x) + "|" + mu.digest());
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void store(const Vec& x, const ParticleCloud& mu, Entry e) {
    std::scoped_lock lk(mu_);
    map_[x_digest(x) + "|" + mu.digest()] = std::move(e);  // last write wins
  }

  void save(const std::string& path) const {
    nlohmann::json j = nlohmann::json::object();
    std::scoped_lock lk(mu_);
    for (const auto& [k, e] : map_) {
      std::vector<double> v(e.value.data(), e.value.data() + e.value.size());
      j[k] = {{"value", v}, {"stderr", e.stderr_}, {"samples", e.sample_size}};
    }
    std::ofstream(path) << j.dump(2);
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;
    nlohmann::json j;
    in >> j;
    std::scoped_lock lk(mu_);
    for (auto& [k, e] : j.items()) {
      std::vector<double> v = e["value"].get<std::vector<double>>();
      Entry ent;
      ent.value = Eigen::Map<Vec>(v.data(), v.size());
      ent.stderr_ = e["stderr"];
      ent.sample_size = e["samples"];
      map_[k] = std::move(ent);
    }
  }

  size_t size() const {
    std::scoped_lock lk(mu_);
    return map_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, Entry> map_;
};

// estimator-backed averaged drift with read-through caching and a
// refinement loop (horizon doubled) when the stderr tolerance is exceeded
inline AveragedDriftFn make_estimated_drift(const CoefficientSet& coeffs,
                                            const MonotoneOperator& A2,
                                            ErgodicSettings settings, Vec y0,
                                            std::shared_ptr<AveragedDriftCache>
                                                cache = nullptr) {
  return [coeffs, A2, settings, y0, cache](const Vec& x,
                                           const ParticleCloud& mu) -> Vec {
    if (cache) {
      if (auto hit = cache->lookup(x, mu)) return hit->value;
    }
    ErgodicSettings s = settings;
    AveragedDriftValue v = averaged_drift(x, mu, coeffs, A2, s, y0);
    for (int refine = 0; refine < 2 && v.stderr_ > s.stderr_tol; ++refine) {
      s.horizon = s.effective_horizon() * 2.0;
      v = averaged_drift(x, mu, coeffs, A2, s, y0);
    }
    if (v.stderr_ > s.stderr_tol)
      throw std::runtime_error("averaged drift stderr above tolerance after refinement");
    if (cache)
      cache->store(x, mu, {v.value, v.stderr_, v.sample_size});
    return v.value;
  };
}

// ------------------------------------------------------------------
// averaged-equation integration

enum class AveragedMode { ThetaPositive, ThetaZero };

// theta > 0: deterministic resolvent-Euler on
//   dXbar in -A1(Xbar)dt + bbar1(Xbar, cloud)dt,
// cloud = the empirical law of the system's own particles (a Dirac for N=1).
// theta = 0: the same plus sigma1(x, mu) dW1 on the shared slow streams, so
// coupled-error runs consume identical noise as `simulate`.
inline Trajectory integrate_averaged(const AveragedDriftFn& bbar,
                                     const CoefficientSet& coeffs,
                                     const MonotoneOperator& A1,
                                     const SimConfig& cfg, AveragedMode mode,
                                     int workers = 1) {
  if (mode == AveragedMode::ThetaZero && !coeffs.sigma1_y_independent)
    throw std::invalid_argument(
        "theta = 0 averaging requires sigma1 independent of y");
  const int K = cfg.n_steps();
  const int N = cfg.n_particles;
  const bool stochastic = (mode == AveragedMode::ThetaZero);
  const double sdt = std::sqrt(cfg.dt);
  const Vec ydummy = Vec::Zero(std::max(1, coeffs.m));

  Trajectory traj;
  traj.seed = cfg.seed;
  Mat X = cfg.x0.replicate(1, N);
  traj.times.push_back(0.0);
  traj.X.push_back(X);
  for (int k = 0; k < K; ++k) {
    const ParticleCloud cloud(X);
    Mat Xn = X;
    parallel_for(N, workers, [&](int i) {
      Vec x = X.col(i);
      Vec pred = x + cfg.dt * bbar(x, cloud);
      if (stochastic) {
        Vec dw(coeffs.d1);
        for (int l = 0; l < coeffs.d1; ++l)
          dw[l] = gaussian(cfg.seed, NoiseRole::Slow, i, k, l);
        pred += sdt * (coeffs.sigma1(x, cloud, ydummy) * dw);
      }
      Xn.col(i) = A1.resolvent(cfg.dt, pred).point;
    });
    X = std::move(Xn);
    if (!X.allFinite()) throw DivergenceError((k + 1) * cfg.dt);
    traj.times.push_back((k + 1) * cfg.dt);
    traj.X.push_back(X);
  }
  return traj;
}

}  // namespace msmv
