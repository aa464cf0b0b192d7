#pragma once

// Problem definitions: the coefficient quadruple (b1, sigma1, b2, sigma2)
// with dimensions and theta, sampled assumption probes, and the built-in
// models (linear test, aggregation-diffusion, frozen OU).

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "msmv/measure.hpp"
#include "msmv/monotone.hpp"

namespace msmv {

using DriftFn = std::function<Vec(const Vec& x, const ParticleCloud& mu, const Vec& y)>;
using DiffusionFn = std::function<Mat(const Vec& x, const ParticleCloud& mu, const Vec& y)>;

struct CoefficientSet {
  DriftFn b1;        // R^n
  DiffusionFn sigma1;  // n x d1
  DriftFn b2;        // R^m
  DiffusionFn sigma2;  // m x d2
  double theta = 0.0;
  int n = 1, m = 1, d1 = 1, d2 = 1;
  bool sigma1_y_independent = false;
  bool sigma2_bounded = false;  // (H^4) gate for controlled runs
};

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// uniform sampler over a declared bounding box, clouds of a fixed size
struct DomainSampler {
  Vec x_lo, x_hi;
  Vec y_lo, y_hi;
  int cloud_size = 8;
  std::uint64_t seed = 1234;

  Vec sample_x(std::uint64_t i, std::uint64_t slot) const {
    Vec x(x_lo.size());
    for (int k = 0; k < x.size(); ++k)
      x[k] = x_lo[k] + (x_hi[k] - x_lo[k]) * uniform(seed, NoiseRole::Aux, i, slot, k);
    return x;
  }
  Vec sample_y(std::uint64_t i, std::uint64_t slot) const {
    Vec y(y_lo.size());
    for (int k = 0; k < y.size(); ++k)
      y[k] = y_lo[k] + (y_hi[k] - y_lo[k]) *
                           uniform(seed, NoiseRole::Aux, i, slot + 100, k);
    return y;
  }
  ParticleCloud sample_cloud(std::uint64_t i, std::uint64_t slot) const {
    Mat pts(x_lo.size(), cloud_size);
    for (int j = 0; j < cloud_size; ++j) pts.col(j) = sample_x(i, slot + 200 + j);
    return ParticleCloud(std::move(pts));
  }
};

struct AssumptionReport {
  double lip_b1_sigma1 = 0.0;   // L'_{b1,sigma1}, squared-quotient estimate
  double lip_b2_sigma2 = 0.0;   // L'_{b2,sigma2}, sigma2 y-Lipschitz estimate
  double beta = 0.0;            // one-sided dissipativity constant
  std::optional<double> alpha;  // beta - 2 L', present only when beta > 2 L'
  double sigma2_sup = 0.0;
  bool lipschitz_finite = true;
  bool dissipative = false;   // beta > 0
  bool gate_passed = false;   // beta > 2 L'
  bool sigma1_y_independent_ok = true;
  int sample_count = 0;
};

inline AssumptionReport check_assumptions(const CoefficientSet& coeffs,
                                          const DomainSampler& sampler,
                                          int n_samples = 10000) {
  if (n_samples < 2)
    throw std::invalid_argument("check_assumptions: n_samples >= 2 required");
  AssumptionReport rep;
  rep.sample_count = n_samples;
  double beta_inf = std::numeric_limits<double>::infinity();
  try {
    for (int i = 0; i < n_samples; ++i) {
      const Vec x1 = sampler.sample_x(i, 0), x2 = sampler.sample_x(i, 1);
      const Vec y1 = sampler.sample_y(i, 0), y2 = sampler.sample_y(i, 1);
      const ParticleCloud mu1 = sampler.sample_cloud(i, 0);
      const ParticleCloud mu2 = sampler.sample_cloud(i, 1);

      // (b1, sigma1) full Lipschitz quotient
      const double denom1 = (x1 - x2).squaredNorm() +
                            std::pow(w2_distance(mu1, mu2), 2) +
                            (y1 - y2).squaredNorm();
      if (denom1 > 1e-12) {
        const double num1 =
            (coeffs.b1(x1, mu1, y1) - coeffs.b1(x2, mu2, y2)).squaredNorm() +
            (coeffs.sigma1(x1, mu1, y1) - coeffs.sigma1(x2, mu2, y2)).squaredNorm();
        rep.lip_b1_sigma1 = std::max(rep.lip_b1_sigma1, num1 / denom1);
      }

      // fast pair at shared (x, mu): sigma2 Lipschitz and dissipativity
      const double dy2 = (y1 - y2).squaredNorm();
      if (dy2 > 1e-12) {
        const double ds2 =
            (coeffs.sigma2(x1, mu1, y1) - coeffs.sigma2(x1, mu1, y2)).squaredNorm();
        rep.lip_b2_sigma2 = std::max(rep.lip_b2_sigma2, ds2 / dy2);
        const double quot =
            (-2.0 * (y1 - y2).dot(coeffs.b2(x1, mu1, y1) - coeffs.b2(x1, mu1, y2)) -
             ds2) /
            dy2;
        beta_inf = std::min(beta_inf, quot);
      }

      rep.sigma2_sup = std::max(rep.sigma2_sup, coeffs.sigma2(x1, mu1, y1).norm());

      if (coeffs.sigma1_y_independent &&
          (coeffs.sigma1(x1, mu1, y1) - coeffs.sigma1(x1, mu1, y2)).norm() > 1e-10)
        rep.sigma1_y_independent_ok = false;
    }
  } catch (const std::exception& e) {
    throw ModelError(std::string("coefficient evaluation failed: ") + e.what());
  }
  rep.beta = std::isfinite(beta_inf) ? beta_inf : 0.0;
  rep.lipschitz_finite = std::isfinite(rep.lip_b1_sigma1);
  rep.dissipative = rep.beta > 0.0;
  if (rep.beta > 2.0 * rep.lip_b2_sigma2) {
    rep.gate_passed = true;
    rep.alpha = rep.beta - 2.0 * rep.lip_b2_sigma2;
  }
  return rep;
}

// ------------------------------------------------------------------
// built-in models

struct ModelBundle {
  CoefficientSet coeffs;
  MonotoneOperator A1;
  MonotoneOperator A2;
  // closed-form averaged drift when the model admits one; used to isolate
  // averaging error from drift-estimation error
  std::function<Vec(const Vec&, const ParticleCloud&)> analytic_averaged_drift;
  DomainSampler default_sampler;
};

struct AggregationDiffusionSpec {
  std::function<Vec(const Vec&)> grad_v1, grad_v2, grad_v3, grad_v4;
  Mat sigma1;  // n x d1, constant
  Mat sigma2;  // n x d2, constant
  ConvexSet domain =                       // O for A1 = indicator(O)
      ConvexSet::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  MonotoneOperator fast_op = MonotoneOperator::zero(1);  // A2
  double theta = 0.0;
};

inline ModelBundle build_aggregation_diffusion(const AggregationDiffusionSpec& spec) {
  const int n = static_cast<int>(spec.sigma1.rows());
  if (spec.domain.dimension() != n || spec.fast_op.dimension() != n)
    throw std::invalid_argument("aggregation_diffusion: dimension mismatch (n = m required)");
  CoefficientSet c;
  c.n = n;
  c.m = n;
  c.d1 = static_cast<int>(spec.sigma1.cols());
  c.d2 = static_cast<int>(spec.sigma2.cols());
  c.theta = spec.theta;
  c.sigma1_y_independent = true;
  c.sigma2_bounded = true;
  auto gv1 = spec.grad_v1, gv2 = spec.grad_v2, gv3 = spec.grad_v3, gv4 = spec.grad_v4;
  c.b1 = [gv1, gv2](const Vec& x, const ParticleCloud& mu, const Vec& y) {
    Vec conv = Vec::Zero(x.size());
    for (int i = 0; i < mu.count(); ++i) conv += gv2(x - mu.point(i));
    conv /= mu.count();
    return Vec(-(gv1(y) + conv));
  };
  c.b2 = [gv3, gv4](const Vec& x, const ParticleCloud& mu, const Vec& y) {
    Vec conv = Vec::Zero(x.size());
    for (int i = 0; i < mu.count(); ++i) conv += gv4(x - mu.point(i));
    conv /= mu.count();
    return Vec(-(gv3(y) + conv));
  };
  Mat s1 = spec.sigma1, s2 = spec.sigma2;
  c.sigma1 = [s1](const Vec&, const ParticleCloud&, const Vec&) { return s1; };
  c.sigma2 = [s2](const Vec&, const ParticleCloud&, const Vec&) { return s2; };

  DomainSampler ds{Vec::Constant(n, -2.0), Vec::Constant(n, 2.0),
                   Vec::Constant(n, -2.0), Vec::Constant(n, 2.0)};
  return ModelBundle{std::move(c), MonotoneOperator::indicator(spec.domain),
                     spec.fast_op, nullptr, std::move(ds)};
}

// 1-D linear-dissipative test model:
//   b1 = -a x + c y + kappa mean(mu),  sigma1 = s1  (constant)
//   b2 = -beta y + g x,                sigma2 = s2  (constant)
// Frozen invariant law is N(g x / beta, s2^2 / (2 beta)), so
//   bbar1(x, mu) = -a x + c g x / beta + kappa mean(mu).
struct LinearTestParams {
  double a = 1.0, c = 1.0, kappa = 0.0;
  double beta = 2.0, g = 1.0;
  double s1 = 0.5, s2 = 1.0;
  double theta = 0.0;
  bool constrained = false;  // A1 = indicator([-1, 1])
  double bound = 1.0;
};

inline ModelBundle make_linear_test(const LinearTestParams& p = {}) {
  CoefficientSet c;
  c.n = c.m = c.d1 = c.d2 = 1;
  c.theta = p.theta;
  c.sigma1_y_independent = true;
  c.sigma2_bounded = true;
  c.b1 = [p](const Vec& x, const ParticleCloud& mu, const Vec& y) {
    Vec r(1);
    r[0] = -p.a * x[0] + p.c * y[0] + p.kappa * mu.mean()[0];
    return r;
  };
  c.sigma1 = [p](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat::Constant(1, 1, p.s1);
  };
  c.b2 = [p](const Vec& x, const ParticleCloud&, const Vec& y) {
    Vec r(1);
    r[0] = -p.beta * y[0] + p.g * x[0];
    return r;
  };
  c.sigma2 = [p](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat::Constant(1, 1, p.s2);
  };
  MonotoneOperator A1 =
      p.constrained
          ? MonotoneOperator::indicator(ConvexSet::box(
                Vec::Constant(1, -p.bound), Vec::Constant(1, p.bound)))
          : MonotoneOperator::zero(1);
  auto bbar = [p](const Vec& x, const ParticleCloud& mu) {
    Vec r(1);
    r[0] = -p.a * x[0] + p.c * p.g * x[0] / p.beta + p.kappa * mu.mean()[0];
    return r;
  };
  DomainSampler ds{Vec::Constant(1, -2.0), Vec::Constant(1, 2.0),
                   Vec::Constant(1, -2.0), Vec::Constant(1, 2.0)};
  return ModelBundle{std::move(c), std::move(A1), MonotoneOperator::zero(1),
                     bbar, std::move(ds)};
}

// 1-D frozen-OU probe model: b1 = y, b2 = -beta y + gain_x x + shift,
// sigma2 = s2 constant. bbar1(x) = (gain_x x + shift) / beta.
struct OuFrozenParams {
  double beta = 2.0, gain_x = 0.0, shift = 0.0;
  double s2 = 1.0;
};

inline ModelBundle make_ou_frozen(const OuFrozenParams& p = {}) {
  CoefficientSet c;
  c.n = c.m = c.d1 = c.d2 = 1;
  c.sigma1_y_independent = true;
  c.sigma2_bounded = true;
  c.b1 = [](const Vec&, const ParticleCloud&, const Vec& y) { return y; };
  c.sigma1 = [](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat::Zero(1, 1);
  };
  c.b2 = [p](const Vec& x, const ParticleCloud&, const Vec& y) {
    Vec r(1);
    r[0] = -p.beta * y[0] + p.gain_x * x[0] + p.shift;
    return r;
  };
  c.sigma2 = [p](const Vec&, const ParticleCloud&, const Vec&) {
    return Mat::Constant(1, 1, p.s2);
  };
  auto bbar = [p](const Vec& x, const ParticleCloud&) {
    Vec r(1);
    r[0] = (p.gain_x * x[0] + p.shift) / p.beta;
    return r;
  };
  DomainSampler ds{Vec::Constant(1, -2.0), Vec::Constant(1, 2.0),
                   Vec::Constant(1, -2.0), Vec::Constant(1, 2.0)};
  return ModelBundle{std::move(c), MonotoneOperator::zero(1),
                     MonotoneOperator::zero(1), bbar, std::move(ds)};
}

}  // namespace msmv
