#pragma once

// Maximal monotone operators represented through their resolvents
// J_lambda = (I + lambda A)^{-1}. Three concrete variants plus a
// user-supplied resolvent map.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "msmv/convex_set.hpp"
#include "msmv/rng.hpp"

namespace msmv {

struct ResolventResult {
  Vec point;        // J_lambda(x)
  Vec k_increment;  // x - J_lambda(x), accumulates into the BV part K
};

namespace detail {

// prox of a scalar convex function: argmin_u lambda*psi(u) + (u-x)^2/2.
// Golden-section on an expanding bracket; the objective is strongly convex
// so a bracket always exists.
inline double scalar_prox(const std::function<double(double)>& psi,
                          double lambda, double x) {
  auto phi = [&](double u) {
    return lambda * psi(u) + 0.5 * (u - x) * (u - x);
  };
  double r = 1.0;
  const double fx = phi(x);
  int expand = 0;
  while ((phi(x - r) <= fx || phi(x + r) <= fx) && expand < 200) {
    r *= 2.0;
    ++expand;
  }
  if (expand >= 200)
    throw std::runtime_error("scalar prox: bracket expansion failed");
  double lo = x - r, hi = x + r;
  constexpr double kInvPhi = 0.6180339887498949;
  double c = hi - kInvPhi * (hi - lo);
  double d = lo + kInvPhi * (hi - lo);
  double fc = phi(c), fd = phi(d);
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(x)); ++it) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - kInvPhi * (hi - lo);
      fc = phi(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + kInvPhi * (hi - lo);
      fd = phi(d);
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

class MonotoneOperator {
 public:
  struct ZeroOp {};
  struct IndicatorOp {
    ConvexSet set;
  };
  // subdifferential of a separable convex function sum_i psi(y_i)
  struct SubgradientOp {
    std::function<double(double)> psi;
  };
  struct CustomOp {
    std::function<Vec(double, const Vec&)> resolvent;  // (lambda, x) -> J_lambda(x)
  };
  using Variant = std::variant<ZeroOp, IndicatorOp, SubgradientOp, CustomOp>;

  MonotoneOperator(Variant v, int dimension)
      : variant_(std::move(v)), dim_(dimension) {}

  static MonotoneOperator zero(int dimension) {
    return MonotoneOperator(ZeroOp{}, dimension);
  }
  static MonotoneOperator indicator(ConvexSet set) {
    const int d = set.dimension();
    return MonotoneOperator(IndicatorOp{std::move(set)}, d);
  }
  static MonotoneOperator subgradient(std::function<double(double)> psi,
                                      int dimension) {
    return MonotoneOperator(SubgradientOp{std::move(psi)}, dimension);
  }
  static MonotoneOperator custom(std::function<Vec(double, const Vec&)> J,
                                 int dimension) {
    return MonotoneOperator(CustomOp{std::move(J)}, dimension);
  }

  int dimension() const { return dim_; }
  bool is_zero() const { return std::holds_alternative<ZeroOp>(variant_); }
  bool is_indicator() const {
    return std::holds_alternative<IndicatorOp>(variant_);
  }
  const ConvexSet* domain_set() const {
    if (const auto* ind = std::get_if<IndicatorOp>(&variant_)) return &ind->set;
    return nullptr;
  }

  ResolventResult resolvent(double lambda, const Vec& x) const {
    if (lambda <= 0.0) throw std::invalid_argument("resolvent: lambda must be > 0");
    if (static_cast<int>(x.size()) != dim_)
      throw std::invalid_argument("resolvent: dimension mismatch");
    Vec j;
    if (std::holds_alternative<ZeroOp>(variant_)) {
      return {x, Vec::Zero(x.size())};
    } else if (const auto* ind = std::get_if<IndicatorOp>(&variant_)) {
      j = ind->set.project(x);
    } else if (const auto* sg = std::get_if<SubgradientOp>(&variant_)) {
      j.resize(x.size());
      for (int i = 0; i < x.size(); ++i)
        j[i] = detail::scalar_prox(sg->psi, lambda, x[i]);
    } else {
      j = std::get<CustomOp>(variant_).resolvent(lambda, x);
    }
    return {j, x - j};
  }

  Vec yosida(double lambda, const Vec& x) const {
    return resolvent(lambda, x).k_increment / lambda;
  }

  // whether a point lies in the closure of the domain (trivially true except
  // for indicator variants)
  bool in_domain(const Vec& x, double tol = 1e-10) const {
    if (const auto* ind = std::get_if<IndicatorOp>(&variant_))
      return ind->set.contains(x, tol);
    return true;
  }

  // sampled nonexpansiveness probe, used on registration of custom resolvents
  bool probe_nonexpansive(std::uint64_t seed, int n_pairs = 200,
                          double lambda = 0.5, double box = 5.0) const {
    for (int p = 0; p < n_pairs; ++p) {
      Vec x(dim_), y(dim_);
      for (int i = 0; i < dim_; ++i) {
        x[i] = box * (2.0 * uniform(seed, NoiseRole::Aux, p, 0, i) - 1.0);
        y[i] = box * (2.0 * uniform(seed, NoiseRole::Aux, p, 1, i) - 1.0);
      }
      const Vec jx = resolvent(lambda, x).point;
      const Vec jy = resolvent(lambda, y).point;
      if ((jx - jy).norm() > (x - y).norm() + 1e-10) return false;
    }
    return true;
  }

 private:
  Variant variant_;
  int dim_;
};

// Interior-ball data for an indicator operator: ball(a, r) inside the domain,
// with declared slack constants for the remaining inequality terms.
struct InteriorBallCertificate {
  Vec a;
  double r = 0.0;
  double slack_m2 = 0.0;
  double slack_m3 = 0.0;
};

struct InteriorGapViolation {
  int sample_index;
  double gap;  // <x - a, n>, should be >= r
};

struct InteriorGapReport {
  bool pass = true;
  std::vector<InteriorGapViolation> violations;
};

// For each boundary sample x with unit outward normal n, checks
// <x - a, n> >= r. Only meaningful for indicator operators.
inline InteriorGapReport interior_gap_check(
    const MonotoneOperator& op, const InteriorBallCertificate& cert,
    const std::vector<Vec>& boundary_samples, double tol = 1e-9) {
  const ConvexSet* set = op.domain_set();
  if (!set)
    throw std::invalid_argument("interior_gap_check: operator is not an indicator");
  if (!set->contains(cert.a, -cert.r + 1e-12) || cert.r <= 0.0) {
    // ball(a, r) must sit inside the domain
    if (set->interior_radius(cert.a) < cert.r - 1e-12)
      throw std::invalid_argument("interior_gap_check: certificate ball not inside domain");
  }
  InteriorGapReport report;
  for (int i = 0; i < static_cast<int>(boundary_samples.size()); ++i) {
    const Vec& x = boundary_samples[i];
    if (std::abs(set->violation(x)) > 1e-8)
      throw std::invalid_argument("interior_gap_check: sample " +
                                  std::to_string(i) + " not on boundary");
    const Vec n = set->outward_normal(x);
    const double gap = (x - cert.a).dot(n);
    if (gap < cert.r - tol) {
      report.pass = false;
      report.violations.push_back({i, gap});
    }
  }
  return report;
}

}  // namespace msmv
