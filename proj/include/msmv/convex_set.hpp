#pragma once

// Closed convex sets with Euclidean projections. These realize the resolvents
// of normal-cone operators: J_lambda of an indicator is the projection,
// independent of lambda.

#include <Eigen/Dense>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

namespace msmv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Halfspace {
  Vec normal;     // constraint  normal . x <= offset
  double offset = 0.0;
};

struct Box {
  Vec lower, upper;
};

struct Ball {
  Vec center;
  double radius = 1.0;
};

struct Polytope {
  std::vector<Halfspace> facets;
  Vec interior_point;  // certifies nonemptiness
};

class ConvexSet {
 public:
  using Kind = std::variant<Halfspace, Box, Ball, Polytope>;

  ConvexSet(Kind kind, int dimension) : kind_(std::move(kind)), dim_(dimension) {
    validate();
  }

  static ConvexSet halfspace(Vec normal, double offset) {
    const int d = static_cast<int>(normal.size());
    return ConvexSet(Halfspace{std::move(normal), offset}, d);
  }
  static ConvexSet box(Vec lower, Vec upper) {
    const int d = static_cast<int>(lower.size());
    return ConvexSet(Box{std::move(lower), std::move(upper)}, d);
  }
  static ConvexSet ball(Vec center, double radius) {
    const int d = static_cast<int>(center.size());
    return ConvexSet(Ball{std::move(center), radius}, d);
  }
  static ConvexSet polytope(std::vector<Halfspace> facets, Vec interior_point) {
    const int d = static_cast<int>(interior_point.size());
    return ConvexSet(Polytope{std::move(facets), std::move(interior_point)}, d);
  }

  int dimension() const { return dim_; }
  const Kind& kind() const { return kind_; }

  // signed constraint violation: <= 0 inside, grows outside
  double violation(const Vec& x) const {
    check_dim(x);
    return std::visit(
        [&](const auto& k) { return violation_impl(k, x); }, kind_);
  }

  bool contains(const Vec& x, double tol = 1e-10) const {
    return violation(x) <= tol;
  }

  Vec project(const Vec& x) const {
    check_dim(x);
    return std::visit([&](const auto& k) { return project_impl(k, x); }, kind_);
  }

  // unit outward normal at a boundary point; for polytopes the active facet
  // with the largest constraint value, ties broken by lowest facet index
  Vec outward_normal(const Vec& x) const {
    check_dim(x);
    return std::visit([&](const auto& k) { return normal_impl(k, x); }, kind_);
  }

  // distance from an interior point to the nearest facet/boundary; the radius
  // of the largest interior ball centered there
  double interior_radius(const Vec& a) const {
    check_dim(a);
    return std::visit([&](const auto& k) { return iradius_impl(k, a); }, kind_);
  }

 private:
  Kind kind_;
  int dim_;

  void check_dim(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim_)
      throw std::invalid_argument("ConvexSet: dimension mismatch");
  }

  void validate() const {
    if (const auto* b = std::get_if<Ball>(&kind_)) {
      if (b->radius <= 0.0) throw std::invalid_argument("ball radius must be > 0");
    } else if (const auto* bx = std::get_if<Box>(&kind_)) {
      if ((bx->lower.array() > bx->upper.array()).any())
        throw std::invalid_argument("box lower must be <= upper");
    } else if (const auto* p = std::get_if<Polytope>(&kind_)) {
      if (p->facets.empty()) throw std::invalid_argument("polytope needs facets");
      for (const auto& f : p->facets)
        if (f.normal.dot(p->interior_point) > f.offset)
          throw std::invalid_argument("polytope interior point not interior");
    }
  }

  static double violation_impl(const Halfspace& h, const Vec& x) {
    return (h.normal.dot(x) - h.offset) / h.normal.norm();
  }
  static double violation_impl(const Box& b, const Vec& x) {
    double v = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < x.size(); ++i)
      v = std::max({v, b.lower[i] - x[i], x[i] - b.upper[i]});
    return v;
  }
  static double violation_impl(const Ball& b, const Vec& x) {
    return (x - b.center).norm() - b.radius;
  }
  static double violation_impl(const Polytope& p, const Vec& x) {
    double v = -std::numeric_limits<double>::infinity();
    for (const auto& f : p.facets) v = std::max(v, violation_impl(f, x));
    return v;
  }

  static Vec project_impl(const Halfspace& h, const Vec& x) {
    const double g = h.normal.dot(x) - h.offset;
    if (g <= 0.0) return x;
    return x - (g / h.normal.squaredNorm()) * h.normal;
  }
  static Vec project_impl(const Box& b, const Vec& x) {
    return x.cwiseMax(b.lower).cwiseMin(b.upper);
  }
  static Vec project_impl(const Ball& b, const Vec& x) {
    const Vec d = x - b.center;
    const double n = d.norm();
    if (n <= b.radius) return x;
    return b.center + (b.radius / n) * d;
  }
  // Dykstra's cyclic projections onto the facet halfspaces
  static Vec project_impl(const Polytope& p, const Vec& x) {
    if (violation_impl(p, x) <= 0.0) return x;
    const int m = static_cast<int>(p.facets.size());
    Vec z = x;
    std::vector<Vec> corr(m, Vec::Zero(x.size()));
    constexpr int kMaxSweeps = 10000;
    constexpr double kTol = 1e-10;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
      double moved = 0.0;
      for (int i = 0; i < m; ++i) {
        const Vec y = z + corr[i];
        const Vec znew = project_impl(p.facets[i], y);
        corr[i] = y - znew;
        moved = std::max(moved, (znew - z).norm());
        z = znew;
      }
      if (moved <= kTol && violation_impl(p, z) <= kTol) return z;
    }
    throw std::runtime_error("polytope projection did not converge, residual " +
                             std::to_string(violation_impl(p, z)));
  }

  static Vec normal_impl(const Halfspace& h, const Vec&) {
    return h.normal.normalized();
  }
  static Vec normal_impl(const Box& b, const Vec& x) {
    int best = 0;
    double bestgap = std::numeric_limits<double>::infinity();
    double sign = 1.0;
    for (int i = 0; i < x.size(); ++i) {
      if (std::abs(x[i] - b.upper[i]) < bestgap) {
        bestgap = std::abs(x[i] - b.upper[i]);
        best = i;
        sign = 1.0;
      }
      if (std::abs(x[i] - b.lower[i]) < bestgap) {
        bestgap = std::abs(x[i] - b.lower[i]);
        best = i;
        sign = -1.0;
      }
    }
    Vec n = Vec::Zero(x.size());
    n[best] = sign;
    return n;
  }
  static Vec normal_impl(const Ball& b, const Vec& x) {
    return (x - b.center).normalized();
  }
  static Vec normal_impl(const Polytope& p, const Vec& x) {
    int best = 0;
    double bestval = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(p.facets.size()); ++i) {
      const double v = violation_impl(p.facets[i], x);
      if (v > bestval) {  // strict: ties keep the lowest index
        bestval = v;
        best = i;
      }
    }
    return p.facets[best].normal.normalized();
  }

  static double iradius_impl(const Halfspace& h, const Vec& a) {
    return -violation_impl(h, a);
  }
  static double iradius_impl(const Box& b, const Vec& a) {
    return -violation_impl(b, a);
  }
  static double iradius_impl(const Ball& b, const Vec& a) {
    return -violation_impl(b, a);
  }
  static double iradius_impl(const Polytope& p, const Vec& a) {
    return -violation_impl(p, a);
  }
};

}  // namespace msmv
