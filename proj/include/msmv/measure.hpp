#pragma once

// Equal-weight empirical measures: the computational stand-in for P_2(R^n).
// W_2 between equal-count clouds is exact via sorting (1-D) or the assignment
// problem (multi-D, small counts); large clouds fall back to sliced W_2.

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "msmv/rng.hpp"

namespace msmv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class ParticleCloud {
 public:
  // one column per particle
  explicit ParticleCloud(Mat points) : points_(std::move(points)) {
    if (points_.cols() < 1)
      throw std::invalid_argument("ParticleCloud: needs at least one point");
  }

  static ParticleCloud dirac(const Vec& x) {
    Mat m(x.size(), 1);
    m.col(0) = x;
    return ParticleCloud(std::move(m));
  }

  int dimension() const { return static_cast<int>(points_.rows()); }
  int count() const { return static_cast<int>(points_.cols()); }
  const Mat& points() const { return points_; }
  Vec point(int i) const { return points_.col(i); }

  Vec mean() const { return points_.rowwise().mean(); }

  // (1/count) sum |x_i|^2, the squared P_2 norm
  double second_moment() const {
    return points_.colwise().squaredNorm().mean();
  }

  ParticleCloud translated(const Vec& v) const {
    return ParticleCloud(points_.colwise() + v);
  }

  // moment digest rounded to 4 significant digits (values below 1e-9 snap to
  // zero), used as a drift-cache key
  std::string digest() const {
    std::ostringstream os;
    os.precision(4);
    const Vec m = mean();
    for (int i = 0; i < m.size(); ++i)
      os << (std::abs(m[i]) < 1e-8 ? 0.0 : m[i]) << ",";
    const double m2 = second_moment();
    os << (m2 < 1e-8 ? 0.0 : m2);
    return os.str();
  }

  void write_csv(std::ostream& os) const {
    for (int j = 0; j < count(); ++j) {
      for (int i = 0; i < dimension(); ++i) {
        if (i) os << ",";
        os << points_(i, j);
      }
      os << "\n";
    }
  }

 private:
  Mat points_;
};

namespace detail {

// Exact min-cost assignment (Jonker-Volgenant style shortest augmenting
// paths with potentials), O(n^3). cost is n x n.
inline double assignment_cost(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(p[j] - 1, j - 1);
  return total;
}

inline double w2_sorted_1d(const ParticleCloud& a, const ParticleCloud& b) {
  std::vector<double> xs(a.count()), ys(b.count());
  for (int i = 0; i < a.count(); ++i) xs[i] = a.points()(0, i);
  for (int i = 0; i < b.count(); ++i) ys[i] = b.points()(0, i);
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double s = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double d = xs[i] - ys[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace detail

struct W2Result {
  double value = 0.0;
  bool approximate = false;
};

inline W2Result w2_distance_info(const ParticleCloud& a,
                                 const ParticleCloud& b) {
  if (a.dimension() != b.dimension())
    throw std::invalid_argument("w2_distance: dimension mismatch");
  if (a.count() != b.count())
    throw std::invalid_argument("w2_distance: unequal counts, resample upstream");
  const int n = a.count();
  if (a.dimension() == 1) return {detail::w2_sorted_1d(a, b), false};
  if (n <= 256) {
    Mat cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        cost(i, j) = (a.point(i) - b.point(j)).squaredNorm();
    return {std::sqrt(detail::assignment_cost(cost) / n), false};
  }
  // sliced approximation: average of squared 1-D distances over random
  // directions
  constexpr int kDirections = 64;
  double acc = 0.0;
  for (int k = 0; k < kDirections; ++k) {
    Vec dir(a.dimension());
    for (int i = 0; i < a.dimension(); ++i)
      dir[i] = gaussian(0x5713cedULL, NoiseRole::Aux, k, 0, i);
    dir.normalize();
    Mat pa = dir.transpose() * a.points();
    Mat pb = dir.transpose() * b.points();
    const double d = detail::w2_sorted_1d(ParticleCloud(pa), ParticleCloud(pb));
    acc += d * d;
  }
  return {std::sqrt(acc * a.dimension() / kDirections), true};
}

inline double w2_distance(const ParticleCloud& a, const ParticleCloud& b) {
  return w2_distance_info(a, b).value;
}

}  // namespace msmv
