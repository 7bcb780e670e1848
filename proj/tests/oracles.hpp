#ifndef TREEVIEW_TESTS_ORACLES_HPP
#define TREEVIEW_TESTS_ORACLES_HPP

// Independent reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <tuple>
#include <vector>

#include <Eigen/Geometry>

#include "treeview/types.hpp"

namespace treeview::testing {

/// Uniformly random rotation via a normalized Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Angle of the rotation taking `a` to `b`.
inline double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return Eigen::AngleAxisd(Eigen::Matrix3d(a.transpose() * b)).angle();
}

/// Double-loop mutual nearest neighbours; ties go to the lower index.
template <class P>
std::vector<std::tuple<std::size_t, std::size_t, double>> brute_force_match(const std::vector<P>& a,
                                                                            const std::vector<P>& b,
                                                                            double threshold) {
  auto nearest = [](const P& q, const std::vector<P>& set) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < set.size(); ++i) {
      const double d = (set[i] - q).squaredNorm();
      if (d < best_d) best_d = d, best = i;
    }
    return best;
  };
  std::vector<std::tuple<std::size_t, std::size_t, double>> pairs;
  if (a.empty() || b.empty()) return pairs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = nearest(a[i], b);
    if (nearest(b[j], a) != i) continue;
    const double d = (a[i] - b[j]).norm();
    if (d < threshold) pairs.emplace_back(i, j, d);
  }
  return pairs;
}

// Brute-force SOR: all pairwise distances, partial sort, two-pass statistics.
inline std::vector<std::size_t> sor_oracle(const PointCloud& c, int k, double n) {
  const std::size_t m = c.size();
  std::vector<double> means(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) d.push_back((c.points[i] - c.points[j]).norm());
    std::sort(d.begin(), d.end());
    double s = 0;
    for (int q = 0; q < k; ++q) s += d[q];
    means[i] = s / k;
  }
  double mu = 0;
  for (double v : means) mu += v;
  mu /= m;
  double var = 0;
  for (double v : means) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / (m - 1));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < m; ++i)
    if (means[i] <= mu + n * sd + 1e-9) keep.push_back(i);
  return keep;
}

struct MetricsOracle {
  double oa = 0, maa = 0, ma_f1 = 0, kappa = 0;
  std::vector<double> precision, recall, f1;
};

/// Metrics from a confusion matrix built by an explicit double loop over
/// (truth class, predicted class) pairs.
inline MetricsOracle metrics_oracle(const std::vector<std::size_t>& y, const std::vector<std::size_t>& y_hat,
                                    std::size_t k) {
  const double n = static_cast<double>(y.size());
  std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] == a && y_hat[i] == b) cm[a][b] += 1.0;
  MetricsOracle m;
  double diag = 0, pe = 0;
  int active = 0;
  for (std::size_t s = 0; s < k; ++s) {
    double row = 0, col = 0;
    for (std::size_t t = 0; t < k; ++t) row += cm[s][t], col += cm[t][s];
    diag += cm[s][s];
    pe += (row / n) * (col / n);
    const double p = col > 0 ? cm[s][s] / col : 0.0;
    const double r = row > 0 ? cm[s][s] / row : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f);
    if (row > 0 || col > 0) {
      m.maa += r;
      m.ma_f1 += f;
      ++active;
    }
  }
  m.maa /= active;
  m.ma_f1 /= active;
  m.oa = diag / n;
  m.kappa = pe >= 1.0 ? 1.0 : (m.oa - pe) / (1.0 - pe);
  return m;
}

}  // namespace treeview::testing

#endif  // TREEVIEW_TESTS_ORACLES_HPP
