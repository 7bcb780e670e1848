#ifndef TREEVIEW_NORMALS_HPP
#define TREEVIEW_NORMALS_HPP

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <cmath>
#include <vector>

#include "treeview/kdtree.hpp"
#include "treeview/parallel.hpp"
#include "treeview/types.hpp"

namespace treeview {

struct NormalParams {
  int neighbor_count = 20;
};

struct NormalEstimation {
  PointCloud cloud;                        // normals populated
  std::vector<std::size_t> degenerate;     // indices whose plane fit was ambiguous
};

/// Result of a single local plane fit.
struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();
  bool degenerate = false;
};

/// Normal of the least-squares plane through `neighbors`: the eigenvector of
/// the smallest covariance eigenvalue. When the two smallest eigenvalues
/// coincide the direction within their eigenspace closest to +/-z is used;
/// coincident neighbours give +z. Both cases are flagged.
inline PlaneFit fit_plane_normal(const std::vector<Vec3>& neighbors) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : neighbors) centroid += p;
  centroid /= static_cast<double>(neighbors.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : neighbors) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(neighbors.size());

  const double scale = cov.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return {Vec3::UnitZ(), true};

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov / scale);
  const Vec3 ev = solver.eigenvalues();  // ascending
  const Eigen::Matrix3d vecs = solver.eigenvectors();
  if (ev[1] - ev[0] < 1e-12 * std::max(std::abs(ev[2]), 1e-300)) {
    const Vec3 e0 = vecs.col(0), e1 = vecs.col(1);
    Vec3 n = e0 * e0.z() + e1 * e1.z();  // projection of z onto the eigenspace
    const double len = n.norm();
    n = len > 1e-12 ? Vec3(n / len) : e0.normalized();
    return {n, true};
  }
  return {vecs.col(0).normalized(), false};
}

/// Per-point normals from the `neighbor_count` nearest other points.
inline NormalEstimation estimate_normals(const PointCloud& cloud, const NormalParams& params = {},
                                         unsigned jobs = 1) {
  if (params.neighbor_count < 3) throw Error("normal estimation needs at least 3 neighbours");
  const auto k = static_cast<std::size_t>(params.neighbor_count);
  if (cloud.size() < k + 1)
    throw Error(fmt::format("normal estimation with N={} needs at least {} points, cloud has {}",
                            k, k + 1, cloud.size()));

  const KdTree3 tree(cloud.points);
  NormalEstimation out{cloud, {}};
  out.cloud.normals.assign(cloud.size(), Vec3::UnitZ());
  std::vector<char> flags(cloud.size(), 0);
  parallel_for(cloud.size(), jobs, [&](std::size_t i) {
    const auto nn = tree.knn(cloud.points[i], k, i);
    std::vector<Vec3> neighbors;
    neighbors.reserve(nn.size());
    for (const auto& [d2, idx] : nn) neighbors.push_back(cloud.points[idx]);
    const PlaneFit fit = fit_plane_normal(neighbors);
    out.cloud.normals[i] = fit.normal;
    flags[i] = fit.degenerate;
  });
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) out.degenerate.push_back(i);
  return out;
}

/// Flips normals so that none points towards the trunk axis: afterwards
/// dot(n, (t_x - x, t_y - y, 0)) <= 0 for every point. Points on the axis
/// keep their sign.
inline PointCloud orient_outward(const PointCloud& cloud, const TrunkEstimate& trunk) {
  if (!cloud.has_normals()) throw Error("orient_outward requires normals");
  PointCloud out = cloud;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Vec3& p = out.points[i];
    const Vec3 to_axis(trunk.x - p.x(), trunk.y - p.y(), 0.0);
    if (to_axis.norm() < 1e-9) continue;
    if (out.normals[i].dot(to_axis) > 0.0) out.normals[i] = -out.normals[i];
  }
  return out;
}

}  // namespace treeview

#endif  // TREEVIEW_NORMALS_HPP
