#ifndef TREEVIEW_PREPROCESS_HPP
#define TREEVIEW_PREPROCESS_HPP

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "treeview/kdtree.hpp"
#include "treeview/parallel.hpp"
#include "treeview/random.hpp"
#include "treeview/types.hpp"

namespace treeview {

/// Statistical outlier removal parameters.
struct SorParams {
  int k_neighbors = 8;
  double n_sigma = 1.0;
};

/// Mean distance from every point to its k nearest other points.
inline std::vector<double> mean_neighbor_distances(const PointCloud& cloud, int k, unsigned jobs = 1) {
  const KdTree3 tree(cloud.points);
  std::vector<double> means(cloud.size());
  parallel_for(cloud.size(), jobs, [&](std::size_t i) {
    const auto nn = tree.knn(cloud.points[i], static_cast<std::size_t>(k), i);
    double sum = 0.0;
    for (const auto& [d2, idx] : nn) sum += std::sqrt(d2);
    means[i] = sum / static_cast<double>(nn.size());
  });
  return means;
}

/// Keeps a point iff its mean k-NN distance is at most the global mean plus
/// n_sigma sample standard deviations of those means. Order is preserved.
inline PointCloud sor_filter(const PointCloud& cloud, const SorParams& params, unsigned jobs = 1) {
  if (params.k_neighbors < 1) throw Error("SOR needs k_neighbors >= 1");
  if (!(params.n_sigma >= 0.0)) throw Error("SOR needs n_sigma >= 0");
  if (cloud.size() <= static_cast<std::size_t>(params.k_neighbors))
    throw Error(fmt::format("SOR needs more than {} points, cloud has {}", params.k_neighbors,
                            cloud.size()));

  const auto means = mean_neighbor_distances(cloud, params.k_neighbors, jobs);
  const double n = static_cast<double>(means.size());
  const double mean = std::accumulate(means.begin(), means.end(), 0.0) / n;
  double sq = 0.0;
  for (double m : means) sq += (m - mean) * (m - mean);
  const double stddev = std::sqrt(sq / (n - 1.0));
  double threshold = stddev > 0.0 ? mean + params.n_sigma * stddev : mean;
  threshold += 1e-12 * std::abs(threshold);  // equal means must all survive

  std::vector<std::size_t> keep;
  keep.reserve(cloud.size());
  for (std::size_t i = 0; i < means.size(); ++i)
    if (means[i] <= threshold) keep.push_back(i);
  return cloud.select(keep);
}

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace detail

/// Greedy minimum-distance thinning: points are visited in a seeded random
/// order and accepted when no accepted point lies closer than `spacing`.
/// The result is maximal and returned in the input order.
inline PointCloud min_spacing_subsample(const PointCloud& cloud, double spacing, std::uint64_t seed) {
  if (!(spacing > 0.0)) throw Error("subsample spacing must be positive");
  using detail::CellKey;
  std::unordered_map<CellKey, std::vector<std::size_t>, detail::CellHash> grid;
  grid.reserve(cloud.size());
  auto cell_of = [&](const Vec3& p) {
    return CellKey{static_cast<std::int64_t>(std::floor(p.x() / spacing)),
                   static_cast<std::int64_t>(std::floor(p.y() / spacing)),
                   static_cast<std::int64_t>(std::floor(p.z() / spacing))};
  };
  const double spacing2 = spacing * spacing;
  std::vector<std::size_t> keep;
  for (std::size_t idx : random_permutation(cloud.size(), seed)) {
    const Vec3& p = cloud.points[idx];
    const CellKey c = cell_of(p);
    bool blocked = false;
    for (std::int64_t dx = -1; dx <= 1 && !blocked; ++dx)
      for (std::int64_t dy = -1; dy <= 1 && !blocked; ++dy)
        for (std::int64_t dz = -1; dz <= 1 && !blocked; ++dz) {
          auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (std::size_t j : it->second)
            if ((cloud.points[j] - p).squaredNorm() < spacing2) {
              blocked = true;
              break;
            }
        }
    if (blocked) continue;
    grid[c].push_back(idx);
    keep.push_back(idx);
  }
  std::sort(keep.begin(), keep.end());
  return cloud.select(keep);
}

namespace detail {

inline double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return (lower + upper) / 2.0;
}

inline TrunkEstimate median_xy(const PointCloud& cloud, const std::vector<std::size_t>& idx) {
  std::vector<double> xs, ys;
  xs.reserve(idx.size());
  ys.reserve(idx.size());
  for (auto i : idx) {
    xs.push_back(cloud.points[i].x());
    ys.push_back(cloud.points[i].y());
  }
  return {median(std::move(xs)), median(std::move(ys))};
}

}  // namespace detail

struct TrunkParams {
  double basal_slab = 0.5;         // metres above the lowest point
  double fallback_fraction = 0.1;  // lowest share of points
  std::size_t min_points = 20;
};

/// Stem position as the per-axis median xy of the basal slab, falling back
/// to the lowest points and then to the whole cloud when a slab is sparse.
inline TrunkEstimate estimate_trunk(const PointCloud& cloud, const TrunkParams& params = {}) {
  if (cloud.empty()) throw Error("cannot estimate the trunk of an empty cloud");
  double zmin = cloud.points.front().z();
  for (const auto& p : cloud.points) zmin = std::min(zmin, p.z());

  std::vector<std::size_t> slab;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.points[i].z() <= zmin + params.basal_slab) slab.push_back(i);
  if (slab.size() >= params.min_points) return detail::median_xy(cloud, slab);

  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cloud.points[a].z() < cloud.points[b].z();
  });
  const auto lowest = static_cast<std::size_t>(
      std::ceil(params.fallback_fraction * static_cast<double>(cloud.size())));
  if (lowest >= params.min_points) order.resize(lowest);
  return detail::median_xy(cloud, order);
}

inline TrunkEstimate estimate_trunk(const TreeSegment& segment, const TrunkParams& params = {}) {
  return estimate_trunk(segment.cloud, params);
}

/// Thinning followed by outlier removal, the order used for the field data.
struct PreprocessParams {
  double spacing = 0.02;  // 0 disables thinning
  SorParams sor;
  std::uint64_t seed = 0;
};

inline PointCloud preprocess_cloud(const PointCloud& cloud, const PreprocessParams& params,
                                   unsigned jobs = 1) {
  PointCloud thinned = params.spacing > 0.0 ? min_spacing_subsample(cloud, params.spacing, params.seed)
                                            : cloud;
  return sor_filter(thinned, params.sor, jobs);
}

}  // namespace treeview

#endif  // TREEVIEW_PREPROCESS_HPP
