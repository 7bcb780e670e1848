#ifndef TREEVIEW_GEOREG_HPP
#define TREEVIEW_GEOREG_HPP

#include <Eigen/Dense>
#include <fmt/format.h>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "treeview/kdtree.hpp"
#include "treeview/preprocess.hpp"
#include "treeview/text.hpp"
#include "treeview/types.hpp"

namespace treeview {

/// x_global = rotation * x_local + translation
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

  /// this ∘ other: applies `other` first.
  RigidTransform operator*(const RigidTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    const Eigen::Matrix3d rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  bool is_proper(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

struct RigidFit {
  RigidTransform transform;
  double rms = 0.0;  // root mean squared 3D anchor residual, metres
};

/// Least-squares rigid transform mapping `local` onto `global` (Kabsch with
/// centroid removal and a reflection guard).
inline RigidFit fit_rigid(std::span<const Vec3> local, std::span<const Vec3> global) {
  if (local.size() != global.size())
    throw Error(fmt::format("anchor count mismatch: {} local vs {} global", local.size(), global.size()));
  if (local.size() < 3) throw Error(fmt::format("need at least 3 anchor pairs, got {}", local.size()));
  const double n = static_cast<double>(local.size());

  Vec3 cl = Vec3::Zero(), cg = Vec3::Zero();
  for (std::size_t i = 0; i < local.size(); ++i) {
    cl += local[i];
    cg += global[i];
  }
  cl /= n;
  cg /= n;

  Eigen::MatrixXd L(3, local.size()), G(3, local.size());
  for (std::size_t i = 0; i < local.size(); ++i) {
    L.col(static_cast<Eigen::Index>(i)) = local[i] - cl;
    G.col(static_cast<Eigen::Index>(i)) = global[i] - cg;
  }
  for (const auto* m : {&L, &G}) {
    const Vec3 s = Eigen::JacobiSVD<Eigen::MatrixXd>(*m).singularValues();
    if (!(s[0] > 0.0) || s[1] <= 1e-9 * s[0])
      throw Error("anchor configuration is collinear (rank deficient)");
  }

  const Eigen::Matrix3d H = L * G.transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  RigidFit fit;
  fit.transform.rotation = V * D * U.transpose();
  fit.transform.translation = cg - fit.transform.rotation * cl;
  double sq = 0.0;
  for (std::size_t i = 0; i < local.size(); ++i) sq += (fit.transform(local[i]) - global[i]).squaredNorm();
  fit.rms = std::sqrt(sq / n);
  return fit;
}

/// Maps coordinates, rotates normals; intensities are carried over.
inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = t(p);
  for (auto& nrm : out.normals) nrm = (t.rotation * nrm).normalized();
  return out;
}

struct MatchPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // sorted by index into A
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;
};

/// Pairs (a, b) that are each other's nearest neighbour and lie strictly
/// closer than `threshold`. Distance ties resolve to the lower index.
template <int Dim>
MatchResult mutual_nn_match(std::span<const Eigen::Matrix<double, Dim, 1>> a,
                            std::span<const Eigen::Matrix<double, Dim, 1>> b, double threshold) {
  if (!(threshold > 0.0)) throw Error("match threshold must be positive");
  MatchResult result;
  std::vector<char> used_b(b.size(), 0);
  if (!a.empty() && !b.empty()) {
    const KdTree<Dim> tree_a(a), tree_b(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto nn = tree_b.knn(a[i], 1);
      const std::size_t j = nn.front().second;
      if (tree_a.nearest(b[j]) != i) continue;
      const double d = std::sqrt(nn.front().first);
      if (d < threshold) {
        result.pairs.push_back({i, j, d});
        used_b[j] = 1;
      }
    }
  }
  std::vector<char> used_a(a.size(), 0);
  for (const auto& p : result.pairs) used_a[p.a] = 1;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!used_a[i]) result.unmatched_a.push_back(i);
  for (std::size_t j = 0; j < b.size(); ++j)
    if (!used_b[j]) result.unmatched_b.push_back(j);
  return result;
}

inline MatchResult mutual_nn_match(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                                   double threshold = 3.0) {
  return mutual_nn_match<2>(std::span<const Vec2>(a), std::span<const Vec2>(b), threshold);
}

inline MatchResult mutual_nn_match(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                                   double threshold = 3.0) {
  return mutual_nn_match<3>(std::span<const Vec3>(a), std::span<const Vec3>(b), threshold);
}

/// Planimetric tree position: the trunk estimate, or the xy centroid.
inline Vec2 tree_position(const PointCloud& cloud, bool use_centroid = false) {
  if (use_centroid) {
    if (cloud.empty()) throw Error("cannot position an empty cloud");
    Vec3 c = Vec3::Zero();
    for (const auto& p : cloud.points) c += p;
    c /= static_cast<double>(cloud.size());
    return {c.x(), c.y()};
  }
  const auto t = estimate_trunk(cloud);
  return {t.x, t.y};
}

/// Named positions, as read from `id,x,y` CSV.
struct PositionTable {
  std::vector<std::string> ids;
  std::vector<Vec2> positions;
};

inline PositionTable parse_positions(std::string_view data, const std::string& name) {
  PositionTable table;
  bool header = true;
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (text::trim(line).empty()) return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    auto f = text::split(line, ',');
    if (header) {
      header = false;
      if (f.size() < 3 || f[0] != "id" || f[1] != "x" || f[2] != "y")
        throw ParseError(where, "expected header 'id,x,y'");
      return;
    }
    if (f.size() < 3) throw ParseError(where, "expected id,x,y");
    auto x = text::to_double(f[1]);
    auto y = text::to_double(f[2]);
    if (!x || !y) throw ParseError(where, "bad coordinate");
    table.ids.emplace_back(f[0]);
    table.positions.emplace_back(*x, *y);
  });
  return table;
}

inline std::string format_positions(const PositionTable& table) {
  std::string out = "id,x,y\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i)
    out += fmt::format("{},{:.6f},{:.6f}\n", table.ids[i], table.positions[i].x(), table.positions[i].y());
  return out;
}

/// `id_A,id_B,distance_m` rows, then `# unmatched_A` and `# unmatched_B`
/// sections listing one id per line.
inline std::string format_match_csv(const MatchResult& result, const std::vector<std::string>& ids_a,
                                    const std::vector<std::string>& ids_b) {
  std::string out = "id_A,id_B,distance_m\n";
  for (const auto& p : result.pairs) out += fmt::format("{},{},{:.6f}\n", ids_a[p.a], ids_b[p.b], p.distance);
  out += "# unmatched_A\n";
  for (auto i : result.unmatched_a) out += ids_a[i] + "\n";
  out += "# unmatched_B\n";
  for (auto j : result.unmatched_b) out += ids_b[j] + "\n";
  return out;
}

/// Anchor pairs from `xl,yl,zl,xg,yg,zg` CSV.
struct AnchorPairs {
  std::vector<Vec3> local;
  std::vector<Vec3> global;
};

inline AnchorPairs parse_anchors(std::string_view data, const std::string& name) {
  AnchorPairs anchors;
  bool header = true;
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (text::trim(line).empty()) return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    auto f = text::split(line, ',');
    if (header) {
      header = false;
      if (text::trim(line) != "xl,yl,zl,xg,yg,zg") throw ParseError(where, "expected header 'xl,yl,zl,xg,yg,zg'");
      return;
    }
    if (f.size() != 6) throw ParseError(where, "expected 6 fields");
    double v[6];
    for (int i = 0; i < 6; ++i) {
      auto d = text::to_double(f[i]);
      if (!d) throw ParseError(where, fmt::format("bad number '{}'", f[i]));
      v[i] = *d;
    }
    anchors.local.emplace_back(v[0], v[1], v[2]);
    anchors.global.emplace_back(v[3], v[4], v[5]);
  });
  return anchors;
}

}  // namespace treeview

#endif  // TREEVIEW_GEOREG_HPP
