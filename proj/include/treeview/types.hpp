#ifndef TREEVIEW_TYPES_HPP
#define TREEVIEW_TYPES_HPP

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace treeview {

/// Upper bound of the raw lidar intensity scale (inclusive).
inline constexpr std::uint32_t kMaxIntensity = 65536;

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Intensities = std::array<std::uint32_t, 3>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the file location of the offending record.
class ParseError : public Error {
public:
  ParseError(const std::string& where, const std::string& what)
      : Error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

private:
  std::string where_;
};

/// Closed set of species labels.
enum class Species : std::uint8_t {
  pine,
  spruce,
  birch,
  maple,
  aspen,
  rowan,
  oak,
  lime,
  alder,
  unknown,
};

inline constexpr std::array<std::string_view, 10> kSpeciesNames = {
    "pine", "spruce", "birch", "maple", "aspen",
    "rowan", "oak", "lime", "alder", "unknown"};

inline std::string_view to_string(Species s) {
  return kSpeciesNames[static_cast<std::size_t>(s)];
}

inline std::optional<Species> parse_species(std::string_view name) {
  for (std::size_t i = 0; i < kSpeciesNames.size(); ++i)
    if (kSpeciesNames[i] == name) return static_cast<Species>(i);
  return std::nullopt;
}

/// Structure-of-arrays point cloud. `intensities` and `normals` are either
/// empty or hold one entry per point.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Intensities> intensities;
  std::vector<Vec3> normals;
  int channel_count = 0;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  bool has_intensities() const noexcept { return channel_count > 0; }
  bool has_normals() const noexcept { return !normals.empty(); }

  void reserve(std::size_t n) {
    points.reserve(n);
    if (has_intensities()) intensities.reserve(n);
  }

  /// Copy of the points selected by `indices`, all attributes carried over.
  PointCloud select(const std::vector<std::size_t>& indices) const {
    PointCloud out;
    out.channel_count = channel_count;
    out.points.reserve(indices.size());
    for (auto i : indices) out.points.push_back(points[i]);
    if (has_intensities()) {
      out.intensities.reserve(indices.size());
      for (auto i : indices) out.intensities.push_back(intensities[i]);
    }
    if (has_normals()) {
      out.normals.reserve(indices.size());
      for (auto i : indices) out.normals.push_back(normals[i]);
    }
    return out;
  }
};

/// Checks the per-point invariants; throws Error naming the first violation.
inline void validate(const PointCloud& cloud) {
  if (cloud.channel_count < 0 || cloud.channel_count > 3)
    throw Error("channel count must be 0, 1 or 3");
  if (cloud.has_intensities() && cloud.intensities.size() != cloud.size())
    throw Error("intensity array size does not match point count");
  if (cloud.has_normals() && cloud.normals.size() != cloud.size())
    throw Error("normal array size does not match point count");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!cloud.points[i].allFinite())
      throw Error("point " + std::to_string(i) + " has non-finite coordinates");
    for (int c = 0; c < cloud.channel_count; ++c)
      if (cloud.intensities[i][c] > kMaxIntensity)
        throw Error("point " + std::to_string(i) + " intensity out of range");
    if (cloud.has_normals() && std::abs(cloud.normals[i].norm() - 1.0) > 1e-6)
      throw Error("point " + std::to_string(i) + " normal is not unit length");
  }
}

struct TreeSegment {
  std::string id;
  std::string scan_id;
  Species species = Species::unknown;
  PointCloud cloud;
};

/// Planimetric position of the stem axis.
struct TrunkEstimate {
  double x = 0.0;
  double y = 0.0;
};

}  // namespace treeview

#endif  // TREEVIEW_TYPES_HPP
