#ifndef TREEVIEW_PROJECTION_HPP
#define TREEVIEW_PROJECTION_HPP

// Orthographic multi-view rendering of tree segments. The cloud is turned
// about z and projected onto the xz-plane with the viewer on the +y side;
// slice images drop the points nearest the viewer (y > t_y + k).

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "treeview/image.hpp"
#include "treeview/types.hpp"

namespace treeview {

enum class Coloring { WOP, OP, NV };

inline std::string_view to_string(Coloring c) {
  switch (c) {
    case Coloring::WOP: return "WOP";
    case Coloring::OP: return "OP";
    case Coloring::NV: return "NV";
  }
  return "?";
}

inline std::optional<Coloring> parse_coloring(std::string_view s) {
  if (s == "WOP" || s == "wop") return Coloring::WOP;
  if (s == "OP" || s == "op") return Coloring::OP;
  if (s == "NV" || s == "nv") return Coloring::NV;
  return std::nullopt;
}

/// Which point colours a pixel hit by several points.
enum class DepthRule {
  max_y,          // nearest the viewer; ties keep the earlier point
  last_write,     // the last point in cloud order
  max_intensity,  // brightest over the selected channels; ties keep the earlier
};

inline std::optional<DepthRule> parse_depth_rule(std::string_view s) {
  if (s == "max_y") return DepthRule::max_y;
  if (s == "last_write") return DepthRule::last_write;
  if (s == "max_intensity") return DepthRule::max_intensity;
  return std::nullopt;
}

inline std::string_view to_string(DepthRule r) {
  switch (r) {
    case DepthRule::max_y: return "max_y";
    case DepthRule::last_write: return "last_write";
    case DepthRule::max_intensity: return "max_intensity";
  }
  return "?";
}

/// Viewing angles used for training images.
inline std::vector<double> training_angles() { return {0.0, 72.0, 144.0, 216.0, 288.0}; }

/// `count` angles in uniform steps from 0 (25 for inference: 14.4 degree steps).
inline std::vector<double> uniform_angles(int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i) out.push_back(360.0 * i / count);
  return out;
}

struct RenderConfig {
  int image_size = 1024;
  std::vector<double> angles_deg = training_angles();
  double slice_offset = 0.7;  // metres beyond the trunk kept in slice images
  Coloring coloring = Coloring::WOP;
  std::vector<int> channels = {1};  // 1-based intensity channels, OP only
  bool smoothing = true;            // never applied to WOP
  double smoothing_sigma = 0.85;
  DepthRule depth_rule = DepthRule::max_y;
  double margin = 0.02;  // frame side = (1 + margin) * largest xz extent

  void validate() const {
    if (image_size < 8) throw Error("image_size must be at least 8");
    for (double a : angles_deg)
      if (!(a >= 0.0 && a < 360.0)) throw Error(fmt::format("angle {} outside [0, 360)", a));
    if (!(slice_offset >= 0.0) && !std::isinf(slice_offset)) throw Error("slice_offset must be non-negative");
    if (!(margin >= 0.0)) throw Error("margin must be non-negative");
    if (coloring == Coloring::OP) {
      if (channels.empty() || channels.size() > 3) throw Error("OP needs 1 to 3 channels");
      for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1 || channels[i] > 3) throw Error("OP channels must be in {1,2,3}");
        for (std::size_t j = 0; j < i; ++j)
          if (channels[i] == channels[j]) throw Error("OP channels must be distinct");
      }
    }
  }
};

struct ImageMeta {
  std::string tree_id;
  std::string scan_id;
  double angle_deg = 0.0;
  bool sliced = false;
  Coloring coloring = Coloring::WOP;
  std::vector<int> channels;
};

struct ProjectionImage {
  Image image;
  ImageMeta meta;
};

/// Right-handed rotation about z; normals turn with the points.
inline PointCloud rotate_z(const PointCloud& cloud, double angle_deg) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  PointCloud out = cloud;
  auto turn = [&](Vec3& v) {
    const double x = v.x(), y = v.y();
    v.x() = c * x - s * y;
    v.y() = s * x + c * y;
  };
  for (auto& p : out.points) turn(p);
  for (auto& n : out.normals) turn(n);
  return out;
}

inline TrunkEstimate rotate_z(const TrunkEstimate& t, double angle_deg) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  return {c * t.x - s * t.y, s * t.x + c * t.y};
}

/// Points with y <= t_y + k (inclusive).
inline PointCloud slice_points(const PointCloud& cloud, const TrunkEstimate& trunk, double k) {
  std::vector<std::size_t> keep;
  keep.reserve(cloud.size());
  const double limit = trunk.y + k;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.points[i].y() <= limit) keep.push_back(i);
  return cloud.select(keep);
}

/// Square xz window mapped onto an image; row 0 is the top (largest z).
struct RasterFrame {
  double left = 0.0;  // x of the left edge
  double top = 0.0;   // z of the top edge
  double side = 1.0;  // metres
  int size = 1;       // pixels

  /// Pixel (column, row) of a point.
  std::pair<int, int> pixel(const Vec3& p) const {
    const double scale = size / side;
    const int col = static_cast<int>(std::floor((p.x() - left) * scale));
    const int row = static_cast<int>(std::floor((top - p.z()) * scale));
    return {std::clamp(col, 0, size - 1), std::clamp(row, 0, size - 1)};
  }

  double pixel_size() const { return side / size; }
};

/// Square frame centred on the xz bounding box, side = (1 + margin) times
/// the larger extent. A degenerate (single point) box gets a 1 m side.
inline RasterFrame compute_frame(const PointCloud& cloud, int image_size, double margin = 0.02) {
  if (cloud.empty()) throw Error("cannot frame an empty cloud");
  double xmin = cloud.points.front().x(), xmax = xmin;
  double zmin = cloud.points.front().z(), zmax = zmin;
  for (const auto& p : cloud.points) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    zmin = std::min(zmin, p.z());
    zmax = std::max(zmax, p.z());
  }
  double side = std::max(xmax - xmin, zmax - zmin) * (1.0 + margin);
  if (!(side > 0.0)) side = 1.0;
  const double cx = 0.5 * (xmin + xmax), cz = 0.5 * (zmin + zmax);
  return {cx - 0.5 * side, cz + 0.5 * side, side, image_size};
}

/// Raster ground size of one pixel, metres.
inline double pixel_ground_size(const PointCloud& cloud, const RenderConfig& cfg) {
  return compute_frame(cloud, cfg.image_size, cfg.margin).pixel_size();
}

/// Intensity to byte: round(i / 65536 * 255), half up.
inline std::uint8_t intensity_byte(std::uint32_t intensity) {
  return to_byte(static_cast<double>(intensity) / static_cast<double>(kMaxIntensity) * 255.0);
}

/// Normal component in [-1, 1] to byte: round((n + 1) / 2 * 255), half up.
inline std::uint8_t normal_byte(double component) { return to_byte((component + 1.0) / 2.0 * 255.0); }

/// Colour of point `i` under the configured scheme (before smoothing).
inline std::array<std::uint8_t, 3> point_color(const PointCloud& cloud, std::size_t i, const RenderConfig& cfg) {
  switch (cfg.coloring) {
    case Coloring::WOP:
      return {255, 255, 255};
    case Coloring::NV: {
      const Vec3& n = cloud.normals[i];
      return {normal_byte(n.x()), normal_byte(n.y()), normal_byte(n.z())};
    }
    case Coloring::OP: {
      const auto& in = cloud.intensities[i];
      if (cfg.channels.size() == 1) {
        const auto v = intensity_byte(in[cfg.channels.front() - 1]);
        return {v, v, v};
      }
      std::array<std::uint8_t, 3> rgb{0, 0, 0};
      for (int c : cfg.channels) rgb[c - 1] = intensity_byte(in[c - 1]);
      return rgb;
    }
  }
  return {0, 0, 0};
}

inline void check_render_attributes(const PointCloud& cloud, const RenderConfig& cfg) {
  if (cfg.coloring == Coloring::NV && !cloud.has_normals())
    throw Error("NV colouring requires normals");
  if (cfg.coloring == Coloring::OP) {
    for (int c : cfg.channels)
      if (c > cloud.channel_count)
        throw Error(fmt::format("OP channel {} requested but the cloud has {} intensity channel(s)", c,
                                cloud.channel_count));
  }
  if (cfg.depth_rule == DepthRule::max_intensity && !cloud.has_intensities())
    throw Error("max_intensity depth rule requires intensities");
}

/// Draws `cloud` into `frame` without smoothing.
inline Image draw_points(const PointCloud& cloud, const RasterFrame& frame, const RenderConfig& cfg) {
  check_render_attributes(cloud, cfg);
  const int n = frame.size;
  Image img(n, n);
  constexpr std::size_t kEmpty = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> winner(static_cast<std::size_t>(n) * n, kEmpty);
  auto brightness = [&](std::size_t i) {
    std::uint64_t s = 0;
    const auto& chans = cfg.coloring == Coloring::OP ? cfg.channels : std::vector<int>{1, 2, 3};
    for (int c : chans)
      if (c <= cloud.channel_count) s += cloud.intensities[i][c - 1];
    return s;
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto [col, row] = frame.pixel(cloud.points[i]);
    std::size_t& w = winner[static_cast<std::size_t>(row) * n + col];
    if (w == kEmpty) {
      w = i;
      continue;
    }
    switch (cfg.depth_rule) {
      case DepthRule::max_y:
        if (cloud.points[i].y() > cloud.points[w].y()) w = i;
        break;
      case DepthRule::last_write:
        w = i;
        break;
      case DepthRule::max_intensity:
        if (brightness(i) > brightness(w)) w = i;
        break;
    }
  }
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col) {
      const std::size_t w = winner[static_cast<std::size_t>(row) * n + col];
      if (w == kEmpty) continue;
      const auto rgb = point_color(cloud, w, cfg);
      for (int c = 0; c < 3; ++c) img.at(col, row, c) = rgb[c];
    }
  return img;
}

/// Renders one view of a cloud already rotated to the viewing angle. The
/// frame always comes from the full cloud so full and slice images align.
/// `smooth = false` returns the raw raster regardless of the config.
inline Image rasterize(const PointCloud& cloud, const RenderConfig& cfg, const TrunkEstimate& trunk,
                       bool sliced, bool smooth = true) {
  if (cloud.empty()) throw Error("cannot rasterize an empty cloud");
  const RasterFrame frame = compute_frame(cloud, cfg.image_size, cfg.margin);
  Image img = sliced ? draw_points(slice_points(cloud, trunk, cfg.slice_offset), frame, cfg)
                     : draw_points(cloud, frame, cfg);
  if (smooth && cfg.smoothing && cfg.coloring != Coloring::WOP) img = gaussian_smooth(img, cfg.smoothing_sigma);
  return img;
}

/// One full and one slice image per configured angle, in angle order.
inline std::vector<ProjectionImage> render_tree(const TreeSegment& segment, const RenderConfig& cfg,
                                                const TrunkEstimate& trunk) {
  cfg.validate();
  check_render_attributes(segment.cloud, cfg);
  std::vector<ProjectionImage> out;
  out.reserve(2 * cfg.angles_deg.size());
  for (double angle : cfg.angles_deg) {
    const PointCloud rotated = rotate_z(segment.cloud, angle);
    const TrunkEstimate t = rotate_z(trunk, angle);
    for (bool sliced : {false, true}) {
      ImageMeta meta{segment.id, segment.scan_id, angle, sliced, cfg.coloring,
                     cfg.coloring == Coloring::OP ? cfg.channels : std::vector<int>{}};
      out.push_back({rasterize(rotated, cfg, t, sliced), std::move(meta)});
    }
  }
  return out;
}

// ------------------------------------------------------------ file names

/// `<scan>__<tree>__a<angle>__<full|slice>.png`, angle rounded to whole
/// degrees and zero padded to three digits.
inline std::string image_file_name(const ImageMeta& meta) {
  return fmt::format("{}__{}__a{:03d}__{}.png", meta.scan_id, meta.tree_id,
                     static_cast<int>(std::lround(meta.angle_deg)) % 360, meta.sliced ? "slice" : "full");
}

/// Inverse of image_file_name; nullopt if `name` does not follow the grammar.
inline std::optional<ImageMeta> parse_image_file_name(std::string_view name) {
  if (name.size() < 4 || name.substr(name.size() - 4) != ".png") return std::nullopt;
  name.remove_suffix(4);
  std::vector<std::string_view> parts;
  for (;;) {
    const auto pos = name.find("__");
    if (pos == std::string_view::npos) {
      parts.push_back(name);
      break;
    }
    parts.push_back(name.substr(0, pos));
    name.remove_prefix(pos + 2);
  }
  if (parts.size() != 4 || parts[0].empty() || parts[1].empty()) return std::nullopt;
  if (parts[2].size() < 2 || parts[2][0] != 'a') return std::nullopt;
  auto angle = text::to_int(parts[2].substr(1));
  if (!angle || *angle < 0 || *angle >= 360) return std::nullopt;
  if (parts[3] != "full" && parts[3] != "slice") return std::nullopt;
  ImageMeta meta;
  meta.scan_id = std::string(parts[0]);
  meta.tree_id = std::string(parts[1]);
  meta.angle_deg = static_cast<double>(*angle);
  meta.sliced = parts[3] == "slice";
  return meta;
}

}  // namespace treeview

#endif  // TREEVIEW_PROJECTION_HPP
