#ifndef TREEVIEW_CLOUD_IO_HPP
#define TREEVIEW_CLOUD_IO_HPP

// Point-cloud segment readers and writers: whitespace-separated text (.xyz,
// .txt), PLY (ascii and binary little-endian) and uncompressed LAS 1.2-1.4
// with point formats 0-3.

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "treeview/text.hpp"
#include "treeview/types.hpp"

namespace treeview {

static_assert(std::endian::native == std::endian::little,
              "binary readers assume a little-endian host");

enum class CloudFormat { xyz, ply, las };

inline std::string_view to_string(CloudFormat f) {
  switch (f) {
    case CloudFormat::xyz: return "xyz";
    case CloudFormat::ply: return "ply";
    case CloudFormat::las: return "las";
  }
  return "?";
}

/// Format implied by a file extension, if supported.
inline std::optional<CloudFormat> format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz;
  if (ext == ".ply") return CloudFormat::ply;
  if (ext == ".las") return CloudFormat::las;
  return std::nullopt;
}

inline std::string_view extension_for(CloudFormat f) {
  switch (f) {
    case CloudFormat::xyz: return ".xyz";
    case CloudFormat::ply: return ".ply";
    case CloudFormat::las: return ".las";
  }
  return "";
}

struct WriteOptions {
  bool ply_binary = true;
};

namespace detail {

inline std::uint32_t checked_intensity(double v, const std::string& where) {
  if (!(v >= 0.0) || v > static_cast<double>(kMaxIntensity))
    throw ParseError(where, fmt::format("intensity {} outside [0, {}]", v, kMaxIntensity));
  if (v != std::floor(v)) throw ParseError(where, fmt::format("intensity {} is not integral", v));
  return static_cast<std::uint32_t>(v);
}

// ---------------------------------------------------------------- xyz text

inline PointCloud parse_xyz(std::string_view data, const std::string& name) {
  PointCloud cloud;
  int columns = -1;
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tok = text::tokens(line);
    if (tok.empty()) return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    const int n = static_cast<int>(tok.size());
    if (n != 3 && n != 4 && n != 6)
      throw ParseError(where, fmt::format("expected 3, 4 or 6 columns, got {}", n));
    if (columns < 0) {
      columns = n;
      cloud.channel_count = n == 3 ? 0 : n - 3;
    } else if (n != columns) {
      throw ParseError(where, fmt::format("mixed channel counts ({} vs {} columns)", n, columns));
    }
    Vec3 p;
    for (int d = 0; d < 3; ++d) {
      auto v = text::to_double(tok[d]);
      if (!v || !std::isfinite(*v))
        throw ParseError(where, fmt::format("bad coordinate '{}'", tok[d]));
      p[d] = *v;
    }
    cloud.points.push_back(p);
    if (cloud.channel_count > 0) {
      Intensities in{0, 0, 0};
      for (int c = 0; c < cloud.channel_count; ++c) {
        auto v = text::to_double(tok[3 + c]);
        if (!v) throw ParseError(where, fmt::format("bad intensity '{}'", tok[3 + c]));
        in[c] = checked_intensity(*v, where);
      }
      cloud.intensities.push_back(in);
    }
  });
  return cloud;
}

inline std::string format_xyz(const PointCloud& cloud) {
  if (cloud.has_normals())
    throw Error("xyz text has no normal columns; write PLY to keep normals");
  fmt::memory_buffer out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    fmt::format_to(std::back_inserter(out), "{:.9f} {:.9f} {:.9f}", p.x(), p.y(), p.z());
    for (int c = 0; c < cloud.channel_count; ++c)
      fmt::format_to(std::back_inserter(out), " {}", cloud.intensities[i][c]);
    out.push_back('\n');
  }
  return fmt::to_string(out);
}

// --------------------------------------------------------------------- PLY

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline std::optional<PlyType> ply_type(std::string_view s) {
  static const std::map<std::string_view, PlyType> types = {
      {"char", PlyType::i8},     {"int8", PlyType::i8},     {"uchar", PlyType::u8},
      {"uint8", PlyType::u8},    {"short", PlyType::i16},   {"int16", PlyType::i16},
      {"ushort", PlyType::u16},  {"uint16", PlyType::u16},  {"int", PlyType::i32},
      {"int32", PlyType::i32},   {"uint", PlyType::u32},    {"uint32", PlyType::u32},
      {"float", PlyType::f32},   {"float32", PlyType::f32}, {"double", PlyType::f64},
      {"float64", PlyType::f64}};
  auto it = types.find(s);
  if (it == types.end()) return std::nullopt;
  return it->second;
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8: case PlyType::u8: return 1;
    case PlyType::i16: case PlyType::u16: return 2;
    case PlyType::i32: case PlyType::u32: case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline double ply_load(PlyType t, const char* p) {
  switch (t) {
    case PlyType::i8: return load<std::int8_t>(p);
    case PlyType::u8: return load<std::uint8_t>(p);
    case PlyType::i16: return load<std::int16_t>(p);
    case PlyType::u16: return load<std::uint16_t>(p);
    case PlyType::i32: return load<std::int32_t>(p);
    case PlyType::u32: return load<std::uint32_t>(p);
    case PlyType::f32: return load<float>(p);
    case PlyType::f64: return load<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

inline PointCloud parse_ply(std::string_view data, const std::string& name) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= data.size()) throw ParseError(name, "unexpected end of PLY data");
    auto end = data.find('\n', pos);
    if (end == std::string_view::npos) end = data.size();
    auto line = data.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  };
  auto where = [&] { return fmt::format("{}:{}", name, line_no); };

  if (text::trim(next_line()) != "ply") throw ParseError(where(), "missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  for (;;) {
    auto tok = text::tokens(next_line());
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError(where(), "bad format line");
      if (tok[1] == "ascii") binary = false;
      else if (tok[1] == "binary_little_endian") binary = true;
      else throw ParseError(where(), fmt::format("unsupported PLY format '{}'", tok[1]));
    } else if (tok[0] == "element") {
      auto count = tok.size() == 3 ? text::to_int(tok[2]) : std::nullopt;
      if (!count || *count < 0) throw ParseError(where(), "bad element line");
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(*count), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(where(), "property before element");
      PlyProperty prop;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = ply_type(tok[2]);
        auto it = ply_type(tok[3]);
        if (!ct || !it) throw ParseError(where(), "bad list property type");
        prop = {std::string(tok[4]), *it, true, *ct};
      } else if (tok.size() == 3) {
        auto t = ply_type(tok[1]);
        if (!t) throw ParseError(where(), fmt::format("unknown property type '{}'", tok[1]));
        prop = {std::string(tok[2]), *t, false, PlyType::u8};
      } else {
        throw ParseError(where(), "bad property line");
      }
      elements.back().properties.push_back(prop);
    } else {
      throw ParseError(where(), fmt::format("unexpected header keyword '{}'", tok[0]));
    }
  }

  auto vertex_it = std::find_if(elements.begin(), elements.end(),
                                [](const PlyElement& e) { return e.name == "vertex"; });
  if (vertex_it == elements.end()) throw ParseError(name, "no vertex element");
  const PlyElement& vertex = *vertex_it;

  // Slot per vertex property: 0-2 xyz, 3-5 normal, 6-8 intensity channels.
  std::vector<int> slot(vertex.properties.size(), -1);
  bool seen[9] = {};
  for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
    static const std::map<std::string_view, int> slots = {
        {"x", 0},          {"y", 1},          {"z", 2},
        {"nx", 3},         {"ny", 4},         {"nz", 5},
        {"intensity", 6},  {"intensity1", 6}, {"intensity2", 7},
        {"intensity3", 8}};
    auto it = slots.find(vertex.properties[i].name);
    if (it == slots.end() || vertex.properties[i].is_list) continue;
    if (seen[it->second]) throw ParseError(name, "duplicate vertex property " + vertex.properties[i].name);
    slot[i] = it->second;
    seen[it->second] = true;
  }
  if (!seen[0] || !seen[1] || !seen[2]) throw ParseError(name, "vertex lacks x/y/z");
  const bool has_normals = seen[3] && seen[4] && seen[5];
  int channels = 0;
  if (seen[6] && seen[7] && seen[8]) channels = 3;
  else if (seen[6] && !seen[7] && !seen[8]) channels = 1;
  else if (seen[6] || seen[7] || seen[8])
    throw ParseError(name, "mixed channel counts: intensity channels must be 1 or 3");

  PointCloud cloud;
  cloud.channel_count = channels;
  cloud.points.resize(vertex.count);
  if (has_normals) cloud.normals.resize(vertex.count);
  if (channels > 0) cloud.intensities.assign(vertex.count, Intensities{0, 0, 0});

  double values[9] = {};
  auto store = [&](std::size_t v, const std::string& at) {
    cloud.points[v] = Vec3(values[0], values[1], values[2]);
    if (!cloud.points[v].allFinite()) throw ParseError(at, "non-finite coordinate");
    if (has_normals) {
      Vec3 n(values[3], values[4], values[5]);
      const double len = n.norm();
      if (!(len > 0.0) || !std::isfinite(len)) throw ParseError(at, "zero or non-finite normal");
      cloud.normals[v] = n / len;
    }
    for (int c = 0; c < channels; ++c) cloud.intensities[v][c] = checked_intensity(values[6 + c], at);
  };

  if (!binary) {
    std::size_t v = 0;
    for (const auto& element : elements) {
      for (std::size_t r = 0; r < element.count; ++r) {
        auto tok = text::tokens(next_line());
        const std::string at = where();
        std::size_t t = 0;
        auto take = [&]() -> double {
          if (t >= tok.size()) throw ParseError(at, "too few values");
          auto d = text::to_double(tok[t++]);
          if (!d) throw ParseError(at, fmt::format("bad value '{}'", tok[t - 1]));
          return *d;
        };
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const auto& prop = element.properties[p];
          if (prop.is_list) {
            const double n = take();
            for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) take();
            continue;
          }
          const double value = take();
          if (&element == &vertex && slot[p] >= 0) values[slot[p]] = value;
        }
        if (t != tok.size()) throw ParseError(at, "too many values");
        if (&element == &vertex) store(v++, at);
      }
    }
  } else {
    for (const auto& element : elements) {
      for (std::size_t r = 0; r < element.count; ++r) {
        const std::string at = fmt::format("{}: {} record {} (byte offset {})", name, element.name, r, pos);
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const auto& prop = element.properties[p];
          if (prop.is_list) {
            if (pos + ply_size(prop.count_type) > data.size()) throw ParseError(at, "truncated record");
            const auto n = static_cast<std::size_t>(ply_load(prop.count_type, data.data() + pos));
            pos += ply_size(prop.count_type) + n * ply_size(prop.type);
            continue;
          }
          if (pos + ply_size(prop.type) > data.size()) throw ParseError(at, "truncated record");
          const double value = ply_load(prop.type, data.data() + pos);
          pos += ply_size(prop.type);
          if (&element == &vertex && slot[p] >= 0) values[slot[p]] = value;
        }
        if (&element == &vertex) store(r, at);
      }
    }
  }
  return cloud;
}

template <typename T>
void append(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

inline std::string format_ply(const PointCloud& cloud, const TreeSegment* meta, bool binary) {
  std::uint32_t max_intensity = 0;
  for (const auto& in : cloud.intensities)
    for (int c = 0; c < cloud.channel_count; ++c) max_intensity = std::max(max_intensity, in[c]);
  const bool wide = max_intensity > 65535;
  const char* itype = wide ? "uint" : "ushort";

  std::string out = "ply\n";
  out += binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n";
  if (meta)
    out += fmt::format("comment tree_id={} scan_id={} species={}\n", meta->id, meta->scan_id,
                       to_string(meta->species));
  out += fmt::format("element vertex {}\n", cloud.size());
  out += "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_normals()) out += "property double nx\nproperty double ny\nproperty double nz\n";
  for (int c = 0; c < cloud.channel_count; ++c)
    out += fmt::format("property {} intensity{}\n", itype, c + 1);
  out += "end_header\n";

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    if (binary) {
      for (int d = 0; d < 3; ++d) append(out, p[d]);
      if (cloud.has_normals())
        for (int d = 0; d < 3; ++d) append(out, cloud.normals[i][d]);
      for (int c = 0; c < cloud.channel_count; ++c) {
        if (wide) append(out, cloud.intensities[i][c]);
        else append(out, static_cast<std::uint16_t>(cloud.intensities[i][c]));
      }
    } else {
      out += fmt::format("{:.17g} {:.17g} {:.17g}", p.x(), p.y(), p.z());
      if (cloud.has_normals()) {
        const auto& n = cloud.normals[i];
        out += fmt::format(" {:.17g} {:.17g} {:.17g}", n.x(), n.y(), n.z());
      }
      for (int c = 0; c < cloud.channel_count; ++c) out += fmt::format(" {}", cloud.intensities[i][c]);
      out += '\n';
    }
  }
  return out;
}

// --------------------------------------------------------------------- LAS

inline constexpr double kLasScale = 1e-6;

inline PointCloud parse_las(std::string_view data, const std::string& name) {
  if (data.size() < 227 || data.substr(0, 4) != "LASF") throw ParseError(name, "not a LAS file");
  const char* h = data.data();
  const int major = load<std::uint8_t>(h + 24);
  const int minor = load<std::uint8_t>(h + 25);
  if (major != 1 || minor < 2 || minor > 4)
    throw ParseError(name, fmt::format("unsupported LAS version {}.{}", major, minor));
  const auto offset_to_points = load<std::uint32_t>(h + 96);
  const auto format_byte = load<std::uint8_t>(h + 104);
  if (format_byte & 0xC0) throw ParseError(name, "compressed (LAZ) point data is not supported");
  const int point_format = format_byte & 0x3F;
  if (point_format > 3)
    throw ParseError(name, fmt::format("unsupported point data format {}", point_format));
  const auto record_length = load<std::uint16_t>(h + 105);
  static constexpr std::uint16_t kMinLength[4] = {20, 28, 26, 34};
  if (record_length < kMinLength[point_format])
    throw ParseError(name, fmt::format("point record length {} too short for format {}",
                                       record_length, point_format));
  std::uint64_t count = load<std::uint32_t>(h + 107);
  if (minor == 4 && count == 0 && data.size() >= 255) count = load<std::uint64_t>(h + 247);
  Vec3 scale, offset;
  for (int d = 0; d < 3; ++d) {
    scale[d] = load<double>(h + 131 + 8 * d);
    offset[d] = load<double>(h + 155 + 8 * d);
  }
  if (offset_to_points + count * record_length > data.size())
    throw ParseError(fmt::format("{} (byte offset {})", name, data.size()),
                     "point data truncated");

  PointCloud cloud;
  cloud.channel_count = 1;
  cloud.points.resize(count);
  cloud.intensities.assign(count, Intensities{0, 0, 0});
  bool any_intensity = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    const char* rec = h + offset_to_points + i * record_length;
    for (int d = 0; d < 3; ++d)
      cloud.points[i][d] = load<std::int32_t>(rec + 4 * d) * scale[d] + offset[d];
    const auto intensity = load<std::uint16_t>(rec + 12);
    cloud.intensities[i][0] = intensity;
    any_intensity |= intensity != 0;
  }
  // All-zero intensity means the producer recorded none.
  if (!any_intensity) {
    cloud.channel_count = 0;
    cloud.intensities.clear();
  }
  return cloud;
}

inline std::string format_las(const PointCloud& cloud) {
  if (cloud.channel_count > 1) throw Error("LAS stores a single intensity channel");
  if (cloud.has_normals()) throw Error("LAS point formats 0-3 have no normals; write PLY instead");
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
  if (!cloud.empty()) {
    lo = hi = cloud.points.front();
    for (const auto& p : cloud.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  const Vec3 offset = lo.array().floor();
  for (int d = 0; d < 3; ++d)
    if ((hi[d] - offset[d]) / kLasScale > 2147483647.0)
      throw Error("cloud extent too large for micrometre LAS quantization");

  std::string out(227, '\0');
  char* h = out.data();
  std::memcpy(h, "LASF", 4);
  h[24] = 1;
  h[25] = 2;
  std::memcpy(h + 26, "treeview", 8);
  std::memcpy(h + 58, "treeview", 8);
  auto put = [&](std::size_t at, auto v) { std::memcpy(h + at, &v, sizeof(v)); };
  put(94, std::uint16_t{227});
  put(96, std::uint32_t{227});
  put(100, std::uint32_t{0});
  put(104, std::uint8_t{0});
  put(105, std::uint16_t{20});
  put(107, static_cast<std::uint32_t>(cloud.size()));
  put(111, static_cast<std::uint32_t>(cloud.size()));
  for (int d = 0; d < 3; ++d) {
    put(131 + 8 * d, kLasScale);
    put(155 + 8 * d, offset[d]);
  }
  put(179, hi.x());
  put(187, lo.x());
  put(195, hi.y());
  put(203, lo.y());
  put(211, hi.z());
  put(219, lo.z());

  out.reserve(227 + 20 * cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int d = 0; d < 3; ++d)
      append(out, static_cast<std::int32_t>(std::llround((cloud.points[i][d] - offset[d]) / kLasScale)));
    std::uint32_t intensity = cloud.has_intensities() ? cloud.intensities[i][0] : 0;
    if (intensity > 65535) throw Error("LAS intensity is 16-bit; value 65536 cannot be stored");
    append(out, static_cast<std::uint16_t>(intensity));
    append(out, std::uint8_t{0x09});  // return 1 of 1
    append(out, std::uint8_t{0});
    append(out, std::int8_t{0});
    append(out, std::uint8_t{0});
    append(out, std::uint16_t{0});
  }
  return out;
}

}  // namespace detail

/// Parses a point cloud from memory. `name` is used in diagnostics only.
inline PointCloud parse_cloud(std::string_view data, CloudFormat format, const std::string& name) {
  PointCloud cloud;
  switch (format) {
    case CloudFormat::xyz: cloud = detail::parse_xyz(data, name); break;
    case CloudFormat::ply: cloud = detail::parse_ply(data, name); break;
    case CloudFormat::las: cloud = detail::parse_las(data, name); break;
  }
  if (cloud.empty()) throw ParseError(name, "empty cloud");
  validate(cloud);
  return cloud;
}

/// Tree id and scan id from a `<scan_id>__<tree_id>` file stem. A stem
/// without the separator yields an empty scan id.
inline std::pair<std::string, std::string> parse_segment_stem(const std::string& stem) {
  const auto sep = stem.find("__");
  if (sep == std::string::npos) return {stem, ""};
  return {stem.substr(sep + 2), stem.substr(0, sep)};
}

/// Reads a segment; labels come from the dataset layout
/// `<species>/<scan_id>__<tree_id>.<ext>` (species `unknown` if the parent
/// directory is not a species name).
inline TreeSegment read_segment(const std::filesystem::path& path, CloudFormat format) {
  TreeSegment seg;
  auto [id, scan] = parse_segment_stem(path.stem().string());
  seg.id = std::move(id);
  seg.scan_id = std::move(scan);
  seg.species = parse_species(path.parent_path().filename().string()).value_or(Species::unknown);
  seg.cloud = parse_cloud(text::read_file(path), format, path.string());
  return seg;
}

inline TreeSegment read_segment(const std::filesystem::path& path) {
  auto format = format_from_path(path);
  if (!format) throw Error("unsupported point-cloud extension: " + path.string());
  return read_segment(path, *format);
}

inline std::string serialize_segment(const TreeSegment& segment, CloudFormat format,
                                     const WriteOptions& options = {}) {
  validate(segment.cloud);
  switch (format) {
    case CloudFormat::xyz: return detail::format_xyz(segment.cloud);
    case CloudFormat::ply: return detail::format_ply(segment.cloud, &segment, options.ply_binary);
    case CloudFormat::las: return detail::format_las(segment.cloud);
  }
  return {};
}

inline void write_segment(const TreeSegment& segment, const std::filesystem::path& path,
                          CloudFormat format, const WriteOptions& options = {}) {
  text::write_file(path, serialize_segment(segment, format, options));
}

/// Canonical relative location of a segment inside a dataset root.
inline std::filesystem::path segment_relative_path(const TreeSegment& segment, CloudFormat format) {
  std::string stem = segment.scan_id.empty() ? segment.id : segment.scan_id + "__" + segment.id;
  return std::filesystem::path(std::string(to_string(segment.species))) /
         (stem + std::string(extension_for(format)));
}

}  // namespace treeview

#endif  // TREEVIEW_CLOUD_IO_HPP
