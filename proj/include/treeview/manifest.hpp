#ifndef TREEVIEW_MANIFEST_HPP
#define TREEVIEW_MANIFEST_HPP

#include <fmt/format.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "treeview/cloud_io.hpp"
#include "treeview/text.hpp"
#include "treeview/types.hpp"

namespace treeview {

enum class Split { train, test, unassigned };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "unassigned" || s.empty()) return Split::unassigned;
  return std::nullopt;
}

struct ManifestEntry {
  std::filesystem::path path;
  std::string id;
  std::string scan_id;
  Species species = Species::unknown;
  Split split = Split::unassigned;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
};

/// Throws on a repeated (id, scan_id) pair.
inline void check_unique(const DatasetManifest& manifest) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : manifest.entries)
    if (!seen.emplace(e.id, e.scan_id).second)
      throw Error(fmt::format("duplicate tree id '{}' in scan '{}' ({})", e.id, e.scan_id,
                              e.path.string()));
}

/// Indexes `<root>/<species>/<scan_id>__<tree_id>.<ext>`. Files with
/// unsupported extensions are ignored; entries are sorted by path.
inline DatasetManifest scan_manifest(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error("dataset root is not a directory: " + root.string());
  DatasetManifest manifest;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const std::string name = dir.path().filename().string();
    auto species = parse_species(name);
    if (!species) throw Error(fmt::format("unknown species directory '{}'", name));
    for (const auto& file : fs::directory_iterator(dir.path())) {
      if (!file.is_regular_file() || !format_from_path(file.path())) continue;
      const std::string stem = file.path().stem().string();
      auto [id, scan] = parse_segment_stem(stem);
      if (scan.empty() || id.empty())
        throw Error(fmt::format("file name '{}' is not <scan_id>__<tree_id>", file.path().string()));
      manifest.entries.push_back({file.path(), id, scan, *species, Split::unassigned});
    }
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  check_unique(manifest);
  return manifest;
}

inline constexpr std::string_view kManifestHeader = "path,tree_id,scan_id,species,split";

/// CSV form: `path,tree_id,scan_id,species,split`.
inline std::string format_manifest(const DatasetManifest& manifest) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& e : manifest.entries) {
    const std::string path = e.path.generic_string();
    for (const auto* field : {&path, &e.id, &e.scan_id})
      if (field->find(',') != std::string::npos)
        throw Error("manifest fields may not contain commas: " + *field);
    out += fmt::format("{},{},{},{},{}\n", path, e.id, e.scan_id, to_string(e.species), to_string(e.split));
  }
  return out;
}

/// Relative paths are resolved against `base_dir`.
inline DatasetManifest parse_manifest(std::string_view data, const std::string& name,
                                      const std::filesystem::path& base_dir = {}) {
  DatasetManifest manifest;
  bool header = true;
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (text::trim(line).empty()) return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    if (header) {
      if (text::trim(line) != kManifestHeader)
        throw ParseError(where, fmt::format("expected header '{}'", kManifestHeader));
      header = false;
      return;
    }
    auto f = text::split(line, ',');
    if (f.size() != 5) throw ParseError(where, "expected 5 fields");
    auto species = parse_species(f[3]);
    if (!species) throw ParseError(where, fmt::format("unknown species '{}'", f[3]));
    auto split = parse_split(f[4]);
    if (!split) throw ParseError(where, fmt::format("unknown split '{}'", f[4]));
    std::filesystem::path path{std::string(f[0])};
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    manifest.entries.push_back({path, std::string(f[1]), std::string(f[2]), *species, *split});
  });
  check_unique(manifest);
  return manifest;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  auto manifest = parse_manifest(text::read_file(path), path.string(), path.parent_path());
  for (const auto& e : manifest.entries)
    if (!std::filesystem::exists(e.path))
      throw Error(fmt::format("manifest entry not found: {}", e.path.string()));
  return manifest;
}

inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  text::write_file(path, format_manifest(manifest));
}

}  // namespace treeview

#endif  // TREEVIEW_MANIFEST_HPP
