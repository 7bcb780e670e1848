#ifndef TREEVIEW_DATASET_HPP
#define TREEVIEW_DATASET_HPP

#include <fmt/format.h>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "treeview/cloud_io.hpp"
#include "treeview/manifest.hpp"
#include "treeview/normals.hpp"
#include "treeview/parallel.hpp"
#include "treeview/preprocess.hpp"
#include "treeview/projection.hpp"

namespace treeview {

struct EmitOptions {
  unsigned jobs = 1;
  NormalParams normals;  // used when NV is requested and a segment has none
  bool dry_run = false;
  std::function<void(const std::string&)> log;  // diagnostics, called in manifest order
};

struct EmitSummary {
  std::map<std::string, std::size_t> images_per_species;
  std::size_t images = 0;
  std::size_t segments_rendered = 0;
  std::vector<std::string> failures;           // one message per skipped segment
  std::vector<std::filesystem::path> planned;  // every output path, in manifest order
};

/// Output directory of a segment's images.
inline std::filesystem::path image_directory(const std::filesystem::path& out_root, const ManifestEntry& e) {
  return out_root / std::string(to_string(e.split)) / std::string(to_string(e.species));
}

/// Readies a segment for `cfg`: NV needs outward normals, which are
/// estimated here when the file carries none.
inline TreeSegment load_renderable(const ManifestEntry& entry, const RenderConfig& cfg,
                                   const NormalParams& normal_params) {
  TreeSegment seg = read_segment(entry.path);
  seg.id = entry.id;
  seg.scan_id = entry.scan_id;
  seg.species = entry.species;
  if (cfg.coloring == Coloring::NV && !seg.cloud.has_normals()) {
    auto est = estimate_normals(seg.cloud, normal_params);
    seg.cloud = orient_outward(est.cloud, estimate_trunk(est.cloud));
  }
  return seg;
}

/// Renders every manifest entry into
/// `<out_root>/<split>/<species>/<scan>__<tree>__a<angle>__<full|slice>.png`.
/// Unrenderable segments are skipped and reported. Segments are processed in
/// parallel; outputs do not depend on the job count.
inline EmitSummary emit_dataset(const DatasetManifest& manifest, const RenderConfig& cfg,
                                const std::filesystem::path& out_root, const EmitOptions& options = {}) {
  cfg.validate();
  struct Slot {
    std::size_t images = 0;
    std::string failure;
  };
  std::vector<Slot> slots(manifest.size());

  EmitSummary summary;
  for (const auto& e : manifest.entries)
    for (double angle : cfg.angles_deg)
      for (bool sliced : {false, true})
        summary.planned.push_back(image_directory(out_root, e) /
                                  image_file_name({e.id, e.scan_id, angle, sliced, cfg.coloring, {}}));

  if (!options.dry_run) {
    parallel_for(manifest.size(), options.jobs, [&](std::size_t i) {
      const auto& entry = manifest.entries[i];
      try {
        const TreeSegment seg = load_renderable(entry, cfg, options.normals);
        const auto images = render_tree(seg, cfg, estimate_trunk(seg.cloud));
        const auto dir = image_directory(out_root, entry);
        for (const auto& img : images) write_png(img.image, dir / image_file_name(img.meta));
        slots[i].images = images.size();
      } catch (const std::exception& ex) {
        slots[i].failure = fmt::format("{}: {}", entry.path.string(), ex.what());
      }
    });
  }

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string species(to_string(manifest.entries[i].species));
    auto& count = summary.images_per_species[species];
    if (options.dry_run) {
      count += 2 * cfg.angles_deg.size();
      summary.images += 2 * cfg.angles_deg.size();
      continue;
    }
    if (!slots[i].failure.empty()) {
      summary.failures.push_back(slots[i].failure);
      if (options.log) options.log("skipped " + slots[i].failure);
      continue;
    }
    count += slots[i].images;
    summary.images += slots[i].images;
    ++summary.segments_rendered;
  }
  return summary;
}

}  // namespace treeview

#endif  // TREEVIEW_DATASET_HPP
