#ifndef TREEVIEW_COMMANDS_HPP
#define TREEVIEW_COMMANDS_HPP

// Batch pipeline commands behind the `treeview` executable. Each command
// returns a process exit status; data goes to files or `out`, diagnostics
// to `log` as `level=... cmd=... msg="..."` lines.

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "treeview/cloud_io.hpp"
#include "treeview/config.hpp"
#include "treeview/dataset.hpp"
#include "treeview/evalkit.hpp"
#include "treeview/georeg.hpp"
#include "treeview/manifest.hpp"
#include "treeview/normals.hpp"
#include "treeview/parallel.hpp"
#include "treeview/preprocess.hpp"
#include "treeview/projection.hpp"

namespace treeview::cli {

namespace fs = std::filesystem;

struct Context {
  PipelineConfig cfg;
  bool dry_run = false;
  std::ostream& out;
  std::ostream& log;

  void info(std::string_view cmd, const std::string& msg) const {
    log << fmt::format("level=info cmd={} msg=\"{}\"\n", cmd, msg);
  }
  void warn(std::string_view cmd, const std::string& msg) const {
    log << fmt::format("level=warn cmd={} msg=\"{}\"\n", cmd, msg);
  }
  void error(std::string_view cmd, const std::string& msg) const {
    log << fmt::format("level=error cmd={} msg=\"{}\"\n", cmd, msg);
  }
};

/// 64-bit FNV-1a; stable across platforms, used to derive per-segment seeds.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Seed of one segment, independent of processing order.
inline std::uint64_t segment_seed(std::uint64_t seed, const ManifestEntry& e) {
  return seed ^ stable_hash(e.scan_id + "__" + e.id);
}

inline std::string entry_name(const ManifestEntry& e) {
  return fmt::format("{}/{}__{}", to_string(e.species), e.scan_id, e.id);
}

/// Manifest from a CSV file or by scanning a dataset directory.
inline DatasetManifest load_manifest(const fs::path& source) {
  return fs::is_directory(source) ? scan_manifest(source) : read_manifest(source);
}

// -------------------------------------------------------------- preprocess

/// Thins and denoises every segment under `in_root`, mirroring the layout
/// into `out_root`. Prints `segment,before,after` per segment.
inline int cmd_preprocess(const Context& ctx, const fs::path& in_root, const fs::path& out_root) {
  constexpr std::string_view cmd = "preprocess";
  if (!ctx.cfg.seed_set) {
    ctx.error(cmd, "a seed is required (--seed or 'seed' in the config)");
    return 2;
  }
  DatasetManifest manifest;
  try {
    manifest = scan_manifest(in_root);
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 2;
  }
  if (ctx.dry_run) {
    for (const auto& e : manifest.entries)
      ctx.out << fmt::format("plan {} -> {}\n", e.path.string(), (out_root / fs::relative(e.path, in_root)).string());
    return 0;
  }

  struct Slot {
    std::size_t before = 0, after = 0;
    std::string error;
  };
  std::vector<Slot> slots(manifest.size());
  parallel_for(manifest.size(), ctx.cfg.jobs, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    try {
      TreeSegment seg = read_segment(e.path);
      slots[i].before = seg.cloud.size();
      PreprocessParams params = ctx.cfg.preprocess;
      params.seed = segment_seed(ctx.cfg.seed, e);
      seg.cloud = preprocess_cloud(seg.cloud, params);
      slots[i].after = seg.cloud.size();
      write_segment(seg, out_root / fs::relative(e.path, in_root), *format_from_path(e.path));
    } catch (const std::exception& ex) {
      slots[i].error = ex.what();
    }
  });

  int failures = 0;
  ctx.out << "segment,before,after\n";
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].error.empty()) {
      ctx.error(cmd, fmt::format("{}: {}", manifest.entries[i].path.string(), slots[i].error));
      ++failures;
      continue;
    }
    ctx.out << fmt::format("{},{},{}\n", entry_name(manifest.entries[i]), slots[i].before, slots[i].after);
  }
  ctx.info(cmd, fmt::format("{} segment(s), {} failed", manifest.size(), failures));
  return failures ? 1 : 0;
}

// ----------------------------------------------------------------- normals

/// Estimates outward normals per segment and writes PLY files carrying them.
inline int cmd_normals(const Context& ctx, const fs::path& in_root, const fs::path& out_root) {
  constexpr std::string_view cmd = "normals";
  DatasetManifest manifest;
  try {
    manifest = scan_manifest(in_root);
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 2;
  }
  auto target = [&](const ManifestEntry& e) {
    fs::path rel = fs::relative(e.path, in_root);
    return out_root / rel.replace_extension(".ply");
  };
  if (ctx.dry_run) {
    for (const auto& e : manifest.entries) ctx.out << fmt::format("plan {} -> {}\n", e.path.string(), target(e).string());
    return 0;
  }
  struct Slot {
    std::size_t points = 0, degenerate = 0;
    std::string error;
  };
  std::vector<Slot> slots(manifest.size());
  parallel_for(manifest.size(), ctx.cfg.jobs, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    try {
      TreeSegment seg = read_segment(e.path);
      auto est = estimate_normals(seg.cloud, ctx.cfg.normals);
      seg.cloud = orient_outward(est.cloud, estimate_trunk(est.cloud));
      slots[i] = {seg.cloud.size(), est.degenerate.size(), {}};
      write_segment(seg, target(e), CloudFormat::ply);
    } catch (const std::exception& ex) {
      slots[i].error = ex.what();
    }
  });
  int failures = 0;
  ctx.out << "segment,points,degenerate\n";
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].error.empty()) {
      ctx.error(cmd, fmt::format("{}: {}", manifest.entries[i].path.string(), slots[i].error));
      ++failures;
      continue;
    }
    ctx.out << fmt::format("{},{},{}\n", entry_name(manifest.entries[i]), slots[i].points, slots[i].degenerate);
  }
  return failures ? 1 : 0;
}

// ------------------------------------------------------------------ render

/// Renders a manifest (CSV or dataset directory) into a PNG image tree.
inline int cmd_render(const Context& ctx, const fs::path& source, const fs::path& out_root) {
  constexpr std::string_view cmd = "render";
  DatasetManifest manifest;
  try {
    ctx.cfg.render.validate();
    manifest = load_manifest(source);
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 2;
  }
  EmitOptions options;
  options.jobs = ctx.cfg.jobs;
  options.normals = ctx.cfg.normals;
  options.dry_run = ctx.dry_run;
  options.log = [&](const std::string& msg) { ctx.warn(cmd, msg); };
  const EmitSummary summary = emit_dataset(manifest, ctx.cfg.render, out_root, options);
  if (ctx.dry_run) {
    for (const auto& p : summary.planned) ctx.out << "plan " << p.string() << '\n';
    return 0;
  }
  ctx.out << "species,images\n";
  for (const auto& [species, count] : summary.images_per_species) ctx.out << fmt::format("{},{}\n", species, count);
  ctx.out << fmt::format("total,{}\n", summary.images);
  ctx.info(cmd, fmt::format("{} segment(s) rendered, {} skipped", summary.segments_rendered, summary.failures.size()));
  return summary.failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------- register

inline nlohmann::json transform_json(const RigidFit& fit, std::size_t anchors) {
  nlohmann::json j;
  j["rotation"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    j["rotation"].push_back({fit.transform.rotation(r, 0), fit.transform.rotation(r, 1), fit.transform.rotation(r, 2)});
  j["translation"] = {fit.transform.translation.x(), fit.transform.translation.y(), fit.transform.translation.z()};
  j["rms_m"] = fit.rms;
  j["anchors"] = anchors;
  return j;
}

/// Fits the local-to-global transform from anchor pairs, writes
/// `transform.json` and, when `segments_root` is given, transformed copies
/// of every segment.
inline int cmd_register(const Context& ctx, const fs::path& anchors_csv, const std::optional<fs::path>& segments_root,
                        const fs::path& out_root) {
  constexpr std::string_view cmd = "register";
  RigidFit fit;
  AnchorPairs anchors;
  DatasetManifest manifest;
  try {
    anchors = parse_anchors(text::read_file(anchors_csv), anchors_csv.string());
    fit = fit_rigid(anchors.local, anchors.global);
    if (segments_root) manifest = scan_manifest(*segments_root);
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 1;
  }
  const auto j = transform_json(fit, anchors.local.size());
  ctx.out << j.dump(2) << '\n';
  if (ctx.dry_run) {
    ctx.out << "plan " << (out_root / "transform.json").string() << '\n';
    for (const auto& e : manifest.entries)
      ctx.out << "plan " << (out_root / fs::relative(e.path, *segments_root)).string() << '\n';
    return 0;
  }
  text::write_file(out_root / "transform.json", j.dump(2) + "\n");

  std::vector<std::string> errors(manifest.size());
  parallel_for(manifest.size(), ctx.cfg.jobs, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    try {
      TreeSegment seg = read_segment(e.path);
      seg.cloud = apply_transform(seg.cloud, fit.transform);
      write_segment(seg, out_root / fs::relative(e.path, *segments_root), *format_from_path(e.path));
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });
  int failures = 0;
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) {
      ctx.error(cmd, fmt::format("{}: {}", manifest.entries[i].path.string(), errors[i]));
      ++failures;
    }
  ctx.info(cmd, fmt::format("rms {:.6f} m over {} anchors; {} segment(s) transformed", fit.rms, anchors.local.size(),
                            manifest.size() - failures));
  return failures ? 1 : 0;
}

// ------------------------------------------------------------------- match

/// Tree positions from an `id,x,y` CSV, or from the segments of a dataset
/// directory (ids `<scan>__<tree>`).
inline PositionTable load_positions(const fs::path& source, bool use_centroid, unsigned jobs) {
  if (!fs::is_directory(source)) return parse_positions(text::read_file(source), source.string());
  const auto manifest = scan_manifest(source);
  PositionTable table;
  table.positions.resize(manifest.size());
  for (const auto& e : manifest.entries) table.ids.push_back(e.scan_id + "__" + e.id);
  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    table.positions[i] = tree_position(read_segment(manifest.entries[i].path).cloud, use_centroid);
  });
  return table;
}

inline int cmd_match(const Context& ctx, const fs::path& a, const fs::path& b, const std::optional<fs::path>& out_csv,
                     bool use_centroid) {
  constexpr std::string_view cmd = "match";
  try {
    const auto ta = load_positions(a, use_centroid, ctx.cfg.jobs);
    const auto tb = load_positions(b, use_centroid, ctx.cfg.jobs);
    const auto result = mutual_nn_match(ta.positions, tb.positions, ctx.cfg.match_threshold);
    const std::string csv = format_match_csv(result, ta.ids, tb.ids);
    ctx.info(cmd, fmt::format("{} pair(s), {} unmatched in A, {} unmatched in B", result.pairs.size(),
                              result.unmatched_a.size(), result.unmatched_b.size()));
    if (ctx.dry_run) {
      if (out_csv) ctx.out << "plan " << out_csv->string() << '\n';
      return 0;
    }
    if (out_csv) text::write_file(*out_csv, csv);
    else ctx.out << csv;
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 1;
  }
  return 0;
}

// ------------------------------------------------------------------- split

inline int cmd_split(const Context& ctx, const fs::path& source, const fs::path& out_manifest) {
  constexpr std::string_view cmd = "split";
  if (!ctx.cfg.seed_set) {
    ctx.error(cmd, "a seed is required (--seed or 'seed' in the config)");
    return 2;
  }
  SplitResult result;
  try {
    result = grouped_split(load_manifest(source), ctx.cfg.test_fraction, ctx.cfg.seed);
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 2;
  }
  for (const auto& w : result.warnings) ctx.warn(cmd, w);
  std::map<std::string, std::pair<int, int>> counts;
  for (const auto& e : result.manifest.entries) {
    auto& c = counts[std::string(to_string(e.species))];
    (e.split == Split::test ? c.second : c.first)++;
  }
  ctx.out << "species,train,test\n";
  for (const auto& [s, c] : counts) ctx.out << fmt::format("{},{},{}\n", s, c.first, c.second);
  if (ctx.dry_run) {
    ctx.out << "plan " << out_manifest.string() << '\n';
    return 0;
  }
  write_manifest(result.manifest, out_manifest);
  return 0;
}

// ------------------------------------------------------- classify-baseline

/// PNG images below `<root>/<species>/`, sorted by path.
inline std::vector<std::pair<fs::path, Species>> list_images(const fs::path& root) {
  std::vector<std::pair<fs::path, Species>> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    auto species = parse_species(dir.path().filename().string());
    if (!species) throw Error("unknown species directory " + dir.path().string());
    for (const auto& f : fs::directory_iterator(dir.path()))
      if (f.is_regular_file() && f.path().extension() == ".png") out.emplace_back(f.path(), *species);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Nearest-centroid baseline over `<data>/train` and `<data>/test`. Writes
/// the probability CSV and, optionally, the truth table of the test trees.
inline int cmd_classify_baseline(const Context& ctx, const fs::path& data_root, const fs::path& out_csv,
                                 const std::optional<fs::path>& truth_out) {
  constexpr std::string_view cmd = "classify-baseline";
  try {
    const auto train_files = list_images(data_root / "train");
    const auto test_files = list_images(data_root / "test");
    if (train_files.empty()) throw Error("no training images under " + (data_root / "train").string());
    std::vector<bool> used(kSpeciesNames.size(), false);
    for (const auto* files : {&train_files, &test_files})
      for (const auto& [p, s] : *files) used[static_cast<std::size_t>(s)] = true;
    std::vector<std::size_t> column_of(kSpeciesNames.size(), 0);
    ProbabilityTable table;
    for (std::size_t s = 0; s < used.size(); ++s)
      if (used[s]) {
        column_of[s] = table.species.size();
        table.species.emplace_back(kSpeciesNames[s]);
      }
    if (ctx.dry_run) {
      ctx.out << fmt::format("plan {} train / {} test images -> {}\n", train_files.size(), test_files.size(),
                             out_csv.string());
      return 0;
    }

    auto load = [&](const std::vector<std::pair<fs::path, Species>>& files) {
      std::vector<LabeledImage> images(files.size());
      parallel_for(files.size(), ctx.cfg.jobs, [&](std::size_t i) {
        const auto& [path, species] = files[i];
        auto meta = parse_image_file_name(path.filename().string());
        if (!meta) throw Error("image name does not follow <scan>__<tree>__a<angle>__<full|slice>.png: " + path.string());
        images[i] = {read_png(path), column_of[static_cast<std::size_t>(species)], *meta};
      });
      return images;
    };
    const auto train = load(train_files);
    const auto test = load(test_files);
    table.records = baseline_classify(train, test, table.species.size(), ctx.cfg.downsample);
    text::write_file(out_csv, format_probability_csv(table));

    if (truth_out) {
      std::map<std::pair<std::string, std::string>, std::string> truth;
      for (std::size_t i = 0; i < test.size(); ++i)
        truth[{test[i].meta.tree_id, test[i].meta.scan_id}] = std::string(to_string(test_files[i].second));
      std::vector<TruthLabel> labels;
      for (const auto& [key, species] : truth) labels.push_back({key.first, key.second, species});
      text::write_file(*truth_out, format_truth_csv(labels));
    }
    ctx.info(cmd, fmt::format("{} train / {} test images, {} classes", train.size(), test.size(), table.species.size()));
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------- evaluate

inline int cmd_evaluate(const Context& ctx, const fs::path& probs_csv, const fs::path& truth_csv,
                        const std::optional<fs::path>& report_json) {
  constexpr std::string_view cmd = "evaluate";
  try {
    const auto probs = parse_probability_csv(text::read_file(probs_csv), probs_csv.string());
    const auto truth = parse_truth_csv(text::read_file(truth_csv), truth_csv.string());
    const auto ev = evaluate_predictions(probs, truth);
    for (const auto& w : ev.warnings) ctx.warn(cmd, w);
    ctx.out << format_report_table(ev.report, probs_csv.stem().string());
    if (report_json) {
      if (ctx.dry_run) ctx.out << "plan " << report_json->string() << '\n';
      else text::write_file(*report_json, to_json(ev.report).dump(2) + "\n");
    }
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 1;
  }
  return 0;
}

// ------------------------------------------------------------------- stats

/// Per tree, angle, view and image size: the empty-pixel ratio of the
/// unsmoothed silhouette and the pixel ground size.
inline int cmd_stats(const Context& ctx, const fs::path& source, const std::vector<int>& sizes,
                     const std::optional<fs::path>& out_csv) {
  constexpr std::string_view cmd = "stats";
  try {
    const auto manifest = load_manifest(source);
    if (ctx.dry_run) {
      ctx.out << fmt::format("plan {} segment(s) x {} angle(s) x {} size(s)\n", manifest.size(),
                             ctx.cfg.render.angles_deg.size(), sizes.size());
      return 0;
    }
    std::vector<std::string> rows(manifest.size());
    parallel_for(manifest.size(), ctx.cfg.jobs, [&](std::size_t i) {
      const auto& e = manifest.entries[i];
      const PointCloud cloud = read_segment(e.path).cloud;
      const TrunkEstimate trunk = estimate_trunk(cloud);
      RenderConfig cfg = ctx.cfg.render;
      cfg.coloring = Coloring::WOP;
      for (double angle : cfg.angles_deg) {
        const PointCloud rotated = rotate_z(cloud, angle);
        const TrunkEstimate t = rotate_z(trunk, angle);
        for (bool sliced : {false, true})
          for (int size : sizes) {
            cfg.image_size = size;
            const Image img = rasterize(rotated, cfg, t, sliced, false);
            rows[i] += fmt::format("{},{},{},{},{},{},{:.6f},{:.6f}\n", e.scan_id, e.id, to_string(e.species),
                                   std::lround(angle), sliced ? "slice" : "full", size, empty_pixel_ratio(img),
                                   pixel_ground_size(rotated, cfg));
          }
      }
    });
    std::string csv = "scan_id,tree_id,species,angle,view,size,empty_ratio,pixel_size_m\n";
    for (const auto& r : rows) csv += r;
    if (out_csv) text::write_file(*out_csv, csv);
    else ctx.out << csv;
  } catch (const std::exception& ex) {
    ctx.error(cmd, ex.what());
    return 1;
  }
  return 0;
}

}  // namespace treeview::cli

#endif  // TREEVIEW_COMMANDS_HPP
