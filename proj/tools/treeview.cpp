// treeview: tree point-cloud to projection-image pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "treeview/commands.hpp"
#include "treeview/config.hpp"

namespace {

namespace fs = std::filesystem;
using namespace treeview;

struct GlobalFlags {
  std::string config;
  std::vector<std::string> settings;  // key=value overrides
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  bool dry_run = false;
};

void add_global(CLI::App* sub, GlobalFlags& g) {
  sub->add_option("--config", g.config, "TOML-style key = value config file");
  sub->add_option("--set", g.settings, "override a config key, e.g. --set image_size=512");
  sub->add_option("--seed", g.seed, "random seed");
  sub->add_option("--jobs,-j", g.jobs, "worker threads (0 = all cores)");
  sub->add_flag("--dry-run", g.dry_run, "print the work plan and write nothing");
}

PipelineConfig resolve_config(const GlobalFlags& g) {
  PipelineConfig cfg;
  if (!g.config.empty()) cfg = read_config(g.config);
  for (const auto& kv : g.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, text::trim(std::string_view(kv).substr(0, eq)), std::string_view(kv).substr(eq + 1), "--set");
  }
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.seed_set = true;
  }
  if (g.jobs) cfg.jobs = *g.jobs;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"treeview: tree point clouds to multi-view projection image datasets"};
  app.require_subcommand(1);
  GlobalFlags g;

  std::string in, out, manifest, anchors, a, b, probs, truth, data;
  std::optional<std::string> out_opt, truth_out;
  std::optional<double> threshold;
  std::optional<int> image_size;
  std::optional<std::string> coloring;
  bool centroid = false;
  std::vector<int> sizes = {512, 1024};

  auto* pre = app.add_subcommand("preprocess", "minimum-spacing thinning and statistical outlier removal");
  pre->add_option("--in", in, "dataset root <species>/<scan>__<tree>.<ext>")->required();
  pre->add_option("--out", out, "output dataset root")->required();

  auto* nrm = app.add_subcommand("normals", "estimate outward normals, write PLY segments");
  nrm->add_option("--in", in, "dataset root")->required();
  nrm->add_option("--out", out, "output dataset root")->required();

  auto* ren = app.add_subcommand("render", "render projection images");
  ren->add_option("--manifest,--in", manifest, "manifest CSV or dataset root")->required();
  ren->add_option("--out", out, "image dataset root")->required();
  ren->add_option("--image-size", image_size, "raster size in pixels");
  ren->add_option("--coloring", coloring, "WOP, OP or NV");

  auto* reg = app.add_subcommand("register", "fit a rigid transform from anchor pairs");
  reg->add_option("--anchors", anchors, "CSV xl,yl,zl,xg,yg,zg")->required();
  reg->add_option("--in", in, "segments to transform (dataset root)");
  reg->add_option("--out", out, "output directory")->required();

  auto* mat = app.add_subcommand("match", "mutual nearest-neighbour tree matching");
  mat->add_option("--a", a, "positions CSV id,x,y or dataset root")->required();
  mat->add_option("--b", b, "positions CSV id,x,y or dataset root")->required();
  mat->add_option("--threshold", threshold, "maximum match distance in metres (exclusive)");
  mat->add_option("--out", out_opt, "match CSV (default stdout)");
  mat->add_flag("--centroid", centroid, "position segments by centroid instead of trunk");

  auto* spl = app.add_subcommand("split", "grouped, stratified train/test split");
  spl->add_option("--in,--manifest", in, "dataset root or manifest CSV")->required();
  spl->add_option("--out", out, "output manifest CSV")->required();

  auto* cls = app.add_subcommand("classify-baseline", "nearest-centroid image baseline");
  cls->add_option("--data", data, "image dataset root with train/ and test/")->required();
  cls->add_option("--out", out, "probability CSV")->required();
  cls->add_option("--truth-out", truth_out, "write the test trees' truth CSV");

  auto* evl = app.add_subcommand("evaluate", "aggregate per-view probabilities and compute metrics");
  evl->add_option("--probs", probs, "probability CSV")->required();
  evl->add_option("--truth", truth, "truth CSV tree_id,scan_id,species")->required();
  evl->add_option("--out", out_opt, "report JSON");

  auto* sts = app.add_subcommand("stats", "empty-pixel ratio and pixel size report");
  sts->add_option("--in,--manifest", in, "dataset root or manifest CSV")->required();
  sts->add_option("--sizes", sizes, "image sizes")->delimiter(',');
  sts->add_option("--out", out_opt, "CSV (default stdout)");

  for (auto* sub : {pre, nrm, ren, reg, mat, spl, cls, evl, sts}) add_global(sub, g);

  CLI11_PARSE(app, argc, argv);

  cli::Context ctx{{}, g.dry_run, std::cout, std::cerr};
  try {
    if (image_size) g.settings.push_back("image_size=" + std::to_string(*image_size));
    if (coloring) g.settings.push_back("coloring=" + *coloring);
    if (threshold) g.settings.push_back("match_threshold=" + std::to_string(*threshold));
    ctx.cfg = resolve_config(g);
  } catch (const std::exception& ex) {
    std::cerr << "level=error cmd=config msg=\"" << ex.what() << "\"\n";
    return 2;
  }

  if (*pre) return cli::cmd_preprocess(ctx, in, out);
  if (*nrm) return cli::cmd_normals(ctx, in, out);
  if (*ren) return cli::cmd_render(ctx, manifest, out);
  if (*reg) return cli::cmd_register(ctx, anchors, in.empty() ? std::nullopt : std::optional<fs::path>(in), out);
  if (*mat) {
    std::optional<fs::path> o;
    if (out_opt) o = *out_opt;
    return cli::cmd_match(ctx, a, b, o, centroid);
  }
  if (*spl) return cli::cmd_split(ctx, in, out);
  if (*cls) {
    std::optional<fs::path> t;
    if (truth_out) t = *truth_out;
    return cli::cmd_classify_baseline(ctx, data, out, t);
  }
  if (*evl) {
    std::optional<fs::path> o;
    if (out_opt) o = *out_opt;
    return cli::cmd_evaluate(ctx, probs, truth, o);
  }
  if (*sts) {
    std::optional<fs::path> o;
    if (out_opt) o = *out_opt;
    return cli::cmd_stats(ctx, in, sizes, o);
  }
  return 2;
}
