#include <gtest/gtest.h>

#include <cstdlib>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "temp_dir.hpp"
#include "treeview/commands.hpp"

using namespace treeview;
namespace tt = treeview::testing;
namespace fs = std::filesystem;

namespace {

struct Session {
  std::ostringstream out, log;
  cli::Context ctx;
  explicit Session(PipelineConfig cfg = {}, bool dry = false) : ctx{std::move(cfg), dry, out, log} {}
};

PipelineConfig seeded(std::uint64_t seed = 1) {
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.seed_set = true;
  return cfg;
}

std::size_t file_count(const fs::path& root) {
  if (!fs::exists(root)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) n += e.is_regular_file();
  return n;
}

void write_tree(const fs::path& root, const std::string& species, const std::string& scan, const std::string& id,
                std::uint64_t seed, std::size_t points = 1500) {
  TreeSegment seg;
  seg.id = id;
  seg.scan_id = scan;
  seg.species = *parse_species(species);
  std::mt19937_64 rng(seed);
  seg.cloud = tt::synthetic_tree(tt::TreeShape::cone, tt::random_tree_params(tt::TreeShape::cone, rng), points, seed);
  write_segment(seg, root / segment_relative_path(seg, CloudFormat::xyz), CloudFormat::xyz);
}

std::string anchors_csv(const std::vector<Vec3>& local, const std::vector<Vec3>& global) {
  std::string s = "xl,yl,zl,xg,yg,zg\n";
  for (std::size_t i = 0; i < local.size(); ++i)
    s += fmt::format("{:.12f},{:.12f},{:.12f},{:.12f},{:.12f},{:.12f}\n", local[i].x(), local[i].y(), local[i].z(),
                     global[i].x(), global[i].y(), global[i].z());
  return s;
}

}  // namespace

TEST(CliPreprocess, EmptyRoot) {
  tt::TempDir dir;
  Session r(seeded());
  EXPECT_EQ(cli::cmd_preprocess(r.ctx, dir.path(), dir / "out"), 0);
  EXPECT_EQ(r.out.str(), "segment,before,after\n");
}

TEST(CliPreprocess, CorruptFileNamed) {
  tt::TempDir dir;
  write_tree(dir / "in", "pine", "s", "1", 1);
  text::write_file(dir / "in/oak/s__bad.xyz", "1 2 3\n4 5\n");
  Session r(seeded());
  EXPECT_NE(cli::cmd_preprocess(r.ctx, dir / "in", dir / "out"), 0);
  EXPECT_NE(r.log.str().find("s__bad.xyz"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out/pine/s__1.xyz"));
}

TEST(CliPreprocess, SeedRequired) {
  tt::TempDir dir;
  Session r;
  EXPECT_EQ(cli::cmd_preprocess(r.ctx, dir.path(), dir / "out"), 2);
  EXPECT_NE(r.log.str().find("seed"), std::string::npos);
}

TEST(CliPreprocess, NoisyCubeMatchesSorOracle) {
  tt::TempDir dir;
  TreeSegment seg;
  seg.id = "cube";
  seg.scan_id = "s";
  seg.species = Species::aspen;
  seg.cloud = tt::random_cloud(600, 3);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> far(2.0, 6.0);
  for (int i = 0; i < 12; ++i) seg.cloud.points.emplace_back(far(rng), far(rng), far(rng));
  write_segment(seg, dir / "in/aspen/s__cube.xyz", CloudFormat::xyz);

  auto cfg = seeded();
  cfg.preprocess.spacing = 0.0;
  Session r(cfg);
  ASSERT_EQ(cli::cmd_preprocess(r.ctx, dir / "in", dir / "out"), 0);
  const auto written = read_segment(dir / "out/aspen/s__cube.xyz");
  const auto kept = tt::sor_oracle(read_segment(dir / "in/aspen/s__cube.xyz").cloud, 8, 1.0);
  EXPECT_EQ(written.cloud.size(), kept.size());
  EXPECT_NE(r.out.str().find(fmt::format("aspen/s__cube,612,{}", kept.size())), std::string::npos);
}

TEST(CliPreprocess, DryRunWritesNothing) {
  tt::TempDir dir;
  write_tree(dir / "in", "pine", "s", "1", 1);
  Session r(seeded(), true);
  EXPECT_EQ(cli::cmd_preprocess(r.ctx, dir / "in", dir / "out"), 0);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_NE(r.out.str().find("plan "), std::string::npos);
}

TEST(CliNormals, WritesOrientedPly) {
  tt::TempDir dir;
  write_tree(dir / "in", "spruce", "s", "4", 4);
  Session r;
  ASSERT_EQ(cli::cmd_normals(r.ctx, dir / "in", dir / "out"), 0);
  const auto seg = read_segment(dir / "out/spruce/s__4.ply");
  ASSERT_TRUE(seg.cloud.has_normals());
  const auto t = estimate_trunk(seg.cloud);
  for (std::size_t i = 0; i < seg.cloud.size(); ++i) {
    const Vec3& p = seg.cloud.points[i];
    EXPECT_LE(seg.cloud.normals[i].dot(Vec3(t.x - p.x(), t.y - p.y(), 0)), 1e-12);
  }
}

TEST(CliRender, CountsDryRunAndFailure) {
  tt::TempDir dir;
  write_tree(dir / "in", "pine", "s", "1", 1);
  write_tree(dir / "in", "birch", "s", "2", 2);
  auto cfg = seeded();
  cfg.render.image_size = 64;
  {
    Session r(cfg, true);
    EXPECT_EQ(cli::cmd_render(r.ctx, dir / "in", dir / "out"), 0);
    EXPECT_FALSE(fs::exists(dir / "out"));
  }
  Session r(cfg);
  EXPECT_EQ(cli::cmd_render(r.ctx, dir / "in", dir / "out"), 0);
  EXPECT_EQ(file_count(dir / "out"), 20u);
  EXPECT_NE(r.out.str().find("total,20"), std::string::npos);

  text::write_file(dir / "in/oak/s__3.xyz", "0 0 0\n");  // renders as WOP, but has no intensity
  cfg.render.coloring = Coloring::OP;
  Session op(cfg);
  EXPECT_EQ(cli::cmd_render(op.ctx, dir / "in", dir / "op"), 1);
  EXPECT_EQ(file_count(dir / "op"), 20u);
  EXPECT_NE(op.log.str().find("s__3.xyz"), std::string::npos);
}

TEST(CliRegister, IdentityAndKnownRotation) {
  tt::TempDir dir;
  const std::vector<Vec3> local = {Vec3(0, 0, 0), Vec3(10, 0, 1), Vec3(0, 12, 2), Vec3(7, 7, 9), Vec3(-3, 4, 0)};
  text::write_file(dir / "id.csv", anchors_csv(local, local));
  {
    Session r;
    ASSERT_EQ(cli::cmd_register(r.ctx, dir / "id.csv", std::nullopt, dir / "id"), 0);
    const auto j = nlohmann::json::parse(text::read_file(dir / "id/transform.json"));
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) EXPECT_NEAR(j["rotation"][a][b].get<double>(), a == b ? 1.0 : 0.0, 1e-9);
      EXPECT_NEAR(j["translation"][a].get<double>(), 0.0, 1e-9);
    }
  }
  const Eigen::Matrix3d R = Eigen::AngleAxisd(0.4, Vec3(0.2, 0.1, 1).normalized()).toRotationMatrix();
  const Vec3 t(385000.0, 6672000.0, 40.0);
  std::vector<Vec3> global;
  for (const auto& p : local) global.push_back(R * p + t);
  text::write_file(dir / "rot.csv", anchors_csv(local, global));
  write_tree(dir / "in", "pine", "s", "1", 1, 300);
  Session r;
  ASSERT_EQ(cli::cmd_register(r.ctx, dir / "rot.csv", dir / "in", dir / "rot"), 0);
  const auto j = nlohmann::json::parse(text::read_file(dir / "rot/transform.json"));
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) EXPECT_NEAR(j["rotation"][a][b].get<double>(), R(a, b), 1e-9);
    EXPECT_NEAR(j["translation"][a].get<double>(), t[a], 1e-6);
  }
  const auto before = read_segment(dir / "in/pine/s__1.xyz").cloud;
  const auto after = read_segment(dir / "rot/pine/s__1.xyz").cloud;
  ASSERT_EQ(after.size(), before.size());
  EXPECT_LE((after.points[5] - (R * before.points[5] + t)).norm(), 1e-5);
}

TEST(CliRegister, TooFewAnchors) {
  tt::TempDir dir;
  text::write_file(dir / "a.csv", "xl,yl,zl,xg,yg,zg\n0,0,0,0,0,0\n1,0,0,1,0,0\n");
  Session r;
  EXPECT_NE(cli::cmd_register(r.ctx, dir / "a.csv", std::nullopt, dir / "out"), 0);
  EXPECT_FALSE(fs::exists(dir / "out/transform.json"));
}

TEST(CliMatch, CsvPositions) {
  tt::TempDir dir;
  text::write_file(dir / "a.csv", "id,x,y\nt1,0,0\nt2,10,0\n");
  text::write_file(dir / "b.csv", "id,x,y\nr1,0.5,0\nr2,10,4\n");
  Session r;
  ASSERT_EQ(cli::cmd_match(r.ctx, dir / "a.csv", dir / "b.csv", std::nullopt, false), 0);
  EXPECT_EQ(r.out.str(), "id_A,id_B,distance_m\nt1,r1,0.500000\n# unmatched_A\nt2\n# unmatched_B\nr2\n");
}

TEST(CliSplit, WritesManifestDeterministically) {
  tt::TempDir dir;
  for (int i = 0; i < 10; ++i) text::write_file(dir / fmt::format("in/pine/s__{}.xyz", i), "0 0 0\n");
  Session a(seeded(5)), b(seeded(5));
  ASSERT_EQ(cli::cmd_split(a.ctx, dir / "in", dir / "m1.csv"), 0);
  ASSERT_EQ(cli::cmd_split(b.ctx, dir / "in", dir / "m2.csv"), 0);
  EXPECT_EQ(text::read_file(dir / "m1.csv"), text::read_file(dir / "m2.csv"));
  EXPECT_EQ(a.out.str(), "species,train,test\npine,8,2\n");
  Session unseeded;
  EXPECT_EQ(cli::cmd_split(unseeded.ctx, dir / "in", dir / "m3.csv"), 2);
}

TEST(CliEvaluate, ReportsMetrics) {
  tt::TempDir dir;
  text::write_file(dir / "p.csv",
                   "tree_id,scan_id,angle,slice,pine,oak\n1,s,0,full,0.9,0.1\n2,s,0,full,0.8,0.2\n"
                   "3,s,0,full,0.2,0.8\n4,s,0,full,0.1,0.9\n");
  text::write_file(dir / "t.csv", "tree_id,scan_id,species\n1,s,pine\n2,s,oak\n3,s,oak\n4,s,oak\n");
  Session r;
  ASSERT_EQ(cli::cmd_evaluate(r.ctx, dir / "p.csv", dir / "t.csv", dir / "r.json"), 0);
  const auto j = nlohmann::json::parse(text::read_file(dir / "r.json"));
  EXPECT_NEAR(j["OA"].get<double>(), 0.75, 1e-12);
  EXPECT_NEAR(j["kappa"].get<double>(), 0.5, 1e-12);
  Session bad;
  EXPECT_EQ(cli::cmd_evaluate(bad.ctx, dir / "missing.csv", dir / "t.csv", std::nullopt), 1);
}

TEST(CliStats, EmitsRows) {
  tt::TempDir dir;
  write_tree(dir / "in", "pine", "s", "1", 1);
  auto cfg = seeded();
  cfg.render.angles_deg = {0, 90};
  Session r(cfg);
  ASSERT_EQ(cli::cmd_stats(r.ctx, dir / "in", {128, 256}, dir / "stats.csv"), 0);
  const auto csv = text::read_file(dir / "stats.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scan_id,tree_id,species,angle,view,size,empty_ratio,pixel_size_m");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2 * 2);
}

TEST(Config, ParseAndReject) {
  const auto cfg = parse_config(
      "# pipeline\n[render]\nimage_size = 512\nangles = [0, 90.5]\ncoloring = \"NV\"\nsmoothing = false\n"
      "[preprocess]\nsor_k = 12\nspacing = 0.05 # metres\nseed = 42\n",
      "c.toml");
  EXPECT_EQ(cfg.render.image_size, 512);
  EXPECT_EQ(cfg.render.angles_deg, (std::vector<double>{0, 90.5}));
  EXPECT_EQ(cfg.render.coloring, Coloring::NV);
  EXPECT_FALSE(cfg.render.smoothing);
  EXPECT_EQ(cfg.preprocess.sor.k_neighbors, 12);
  EXPECT_DOUBLE_EQ(cfg.preprocess.spacing, 0.05);
  EXPECT_TRUE(cfg.seed_set);
  EXPECT_EQ(parse_config("angle_count = 25\n", "c").render.angles_deg.size(), 25u);
  try {
    parse_config("image_size = 512\nbogus = 1\n", "c.toml");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.where(), "c.toml:2");
  }
  EXPECT_THROW(parse_config("smoothing = yes\n", "c"), ParseError);
  EXPECT_THROW(parse_config("image_size\n", "c"), ParseError);
}

TEST(Binary, ExitCodes) {
  tt::TempDir dir;
  const std::string bin = TREEVIEW_BIN;
  auto run = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(fmt::format("preprocess --in {} --out {}", dir.path().string(), (dir / "o").string())), 2);
  EXPECT_EQ(run(fmt::format("preprocess --in {} --out {} --seed 3", dir.path().string(), (dir / "o").string())), 0);
  EXPECT_EQ(run(fmt::format("render --in {} --out {} --set image_size=4", dir.path().string(), (dir / "o").string())), 2);
  EXPECT_NE(run("nosuchcommand"), 0);
}
