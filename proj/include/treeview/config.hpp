#ifndef TREEVIEW_CONFIG_HPP
#define TREEVIEW_CONFIG_HPP

#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "treeview/normals.hpp"
#include "treeview/preprocess.hpp"
#include "treeview/projection.hpp"
#include "treeview/text.hpp"

namespace treeview {

/// Every tunable of the batch pipeline.
struct PipelineConfig {
  PreprocessParams preprocess;
  NormalParams normals;
  RenderConfig render;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  bool seed_set = false;  // randomised commands refuse to run without a seed
  unsigned jobs = 1;
  double match_threshold = 3.0;
  int downsample = 32;

  void validate() const {
    render.validate();
    if (preprocess.sor.k_neighbors < 1) throw Error("sor_k must be >= 1");
    if (!(preprocess.sor.n_sigma >= 0.0)) throw Error("sor_n_sigma must be >= 0");
    if (preprocess.spacing < 0.0) throw Error("spacing must be >= 0");
    if (normals.neighbor_count < 3) throw Error("normal_neighbors must be >= 3");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test_fraction must lie in (0, 1)");
    if (!(match_threshold > 0.0)) throw Error("match_threshold must be positive");
    if (downsample < 1) throw Error("downsample must be positive");
  }
};

namespace detail {

inline std::vector<std::string_view> config_array(std::string_view v, const std::string& where) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ParseError(where, "expected [a, b, ...]");
  v = text::trim(v.substr(1, v.size() - 2));
  if (v.empty()) return {};
  return text::split(v, ',');
}

inline std::string_view unquote(std::string_view v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are errors.
inline void apply_setting(PipelineConfig& cfg, std::string_view key, std::string_view value,
                          const std::string& where = "setting") {
  value = text::trim(value);
  auto number = [&]() {
    auto d = text::to_double(value);
    if (!d) throw ParseError(where, fmt::format("'{}' expects a number, got '{}'", key, value));
    return *d;
  };
  auto integer = [&]() {
    auto i = text::to_int(value);
    if (!i) throw ParseError(where, fmt::format("'{}' expects an integer, got '{}'", key, value));
    return *i;
  };
  auto boolean = [&]() {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ParseError(where, fmt::format("'{}' expects true or false", key));
  };
  auto word = [&]() { return std::string(detail::unquote(value)); };

  if (key == "image_size") cfg.render.image_size = static_cast<int>(integer());
  else if (key == "angles") {
    cfg.render.angles_deg.clear();
    for (auto v : detail::config_array(value, where)) {
      auto d = text::to_double(v);
      if (!d) throw ParseError(where, fmt::format("bad angle '{}'", v));
      cfg.render.angles_deg.push_back(*d);
    }
  } else if (key == "angle_count") cfg.render.angles_deg = uniform_angles(static_cast<int>(integer()));
  else if (key == "slice_offset") cfg.render.slice_offset = number();
  else if (key == "coloring") {
    auto c = parse_coloring(word());
    if (!c) throw ParseError(where, fmt::format("unknown coloring '{}'", value));
    cfg.render.coloring = *c;
  } else if (key == "channels") {
    cfg.render.channels.clear();
    for (auto v : detail::config_array(value, where)) {
      auto i = text::to_int(v);
      if (!i) throw ParseError(where, fmt::format("bad channel '{}'", v));
      cfg.render.channels.push_back(static_cast<int>(*i));
    }
  } else if (key == "smoothing") cfg.render.smoothing = boolean();
  else if (key == "smoothing_sigma") cfg.render.smoothing_sigma = number();
  else if (key == "depth_rule") {
    auto r = parse_depth_rule(word());
    if (!r) throw ParseError(where, fmt::format("unknown depth_rule '{}'", value));
    cfg.render.depth_rule = *r;
  } else if (key == "margin") cfg.render.margin = number();
  else if (key == "sor_k") cfg.preprocess.sor.k_neighbors = static_cast<int>(integer());
  else if (key == "sor_n_sigma") cfg.preprocess.sor.n_sigma = number();
  else if (key == "spacing") cfg.preprocess.spacing = number();
  else if (key == "normal_neighbors") cfg.normals.neighbor_count = static_cast<int>(integer());
  else if (key == "test_fraction") cfg.test_fraction = number();
  else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(integer());
    cfg.seed_set = true;
  } else if (key == "jobs") cfg.jobs = static_cast<unsigned>(integer());
  else if (key == "match_threshold") cfg.match_threshold = number();
  else if (key == "downsample") cfg.downsample = static_cast<int>(integer());
  else throw ParseError(where, fmt::format("unknown key '{}'", key));
}

/// Reads TOML-style `key = value` lines; `#` starts a comment and
/// `[section]` headers are accepted and ignored.
inline PipelineConfig parse_config(std::string_view data, const std::string& name, PipelineConfig cfg = {}) {
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty() || line.front() == '[') return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(where, "expected key = value");
    apply_setting(cfg, text::trim(line.substr(0, eq)), line.substr(eq + 1), where);
  });
  return cfg;
}

inline PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig cfg = {}) {
  return parse_config(text::read_file(path), path.string(), std::move(cfg));
}

}  // namespace treeview

#endif  // TREEVIEW_CONFIG_HPP
