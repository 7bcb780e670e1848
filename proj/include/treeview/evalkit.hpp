#ifndef TREEVIEW_EVALKIT_HPP
#define TREEVIEW_EVALKIT_HPP

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "treeview/image.hpp"
#include "treeview/manifest.hpp"
#include "treeview/projection.hpp"
#include "treeview/random.hpp"
#include "treeview/text.hpp"

namespace treeview {

// ------------------------------------------------------------------ split

struct SplitResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

/// Species-stratified train/test split. Trees recorded in more than one
/// scan always go to train; each species sends round(f * n) of its n
/// remaining trees to test (at most n - 1), chosen by a seeded shuffle.
inline SplitResult grouped_split(const DatasetManifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test fraction must lie in (0, 1)");
  std::map<std::string, std::set<std::string>> scans_of;
  for (const auto& e : manifest.entries) scans_of[e.id].insert(e.scan_id);

  SplitResult result{manifest, {}};
  std::map<Species, std::vector<std::size_t>> free_by_species;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto& e = result.manifest.entries[i];
    e.split = Split::train;
    if (scans_of[e.id].size() == 1) free_by_species[e.species].push_back(i);
  }

  std::mt19937_64 rng(seed);
  for (auto& [species, members] : free_by_species) {
    if (members.size() < 2) {
      result.warnings.push_back(fmt::format("species '{}' has {} unconstrained tree(s); all placed in train",
                                            to_string(species), members.size()));
      continue;
    }
    shuffle(members, rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    n_test = std::min(n_test, members.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) result.manifest.entries[members[k]].split = Split::test;
  }
  return result;
}

// ---------------------------------------------------------- probabilities

struct ProbabilityRecord {
  std::string tree_id;
  std::string scan_id;
  double angle_deg = 0.0;
  bool sliced = false;
  std::vector<double> probabilities;
};

struct ProbabilityTable {
  std::vector<std::string> species;
  std::vector<ProbabilityRecord> records;
  std::vector<std::string> warnings;
};

/// Reads `tree_id,scan_id,angle,slice,<species...>`. Negative or malformed
/// values are errors; rows not summing to 1 within 1e-6 produce warnings.
inline ProbabilityTable parse_probability_csv(std::string_view data, const std::string& name) {
  ProbabilityTable table;
  bool header = true;
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (text::trim(line).empty()) return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    auto f = text::split(line, ',');
    if (header) {
      header = false;
      if (f.size() < 5 || f[0] != "tree_id" || f[1] != "scan_id" || f[2] != "angle" || f[3] != "slice")
        throw ParseError(where, "expected header 'tree_id,scan_id,angle,slice,<species...>'");
      for (std::size_t i = 4; i < f.size(); ++i) table.species.emplace_back(f[i]);
      return;
    }
    if (f.size() != table.species.size() + 4)
      throw ParseError(where, fmt::format("expected {} fields, got {}", table.species.size() + 4, f.size()));
    ProbabilityRecord r;
    r.tree_id = std::string(f[0]);
    r.scan_id = std::string(f[1]);
    auto angle = text::to_double(f[2]);
    if (!angle) throw ParseError(where, fmt::format("bad angle '{}'", f[2]));
    r.angle_deg = *angle;
    if (f[3] == "slice" || f[3] == "1") r.sliced = true;
    else if (f[3] == "full" || f[3] == "0") r.sliced = false;
    else throw ParseError(where, fmt::format("bad slice flag '{}'", f[3]));
    double sum = 0.0;
    for (std::size_t i = 4; i < f.size(); ++i) {
      auto p = text::to_double(f[i]);
      if (!p || !(*p >= 0.0) || !std::isfinite(*p)) throw ParseError(where, fmt::format("bad probability '{}'", f[i]));
      r.probabilities.push_back(*p);
      sum += *p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      table.warnings.push_back(fmt::format("{}: probabilities sum to {:.9f}", where, sum));
    table.records.push_back(std::move(r));
  });
  if (header) throw ParseError(name, "empty probability file");
  return table;
}

inline std::string format_probability_csv(const ProbabilityTable& table) {
  std::string out = "tree_id,scan_id,angle,slice";
  for (const auto& s : table.species) out += "," + s;
  out += '\n';
  for (const auto& r : table.records) {
    out += fmt::format("{},{},{},{}", r.tree_id, r.scan_id, r.angle_deg, r.sliced ? "slice" : "full");
    for (double p : r.probabilities) out += fmt::format(",{:.9f}", p);
    out += '\n';
  }
  return out;
}

struct TreePrediction {
  std::string tree_id;
  std::string scan_id;
  std::vector<double> aggregated;  // element-wise sum over the tree's records
  std::size_t predicted = 0;       // argmax; ties go to the earlier species
  std::size_t records = 0;
};

/// Sums each tree's per-view probability vectors and takes the argmax.
/// Trees are keyed by (tree_id, scan_id) and returned sorted by that key.
inline std::vector<TreePrediction> aggregate_predictions(const std::vector<ProbabilityRecord>& records) {
  std::map<std::pair<std::string, std::string>, TreePrediction> trees;
  for (const auto& r : records) {
    auto [it, fresh] = trees.try_emplace({r.tree_id, r.scan_id});
    auto& t = it->second;
    if (fresh) {
      t.tree_id = r.tree_id;
      t.scan_id = r.scan_id;
      t.aggregated.assign(r.probabilities.size(), 0.0);
    } else if (t.aggregated.size() != r.probabilities.size()) {
      throw Error(fmt::format("tree {}/{} has records with differing species dimensions", r.scan_id, r.tree_id));
    }
    for (std::size_t s = 0; s < r.probabilities.size(); ++s) t.aggregated[s] += r.probabilities[s];
    ++t.records;
  }
  std::vector<TreePrediction> out;
  out.reserve(trees.size());
  for (auto& [key, t] : trees) {
    if (t.aggregated.empty()) throw Error("probability records have no species columns");
    t.predicted = static_cast<std::size_t>(
        std::max_element(t.aggregated.begin(), t.aggregated.end()) - t.aggregated.begin());
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------- metrics

struct SpeciesMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;    // true samples
  std::int64_t predicted = 0;  // predicted samples
  bool in_macro = false;       // false when the species never occurs in truth or prediction
};

struct EvalReport {
  double oa = 0.0;
  double maa = 0.0;
  double ma_f1 = 0.0;
  double kappa = 0.0;
  std::int64_t samples = 0;
  std::vector<SpeciesMetrics> species;
  std::vector<std::vector<std::int64_t>> confusion;  // row truth, column prediction
  std::vector<std::vector<double>> confusion_normalized;
};

/// Overall accuracy, per-species P/R/F1, their macro means and Cohen's
/// kappa. Species absent from both truth and prediction are left out of the
/// macro means; zero-denominator precision/recall is 0; kappa is 1 when
/// chance agreement is 1.
inline EvalReport compute_metrics(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                                  const std::vector<std::string>& species_set) {
  if (truth.size() != predicted.size()) throw Error("truth and prediction lengths differ");
  if (truth.empty()) throw Error("no samples to evaluate");
  const std::size_t k = species_set.size();
  EvalReport r;
  r.samples = static_cast<std::int64_t>(truth.size());
  r.confusion.assign(k, std::vector<std::int64_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k) throw Error("label outside the species set");
    ++r.confusion[truth[i]][predicted[i]];
  }

  std::int64_t correct = 0, chance = 0;
  std::vector<std::int64_t> rows(k, 0), cols(k, 0);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      rows[a] += r.confusion[a][b];
      cols[b] += r.confusion[a][b];
    }
  const double n = static_cast<double>(r.samples);
  double recall_sum = 0.0, f1_sum = 0.0;
  int macro_count = 0;
  for (std::size_t s = 0; s < k; ++s) {
    const std::int64_t tp = r.confusion[s][s];
    correct += tp;
    chance += rows[s] * cols[s];
    SpeciesMetrics m;
    m.name = species_set[s];
    m.support = rows[s];
    m.predicted = cols[s];
    m.precision = cols[s] > 0 ? static_cast<double>(tp) / static_cast<double>(cols[s]) : 0.0;
    m.recall = rows[s] > 0 ? static_cast<double>(tp) / static_cast<double>(rows[s]) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.in_macro = rows[s] > 0 || cols[s] > 0;
    if (m.in_macro) {
      recall_sum += m.recall;
      f1_sum += m.f1;
      ++macro_count;
    }
    r.species.push_back(m);
  }
  r.oa = static_cast<double>(correct) / n;
  r.maa = recall_sum / macro_count;
  r.ma_f1 = f1_sum / macro_count;
  const double p_o = r.oa;
  const double p_e = static_cast<double>(chance) / (n * n);
  r.kappa = p_e < 1.0 ? (p_o - p_e) / (1.0 - p_e) : 1.0;

  r.confusion_normalized.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      if (rows[a] > 0)
        r.confusion_normalized[a][b] = static_cast<double>(r.confusion[a][b]) / static_cast<double>(rows[a]);
  return r;
}

/// String-label form; labels must belong to `species_set`.
inline EvalReport compute_metrics(const std::vector<std::string>& truth, const std::vector<std::string>& predicted,
                                  const std::vector<std::string>& species_set) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < species_set.size(); ++i) index[species_set[i]] = i;
  auto lookup = [&](const std::string& label) {
    auto it = index.find(label);
    if (it == index.end()) throw Error(fmt::format("label '{}' is not in the species set", label));
    return it->second;
  };
  std::vector<std::size_t> t, p;
  for (const auto& s : truth) t.push_back(lookup(s));
  for (const auto& s : predicted) p.push_back(lookup(s));
  return compute_metrics(t, p, species_set);
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["samples"] = r.samples;
  j["OA"] = r.oa;
  j["MAA"] = r.maa;
  j["MAF1"] = r.ma_f1;
  j["kappa"] = r.kappa;
  j["species"] = nlohmann::json::array();
  for (const auto& s : r.species)
    j["species"].push_back({{"name", s.name},
                            {"precision", s.precision},
                            {"recall", s.recall},
                            {"f1", s.f1},
                            {"support", s.support},
                            {"predicted", s.predicted},
                            {"in_macro_mean", s.in_macro}});
  j["confusion"] = r.confusion;
  j["confusion_normalized"] = r.confusion_normalized;
  return j;
}

/// Plain-text summary: one macro row (OA, MAA, MAF1, kappa in percent),
/// then per-species P/R/F1.
inline std::string format_report_table(const EvalReport& r, std::string_view label = "model") {
  std::string out = fmt::format("{:<16} {:>7} {:>7} {:>7} {:>7}\n", "Type", "OA(%)", "MAA(%)", "MAF1(%)", "kappa(%)");
  out += fmt::format("{:<16} {:>7.1f} {:>7.1f} {:>7.1f} {:>7.1f}\n\n", label, 100 * r.oa, 100 * r.maa,
                     100 * r.ma_f1, 100 * r.kappa);
  out += fmt::format("{:<16} {:>7} {:>7} {:>7} {:>7}\n", "Species", "P(%)", "R(%)", "F1(%)", "n");
  for (const auto& s : r.species) {
    if (!s.in_macro) continue;
    out += fmt::format("{:<16} {:>7.1f} {:>7.1f} {:>7.1f} {:>7}\n", s.name, 100 * s.precision, 100 * s.recall,
                       100 * s.f1, s.support);
  }
  return out;
}

// --------------------------------------------------------------- truth

struct TruthLabel {
  std::string tree_id;
  std::string scan_id;
  std::string species;
};

/// `tree_id,scan_id,species` rows.
inline std::vector<TruthLabel> parse_truth_csv(std::string_view data, const std::string& name) {
  std::vector<TruthLabel> out;
  bool header = true;
  text::for_each_line(data, [&](std::size_t line_no, std::string_view line) {
    if (text::trim(line).empty()) return;
    const std::string where = fmt::format("{}:{}", name, line_no);
    if (header) {
      header = false;
      if (text::trim(line) != "tree_id,scan_id,species") throw ParseError(where, "expected header 'tree_id,scan_id,species'");
      return;
    }
    auto f = text::split(line, ',');
    if (f.size() != 3) throw ParseError(where, "expected 3 fields");
    out.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
  });
  return out;
}

inline std::string format_truth_csv(const std::vector<TruthLabel>& labels) {
  std::string out = "tree_id,scan_id,species\n";
  for (const auto& t : labels) out += fmt::format("{},{},{}\n", t.tree_id, t.scan_id, t.species);
  return out;
}

struct Evaluation {
  EvalReport report;
  std::vector<TreePrediction> trees;
  std::vector<std::string> warnings;
};

/// Aggregates per-view probabilities per tree, joins with the truth table
/// and computes the metrics over the trees present in both.
inline Evaluation evaluate_predictions(const ProbabilityTable& probs, const std::vector<TruthLabel>& truth) {
  Evaluation ev;
  ev.warnings = probs.warnings;
  ev.trees = aggregate_predictions(probs.records);
  std::map<std::pair<std::string, std::string>, std::string> truth_of;
  for (const auto& t : truth) truth_of[{t.tree_id, t.scan_id}] = t.species;

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < probs.species.size(); ++i) index[probs.species[i]] = i;
  std::vector<std::size_t> y, y_hat;
  std::set<std::pair<std::string, std::string>> predicted_keys;
  for (const auto& t : ev.trees) {
    predicted_keys.insert({t.tree_id, t.scan_id});
    auto it = truth_of.find({t.tree_id, t.scan_id});
    if (it == truth_of.end()) {
      ev.warnings.push_back(fmt::format("no truth label for tree {}/{}", t.scan_id, t.tree_id));
      continue;
    }
    auto s = index.find(it->second);
    if (s == index.end())
      throw Error(fmt::format("truth species '{}' is not a probability column", it->second));
    y.push_back(s->second);
    y_hat.push_back(t.predicted);
  }
  for (const auto& t : truth)
    if (!predicted_keys.count({t.tree_id, t.scan_id}))
      ev.warnings.push_back(fmt::format("no predictions for tree {}/{}", t.scan_id, t.tree_id));
  ev.report = compute_metrics(y, y_hat, probs.species);
  return ev;
}

// ------------------------------------------------------- baseline model

struct LabeledImage {
  Image image;
  std::size_t label = 0;
  ImageMeta meta;
};

/// Nearest-centroid classifier over bilinearly downsampled images. Class
/// probabilities are a softmin of centroid distances with the mean pairwise
/// centroid distance as temperature.
class CentroidClassifier {
public:
  CentroidClassifier(std::size_t class_count, int downsample) : classes_(class_count), size_(downsample) {
    if (class_count == 0) throw Error("need at least one class");
    if (downsample < 1) throw Error("downsample size must be positive");
  }

  std::vector<double> features(const Image& img) const {
    const Image small = resize_bilinear(img, size_, size_);
    std::vector<double> f(small.rgb.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = small.rgb[i] / 255.0;
    return f;
  }

  void fit(const std::vector<LabeledImage>& train) {
    if (train.empty()) throw Error("no training images");
    const int w = train.front().image.width, h = train.front().image.height;
    const std::size_t dim = static_cast<std::size_t>(size_) * size_ * 3;
    centroids_.assign(classes_, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(classes_, 0);
    for (const auto& s : train) {
      if (s.image.width != w || s.image.height != h) throw Error("training images differ in size");
      if (s.label >= classes_) throw Error("training label outside the class set");
      const auto f = features(s.image);
      for (std::size_t d = 0; d < dim; ++d) centroids_[s.label][d] += f[d];
      ++counts[s.label];
    }
    present_.assign(classes_, false);
    for (std::size_t c = 0; c < classes_; ++c) {
      if (counts[c] == 0) continue;
      present_[c] = true;
      for (double& v : centroids_[c]) v /= static_cast<double>(counts[c]);
    }
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < classes_; ++a)
      for (std::size_t b = a + 1; b < classes_; ++b)
        if (present_[a] && present_[b]) {
          sum += distance(centroids_[a], centroids_[b]);
          ++pairs;
        }
    temperature_ = pairs > 0 && sum > 0.0 ? sum / pairs : 1.0;
    width_ = w;
    height_ = h;
  }

  std::vector<double> predict(const Image& img) const {
    if (centroids_.empty()) throw Error("classifier is not fitted");
    if (img.width != width_ || img.height != height_) throw Error("test image size differs from training images");
    const auto f = features(img);
    std::vector<double> d(classes_, 0.0);
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes_; ++c)
      if (present_[c]) dmin = std::min(dmin, d[c] = distance(f, centroids_[c]));
    std::vector<double> p(classes_, 0.0);
    double z = 0.0;
    for (std::size_t c = 0; c < classes_; ++c)
      if (present_[c]) z += p[c] = std::exp(-(d[c] - dmin) / temperature_);
    for (double& v : p) v /= z;
    return p;
  }

  double temperature() const { return temperature_; }

private:
  static double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }

  std::size_t classes_;
  int size_;
  int width_ = 0, height_ = 0;
  std::vector<std::vector<double>> centroids_;
  std::vector<bool> present_;
  double temperature_ = 1.0;
};

/// Fits on `train` and emits one probability record per test image.
inline std::vector<ProbabilityRecord> baseline_classify(const std::vector<LabeledImage>& train,
                                                        const std::vector<LabeledImage>& test, std::size_t class_count,
                                                        int downsample = 32) {
  CentroidClassifier model(class_count, downsample);
  model.fit(train);
  std::vector<ProbabilityRecord> out;
  out.reserve(test.size());
  for (const auto& s : test)
    out.push_back({s.meta.tree_id, s.meta.scan_id, s.meta.angle_deg, s.meta.sliced, model.predict(s.image)});
  return out;
}

}  // namespace treeview

#endif  // TREEVIEW_EVALKIT_HPP
