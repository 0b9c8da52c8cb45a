// SPDX-License-Identifier: Apache-2.0
#include "centerlens/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "centerlens/error.hpp"
#include "centerlens/parallel.hpp"
#include "json.hpp"

namespace centerlens::bench {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kVp: return "vp";
    case Variant::kAr: return "ar";
    case Variant::kMeanPool: return "meanpool";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::kBaseline;
  if (s == "vp") return Variant::kVp;
  if (s == "ar") return Variant::kAr;
  if (s == "meanpool") return Variant::kMeanPool;
  throw InvalidArgument("unknown variant '" + s + "' (baseline|vp|ar|meanpool)");
}

// ---------------------------------------------------------------------------
// classes

ClassSet ClassSet::make(std::vector<std::string> names, vit::Matrix embeddings) {
  if (static_cast<int>(names.size()) != embeddings.rows) {
    throw DataError("class set has " + std::to_string(names.size()) + " names for " +
                    std::to_string(embeddings.rows) + " embeddings");
  }
  for (int r = 0; r < embeddings.rows; ++r) {
    auto row = embeddings.row(r);
    double sq = 0.0;
    for (float v : row) sq += static_cast<double>(v) * v;
    if (!(sq > 0.0)) throw DataError("class '" + names[r] + "' has a zero embedding");
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : row) v = static_cast<float>(v * inv);
  }
  return ClassSet{std::move(names), std::move(embeddings)};
}

std::map<std::string, int> ClassSet::label_map() const {
  std::map<std::string, int> m;
  for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], static_cast<int>(i));
  return m;
}

const ClassSet& Candidates::for_sample(const std::string& sample_id) const {
  if (auto it = per_sample.find(sample_id); it != per_sample.end()) return it->second;
  if (global) return *global;
  throw DataError("no candidate embeddings for sample '" + sample_id + "'");
}

namespace {

vit::Matrix to_matrix(const tensorio::Tensor& t, const std::string& name) {
  if (t.shape.size() != 2) throw DataError("tensor '" + name + "' must be a matrix");
  vit::Matrix m(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  m.data = t.data;
  return m;
}

}  // namespace

Candidates load_candidates(const fs::path& path) {
  const auto bundle = tensorio::read_bundle_file(path);
  const auto sidecar = tensorio::names_sidecar_path(path);
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open names sidecar " + sidecar.string());
  nlohmann::json names;
  try {
    names = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("names sidecar " + sidecar.string() + " is not valid JSON: " + e.what());
  }

  Candidates c;
  try {
    if (const auto* t = bundle.find("classes.embeddings")) {
      if (!names.is_array()) throw DataError("global class bundle needs a JSON array of names");
      c.global = ClassSet::make(names.get<std::vector<std::string>>(), to_matrix(*t, "classes.embeddings"));
    }
    const std::string prefix = "candidates.";
    for (const auto& [name, t] : bundle.entries()) {
      if (name.rfind(prefix, 0) != 0) continue;
      const std::string id = name.substr(prefix.size());
      if (!names.is_object() || !names.contains(id)) {
        throw DataError("names sidecar lacks candidate names for sample '" + id + "'");
      }
      c.per_sample.emplace(id, ClassSet::make(names[id].get<std::vector<std::string>>(), to_matrix(t, name)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("names sidecar " + sidecar.string() + ": " + e.what());
  }
  if (!c.global && c.per_sample.empty()) {
    throw DataError("bundle " + path.string() + " holds neither classes.embeddings nor candidates.* entries");
  }
  return c;
}

void save_classes(const ClassSet& classes, const fs::path& path) {
  tensorio::TensorBundle b;
  b.add("classes.embeddings", {classes.embeddings.rows, classes.embeddings.cols}, classes.embeddings.data);
  tensorio::write_bundle_file(b, path);
  tensorio::write_names(classes.names, tensorio::names_sidecar_path(path));
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine of vectors with different dimensions");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

int zero_shot_classify(std::span<const float> x, const vit::Matrix& classes) {
  if (classes.rows == 0) throw InvalidArgument("zero-shot classification needs at least one class");
  if (classes.cols != static_cast<int>(x.size())) {
    throw InvalidArgument("embedding dimension " + std::to_string(x.size()) + " != class dimension " +
                          std::to_string(classes.cols));
  }
  // Rows are unit norm and ||x|| is shared, so the dot product ranks cosines.
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < classes.rows; ++r) {
    double s = 0.0;
    const auto row = classes.row(r);
    for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]) * row[i];
    if (s > best_score) {
      best_score = s;
      best = r;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// metrics

BiasReport evaluate_outcomes(std::span<const ManifestEntry> manifest, const std::map<std::string, bool>& correct,
                             const std::string& model_id, Variant variant) {
  BiasReport r;
  r.model_id = model_id;
  r.variant = variant;
  std::vector<std::string> missing;
  for (const auto& e : manifest) {
    auto it = correct.find(e.sample_id);
    if (it == correct.end()) {
      missing.push_back(e.sample_id);
      continue;
    }
    if (e.placement == Placement::kCenter) {
      ++r.n_center;
      r.correct_center += it->second ? 1 : 0;
    } else {
      ++r.n_offcenter;
      r.correct_offcenter += it->second ? 1 : 0;
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw DataError("missing predictions for samples: " + list);
  }
  r.center_acc = r.n_center ? 100.0 * r.correct_center / r.n_center : 0.0;
  r.offcenter_acc = r.n_offcenter ? 100.0 * r.correct_offcenter / r.n_offcenter : 0.0;
  r.center_bias = r.center_acc - r.offcenter_acc;
  r.manifest_digest = tensorio::manifest_digest({manifest.begin(), manifest.end()});
  return r;
}

namespace {

std::map<std::string, bool> correctness(std::span<const ManifestEntry> manifest,
                                        const std::map<std::string, int>& predictions,
                                        const std::map<std::string, int>& label_map) {
  std::map<std::string, bool> correct;
  for (const auto& e : manifest) {
    auto p = predictions.find(e.sample_id);
    if (p == predictions.end()) continue;
    auto l = label_map.find(e.class_label);
    if (l == label_map.end()) {
      throw DataError("sample '" + e.sample_id + "' has class label '" + e.class_label + "' missing from the label map");
    }
    correct[e.sample_id] = p->second == l->second;
  }
  return correct;
}

}  // namespace

BiasReport evaluate(std::span<const ManifestEntry> manifest, const std::map<std::string, int>& predictions,
                    const std::map<std::string, int>& label_map, const std::string& model_id, Variant variant) {
  return evaluate_outcomes(manifest, correctness(manifest, predictions, label_map), model_id, variant);
}

double improvement(const BiasReport& mitigated, const BiasReport& baseline) {
  if (mitigated.manifest_digest != baseline.manifest_digest) {
    throw DataError("reports were computed on different manifests (" + mitigated.manifest_digest + " vs " +
                    baseline.manifest_digest + ")");
  }
  return mitigated.offcenter_acc - baseline.offcenter_acc;
}

std::optional<double> CellAccuracyMap::accuracy(int r, int c) const {
  const auto& cell = at(r, c);
  if (cell.total == 0) return std::nullopt;
  return 100.0 * cell.correct / cell.total;
}

CellAccuracyMap per_cell_accuracy(std::span<const ManifestEntry> manifest, const std::map<std::string, bool>& correct,
                                  int k) {
  if (k <= 0) throw InvalidArgument("grid side must be positive");
  CellAccuracyMap map{k, std::vector<CellCount>(static_cast<std::size_t>(k) * k)};
  for (const auto& e : manifest) {
    if (e.cell_row < 0 || e.cell_col < 0 || e.cell_row >= k || e.cell_col >= k) {
      throw DataError("sample '" + e.sample_id + "' anchor (" + std::to_string(e.cell_row) + "," +
                      std::to_string(e.cell_col) + ") lies outside the " + std::to_string(k) + "x" +
                      std::to_string(k) + " grid");
    }
    auto it = correct.find(e.sample_id);
    if (it == correct.end()) throw DataError("missing prediction for sample '" + e.sample_id + "'");
    auto& cell = map.cells[static_cast<std::size_t>(e.cell_row) * k + e.cell_col];
    ++cell.total;
    cell.correct += it->second ? 1 : 0;
  }
  return map;
}

CellAccuracyMap per_cell_accuracy(std::span<const ManifestEntry> manifest, const std::map<std::string, int>& predictions,
                                  const std::map<std::string, int>& label_map, int k) {
  return per_cell_accuracy(manifest, correctness(manifest, predictions, label_map), k);
}

Placement whatsup_placement(const std::string& relation) {
  if (relation == "on") return Placement::kCenter;
  if (relation == "left_of" || relation == "right_of" || relation == "under") return Placement::kOffCenter;
  throw DataError("unknown relation '" + relation + "' (on|left_of|right_of|under)");
}

std::vector<Placement> partition_whatsup(std::span<const std::pair<std::string, std::string>> relations) {
  std::vector<Placement> out;
  out.reserve(relations.size());
  for (const auto& [id, rel] : relations) {
    try {
      out.push_back(whatsup_placement(rel));
    } catch (const DataError& e) {
      throw DataError("sample '" + id + "': " + e.what());
    }
  }
  return out;
}

double display_round(double v) { return std::round(v * 10.0) / 10.0; }

// ---------------------------------------------------------------------------
// serialization

std::string report_json(const BiasReport& r) {
  ordered_json j;
  j["model_id"] = r.model_id;
  j["variant"] = to_string(r.variant);
  j["center_acc"] = r.center_acc;
  j["offcenter_acc"] = r.offcenter_acc;
  j["center_bias"] = r.center_bias;
  j["improv_offcenter"] = r.improv_offcenter ? ordered_json(*r.improv_offcenter) : ordered_json(nullptr);
  j["improv_baseline"] = r.improv_baseline ? ordered_json(*r.improv_baseline) : ordered_json(nullptr);
  j["n_center"] = r.n_center;
  j["n_offcenter"] = r.n_offcenter;
  j["correct_center"] = r.correct_center;
  j["correct_offcenter"] = r.correct_offcenter;
  j["manifest_digest"] = r.manifest_digest;
  return j.dump(2) + "\n";
}

BiasReport parse_report_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    BiasReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.center_acc = j.at("center_acc").get<double>();
    r.offcenter_acc = j.at("offcenter_acc").get<double>();
    r.center_bias = j.at("center_bias").get<double>();
    if (j.contains("improv_offcenter") && !j["improv_offcenter"].is_null()) {
      r.improv_offcenter = j["improv_offcenter"].get<double>();
    }
    if (j.contains("improv_baseline") && !j["improv_baseline"].is_null()) {
      r.improv_baseline = j["improv_baseline"].get<std::string>();
    }
    r.n_center = j.at("n_center").get<int>();
    r.n_offcenter = j.at("n_offcenter").get<int>();
    r.correct_center = j.value("correct_center", 0);
    r.correct_offcenter = j.value("correct_offcenter", 0);
    r.manifest_digest = j.value("manifest_digest", std::string{});
    if (r.center_acc < 0 || r.center_acc > 100 || r.offcenter_acc < 0 || r.offcenter_acc > 100) {
      throw DataError("report accuracies must lie in [0, 100]");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
}

BiasReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_report_json(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_report(const BiasReport& r, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << report_json(r);
}

namespace {

std::string fixed1(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << display_round(v);
  return os.str();
}

std::string signed1(double v) {
  const double rounded = display_round(v);
  return (rounded > 0 ? "+" : "") + fixed1(rounded);
}

}  // namespace

std::string report_table(std::span<const BiasReport> reports) {
  const std::vector<std::string> header = {"model", "variant", "center", "off-center", "center bias",
                                           "improv. off-center"};
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : reports) {
    rows.push_back({r.model_id, to_string(r.variant), fixed1(r.center_acc), fixed1(r.offcenter_acc),
                    fixed1(r.center_bias), r.improv_offcenter ? signed1(*r.improv_offcenter) : "-"});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c == 0 || c == 1) {
        os << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
      } else {
        os << std::right << std::setw(static_cast<int>(width[c])) << rows[i][c];
      }
      os << (c + 1 < rows[i].size() ? "  " : "\n");
    }
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::string cells_csv(const CellAccuracyMap& cells) {
  std::ostringstream os;
  os << "row,col,correct,total,accuracy\n";
  for (int r = 0; r < cells.k; ++r) {
    for (int c = 0; c < cells.k; ++c) {
      const auto& cell = cells.at(r, c);
      os << r << ',' << c << ',' << cell.correct << ',' << cell.total << ',';
      if (auto acc = cells.accuracy(r, c)) {
        os << std::setprecision(10) << *acc;
      } else {
        os << "empty";
      }
      os << '\n';
    }
  }
  return os.str();
}

void write_cells_heatmap(const CellAccuracyMap& cells, const fs::path& path) {
  // Empty cells are black; occupied cells run from 0.2 (0%) to 1.0 (100%).
  constexpr int kScale = 16;
  const int side = cells.k * kScale;
  Image img(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const auto acc = cells.accuracy(y / kScale, x / kScale);
      const float v = acc ? static_cast<float>(0.2 + 0.8 * *acc / 100.0) : 0.0f;
      for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) = v;
    }
  }
  write_png(img, path);
}

// ---------------------------------------------------------------------------
// runner

BenchResult run_bench(const vit::WeightBundle& weights, std::span<const ManifestEntry> manifest,
                      const fs::path& manifest_dir, const Candidates& candidates, const BenchConfig& config) {
  std::map<std::string, const std::vector<intervene::DetectionBox>*> boxes_by_id;
  if (config.detections) {
    for (const auto& d : *config.detections) boxes_by_id[d.image_id] = &d.boxes;
  }
  if (config.variant == Variant::kVp && !config.detections && !config.grid_k) {
    throw InvalidArgument("vp variant needs detections or a GRID side to derive boxes");
  }
  if (config.variant == Variant::kVp) config.prompt.validate();

  vit::ForwardOptions options;
  if (config.variant == Variant::kAr) options.edit = intervene::redistribution_editor(weights, config.redistribution);
  if (config.variant == Variant::kMeanPool) options.pooling = vit::Pooling::kMeanPatches;

  std::vector<SampleOutcome> samples(manifest.size());
  parallel_for(manifest.size(), config.jobs, [&](std::size_t i) {
    const ManifestEntry& e = manifest[i];
    Image img = read_png(manifest_dir / e.image_path);
    if (config.variant == Variant::kVp) {
      std::vector<intervene::DetectionBox> boxes;
      if (auto it = boxes_by_id.find(e.sample_id); it != boxes_by_id.end()) {
        boxes = *it->second;
      } else if (config.grid_k) {
        if (e.cell_row < 0 || e.cell_col < 0) throw DataError("sample '" + e.sample_id + "' has no grid anchor for vp boxes");
        const int patch_px = img.width() / *config.grid_k;
        boxes.push_back(intervene::grid_object_box(e.cell_row, e.cell_col, e.object_size_s, patch_px));
      }
      img = intervene::overlay_prompts(img, boxes, config.prompt);
    }
    const auto emb = vit::forward(img, weights, options).embedding;
    const ClassSet& cs = candidates.for_sample(e.sample_id);
    SampleOutcome& out = samples[i];
    out.sample_id = e.sample_id;
    out.placement = e.placement;
    out.predicted = zero_shot_classify(emb.values, cs.embeddings);
    out.predicted_label = cs.names[static_cast<std::size_t>(out.predicted)];
    out.correct = out.predicted_label == e.class_label;
    const auto it = std::find(cs.names.begin(), cs.names.end(), e.class_label);
    out.true_class_cosine = it == cs.names.end()
                                ? std::numeric_limits<double>::quiet_NaN()
                                : cosine(emb.values, cs.embeddings.row(static_cast<int>(it - cs.names.begin())));
  });

  BenchResult result;
  if (candidates.global && candidates.per_sample.empty()) {
    std::map<std::string, int> predictions;
    for (const auto& s : samples) predictions[s.sample_id] = s.predicted;
    result.report = evaluate(manifest, predictions, candidates.global->label_map(), config.model_id, config.variant);
    if (config.grid_k) {
      result.cells = per_cell_accuracy(manifest, predictions, candidates.global->label_map(), *config.grid_k);
    }
  } else {
    std::map<std::string, bool> correct;
    for (const auto& s : samples) correct[s.sample_id] = s.correct;
    result.report = evaluate_outcomes(manifest, correct, config.model_id, config.variant);
    if (config.grid_k) result.cells = per_cell_accuracy(manifest, correct, *config.grid_k);
  }
  result.samples = std::move(samples);
  return result;
}

std::string samples_csv(std::span<const SampleOutcome> samples) {
  std::ostringstream os;
  os << "sample_id,placement,predicted,predicted_label,correct,true_class_cosine\n";
  os << std::setprecision(9);
  for (const auto& s : samples) {
    os << s.sample_id << ',' << tensorio::to_string(s.placement) << ',' << s.predicted << ',' << s.predicted_label
       << ',' << (s.correct ? 1 : 0) << ',' << s.true_class_cosine << '\n';
  }
  return os.str();
}

}  // namespace centerlens::bench
