// SPDX-License-Identifier: Apache-2.0
//
// Zero-shot classification, center/off-center accuracy, per-cell maps and
// report I/O.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "centerlens/encoder.hpp"
#include "centerlens/interventions.hpp"
#include "centerlens/tensorio.hpp"

namespace centerlens::bench {

using tensorio::ManifestEntry;
using tensorio::Placement;

enum class Variant { kBaseline, kVp, kAr, kMeanPool };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Accuracies are percentages at full precision; rounding happens only when
/// rendering text.
struct BiasReport {
  std::string model_id;
  Variant variant = Variant::kBaseline;
  double center_acc = 0.0;
  double offcenter_acc = 0.0;
  double center_bias = 0.0;  // center_acc - offcenter_acc
  std::optional<double> improv_offcenter;
  std::optional<std::string> improv_baseline;  // variant/model the improvement is measured against
  int n_center = 0;
  int n_offcenter = 0;
  int correct_center = 0;
  int correct_offcenter = 0;
  std::string manifest_digest;
};

/// Candidate embeddings for zero-shot classification, rows l2-normalized.
struct ClassSet {
  std::vector<std::string> names;
  vit::Matrix embeddings;  // m x d

  /// Normalizes rows; rejects zero rows and name/row mismatch.
  static ClassSet make(std::vector<std::string> names, vit::Matrix embeddings);
  std::map<std::string, int> label_map() const;
};

/// Either one global class set (`classes.embeddings` + names array sidecar)
/// or per-sample candidate groups (`candidates.<sample_id>` entries + a
/// sidecar object mapping sample_id to candidate names).
struct Candidates {
  std::optional<ClassSet> global;
  std::map<std::string, ClassSet> per_sample;

  const ClassSet& for_sample(const std::string& sample_id) const;
};

Candidates load_candidates(const std::filesystem::path& bundle_path);
void save_classes(const ClassSet& classes, const std::filesystem::path& bundle_path);

/// Argmax cosine similarity against l2-normalized rows; ties go to the
/// lowest index.
int zero_shot_classify(std::span<const float> x, const vit::Matrix& class_embeddings);

double cosine(std::span<const float> a, std::span<const float> b);

/// Accuracy on each placement subset. Throws DataError listing samples
/// without a prediction.
BiasReport evaluate(std::span<const ManifestEntry> manifest, const std::map<std::string, int>& predictions,
                    const std::map<std::string, int>& label_map, const std::string& model_id = "",
                    Variant variant = Variant::kBaseline);

/// Same metric from per-sample correctness.
BiasReport evaluate_outcomes(std::span<const ManifestEntry> manifest, const std::map<std::string, bool>& correct,
                             const std::string& model_id = "", Variant variant = Variant::kBaseline);

/// mitigated.offcenter_acc - baseline.offcenter_acc; both reports must come
/// from the same manifest.
double improvement(const BiasReport& mitigated, const BiasReport& baseline);

struct CellCount {
  int correct = 0;
  int total = 0;
};

struct CellAccuracyMap {
  int k = 0;
  std::vector<CellCount> cells;  // row-major k x k

  const CellCount& at(int r, int c) const { return cells[static_cast<std::size_t>(r) * k + c]; }
  /// Percentage, or nullopt for cells without samples.
  std::optional<double> accuracy(int r, int c) const;
};

CellAccuracyMap per_cell_accuracy(std::span<const ManifestEntry> manifest, const std::map<std::string, bool>& correct,
                                  int k);
CellAccuracyMap per_cell_accuracy(std::span<const ManifestEntry> manifest, const std::map<std::string, int>& predictions,
                                  const std::map<std::string, int>& label_map, int k);

/// "on" -> center; "left_of", "right_of", "under" -> off-center.
Placement whatsup_placement(const std::string& relation);
std::vector<Placement> partition_whatsup(std::span<const std::pair<std::string, std::string>> relations);

/// One decimal place, half away from zero.
double display_round(double v);

std::string report_json(const BiasReport& r);
BiasReport parse_report_json(const std::string& text);
BiasReport read_report(const std::filesystem::path& path);
void write_report(const BiasReport& r, const std::filesystem::path& path);
/// Aligned-column text table, one row per report.
std::string report_table(std::span<const BiasReport> reports);
std::string cells_csv(const CellAccuracyMap& cells);
void write_cells_heatmap(const CellAccuracyMap& cells, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Runner

struct BenchConfig {
  std::string model_id = "model";
  Variant variant = Variant::kBaseline;
  int jobs = 1;
  /// vp: boxes by sample id; when absent, GRID ground truth from grid_k.
  std::optional<std::vector<intervene::ImageDetections>> detections;
  std::optional<int> grid_k;
  intervene::PromptStyle prompt;
  intervene::RedistributionConfig redistribution;
};

struct SampleOutcome {
  std::string sample_id;
  Placement placement = Placement::kCenter;
  int predicted = -1;
  std::string predicted_label;
  bool correct = false;
  double true_class_cosine = 0.0;  // NaN when the true label is not a candidate
};

struct BenchResult {
  BiasReport report;
  std::optional<CellAccuracyMap> cells;
  std::vector<SampleOutcome> samples;  // manifest order
};

/// Embeds every manifest image under the variant and scores it.
BenchResult run_bench(const vit::WeightBundle& weights, std::span<const ManifestEntry> manifest,
                      const std::filesystem::path& manifest_dir, const Candidates& candidates,
                      const BenchConfig& config);

std::string samples_csv(std::span<const SampleOutcome> samples);

}  // namespace centerlens::bench
