// SPDX-License-Identifier: Apache-2.0
//
// Sparse non-negative concept decomposition of an embedding x over a
// dictionary C (rows c_i):
//
//   min_{w >= 0}  || C^T w - x ||^2 + 2 lambda ||w||_1
//
// solved by cyclic coordinate descent and certified through its KKT
// conditions: c_i . (x - C^T w) == lambda where w_i > 0, <= lambda elsewhere.
#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace centerlens::decomp {

/// Named concept embeddings with unit-norm rows.
class ConceptDictionary {
 public:
  ConceptDictionary() = default;

  /// Rows are l2-normalized; zero rows, mismatched sizes and duplicate or
  /// empty names are rejected.
  ConceptDictionary(std::vector<std::string> names, std::vector<float> rows, int dim);

  std::size_t size() const { return names_.size(); }
  int dim() const { return dim_; }
  const std::vector<std::string>& names() const { return names_; }
  std::span<const double> row(std::size_t i) const {
    return {rows_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  /// Index of `name`, or -1.
  int index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<double> rows_;
  int dim_ = 0;
};

/// `concepts.C` (n x d) with names in the `.names.json` sidecar.
ConceptDictionary load_dictionary(const std::filesystem::path& bundle_path);
void save_dictionary(const ConceptDictionary& dict, const std::filesystem::path& bundle_path);

/// Random unit-norm dictionary named concept_0..concept_{n-1}.
ConceptDictionary synthetic_dictionary(int n, int dim, std::uint64_t seed);

struct SolverConfig {
  double tol = 1e-5;             // KKT certification threshold
  int max_iter = 10000;          // full sweeps
  double rel_decrease = 1e-10;   // stop when a sweep improves less than this (relative)
  bool normalize_input = true;   // l2-normalize x before solving
};

struct ConceptWeights {
  std::vector<double> w;
  double lambda = 0.0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  bool certified = false;
  int iterations = 0;
};

inline constexpr double kDefaultLambda = 0.2;

ConceptWeights splice_decompose(std::span<const float> x, const ConceptDictionary& dict, double lambda,
                                const SolverConfig& config = {});

/// || C^T w - x ||^2 + 2 lambda sum(w), x taken as given.
double objective(std::span<const double> w, std::span<const double> x, const ConceptDictionary& dict, double lambda);

/// Largest KKT violation of w for the given x.
double kkt_residual(std::span<const double> w, std::span<const double> x, const ConceptDictionary& dict,
                    double lambda);

struct RankedConcept {
  std::string name;
  double weight = 0.0;
  std::size_t index = 0;
};

/// The k largest strictly positive weights, descending; ties by index.
std::vector<RankedConcept> top_concepts(const ConceptWeights& weights, const ConceptDictionary& dict, int k);

struct VanishingEntry {
  std::string concept_name;
  double center_weight = 0.0;
  double offcenter_weight = 0.0;
  bool vanished = false;  // center > tau and off-center <= tau
};

inline constexpr double kDefaultVanishTau = 1e-4;

std::vector<VanishingEntry> concept_vanishing_report(const ConceptWeights& center, const ConceptWeights& offcenter,
                                                     const ConceptDictionary& dict,
                                                     const std::vector<std::string>& targets,
                                                     double tau = kDefaultVanishTau);

std::string decomposition_json(const ConceptWeights& weights, const ConceptDictionary& dict, int top_k);
/// `concept,weight` rows for the positive weights, descending.
std::string decomposition_csv(const ConceptWeights& weights, const ConceptDictionary& dict);
std::string vanishing_json(const std::vector<VanishingEntry>& report, double tau);
std::string vanishing_csv(const std::vector<VanishingEntry>& report);

}  // namespace centerlens::decomp
