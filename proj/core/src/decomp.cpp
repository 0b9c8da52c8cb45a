// SPDX-License-Identifier: Apache-2.0
#include "centerlens/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "centerlens/error.hpp"
#include "centerlens/rng.hpp"
#include "centerlens/tensorio.hpp"
#include "json.hpp"

namespace centerlens::decomp {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// x - C^T w
std::vector<double> residual(std::span<const double> w, std::span<const double> x, const ConceptDictionary& dict) {
  std::vector<double> r(x.begin(), x.end());
  for (std::size_t i = 0; i < dict.size(); ++i) {
    if (w[i] == 0.0) continue;
    const auto c = dict.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= w[i] * c[j];
  }
  return r;
}

double objective_from_residual(std::span<const double> r, std::span<const double> w, double lambda) {
  double l1 = 0.0;
  for (double v : w) l1 += v;
  return dot(r, r) + 2.0 * lambda * l1;
}

}  // namespace

ConceptDictionary::ConceptDictionary(std::vector<std::string> names, std::vector<float> rows, int dim)
    : names_(std::move(names)), dim_(dim) {
  if (dim <= 0) throw InvalidArgument("dictionary dimension must be positive");
  if (rows.size() != names_.size() * static_cast<std::size_t>(dim)) {
    throw DataError("dictionary has " + std::to_string(names_.size()) + " names but " +
                    std::to_string(rows.size() / static_cast<std::size_t>(dim)) + " rows");
  }
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw DataError("dictionary concept names must be non-empty");
    if (!seen.insert(n).second) throw DataError("duplicate concept name '" + n + "'");
  }
  rows_.assign(rows.begin(), rows.end());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    std::span<double> r(rows_.data() + i * dim, static_cast<std::size_t>(dim));
    const double norm = std::sqrt(dot(r, r));
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DataError("concept '" + names_[i] + "' has a zero or non-finite row");
    for (double& v : r) v /= norm;
  }
}

int ConceptDictionary::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

ConceptDictionary load_dictionary(const std::filesystem::path& path) {
  const auto bundle = tensorio::read_bundle_file(path);
  const auto& C = bundle.get("concepts.C");
  if (C.shape.size() != 2) throw DataError("tensor 'concepts.C' must be a matrix");
  auto names = tensorio::read_names(tensorio::names_sidecar_path(path));
  if (static_cast<std::int64_t>(names.size()) != C.shape[0]) {
    throw DataError("names sidecar has " + std::to_string(names.size()) + " entries for " +
                    std::to_string(C.shape[0]) + " concept rows");
  }
  return ConceptDictionary(std::move(names), C.data, static_cast<int>(C.shape[1]));
}

void save_dictionary(const ConceptDictionary& dict, const std::filesystem::path& path) {
  std::vector<float> rows;
  rows.reserve(dict.size() * static_cast<std::size_t>(dict.dim()));
  for (std::size_t i = 0; i < dict.size(); ++i)
    for (double v : dict.row(i)) rows.push_back(static_cast<float>(v));
  tensorio::TensorBundle b;
  b.add("concepts.C", {static_cast<std::int64_t>(dict.size()), dict.dim()}, std::move(rows));
  tensorio::write_bundle_file(b, path);
  tensorio::write_names(dict.names(), tensorio::names_sidecar_path(path));
}

ConceptDictionary synthetic_dictionary(int n, int dim, std::uint64_t seed) {
  if (n <= 0 || dim <= 0) throw InvalidArgument("synthetic dictionary needs n > 0 and dim > 0");
  Rng rng(seed);
  std::vector<std::string> names;
  std::vector<float> rows;
  for (int i = 0; i < n; ++i) {
    names.push_back("concept_" + std::to_string(i));
    for (int j = 0; j < dim; ++j) rows.push_back(static_cast<float>(rng.normal()));
  }
  return ConceptDictionary(std::move(names), std::move(rows), dim);
}

double objective(std::span<const double> w, std::span<const double> x, const ConceptDictionary& dict, double lambda) {
  return objective_from_residual(residual(w, x, dict), w, lambda);
}

double kkt_residual(std::span<const double> w, std::span<const double> x, const ConceptDictionary& dict,
                    double lambda) {
  const auto r = residual(w, x, dict);
  double worst = 0.0;
  for (std::size_t i = 0; i < dict.size(); ++i) {
    const double g = dot(dict.row(i), r);
    const double violation = w[i] > 0.0 ? std::abs(g - lambda) : std::max(0.0, g - lambda);
    worst = std::max(worst, violation);
  }
  return worst;
}

ConceptWeights splice_decompose(std::span<const float> x_in, const ConceptDictionary& dict, double lambda,
                                const SolverConfig& config) {
  if (static_cast<int>(x_in.size()) != dict.dim()) {
    throw InvalidArgument("embedding has dimension " + std::to_string(x_in.size()) + " but the dictionary has " +
                          std::to_string(dict.dim()));
  }
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");

  std::vector<double> x(x_in.begin(), x_in.end());
  if (config.normalize_input) {
    const double norm = std::sqrt(dot(x, x));
    if (norm > 0.0) {
      for (double& v : x) v /= norm;
    }
  }

  const std::size_t n = dict.size();
  ConceptWeights out;
  out.lambda = lambda;
  out.w.assign(n, 0.0);
  std::vector<double> r = x;
  double obj = objective_from_residual(r, out.w, lambda);

  for (int it = 1; it <= config.max_iter; ++it) {
    out.iterations = it;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = dict.row(i);
      // Unit rows: the exact coordinate minimizer is max(0, w_i + c_i.r - lambda).
      const double updated = std::max(0.0, out.w[i] + dot(c, r) - lambda);
      const double delta = updated - out.w[i];
      if (delta == 0.0) continue;
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= delta * c[j];
      out.w[i] = updated;
    }
    const double next = objective_from_residual(r, out.w, lambda);
    const double decrease = obj - next;
    obj = next;
    if (decrease <= config.rel_decrease * std::max(std::abs(obj), std::numeric_limits<double>::min())) break;
  }

  out.objective = objective(out.w, x, dict, lambda);
  out.kkt_residual = kkt_residual(out.w, x, dict, lambda);
  out.certified = out.kkt_residual <= config.tol;
  return out;
}

std::vector<RankedConcept> top_concepts(const ConceptWeights& weights, const ConceptDictionary& dict, int k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (weights.w.size() != dict.size()) throw InvalidArgument("weights do not match the dictionary");
  std::vector<RankedConcept> ranked;
  for (std::size_t i = 0; i < weights.w.size(); ++i) {
    if (weights.w[i] > 0.0) ranked.push_back({dict.names()[i], weights.w[i], i});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedConcept& a, const RankedConcept& b) {
    return a.weight > b.weight;
  });
  if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));
  return ranked;
}

std::vector<VanishingEntry> concept_vanishing_report(const ConceptWeights& center, const ConceptWeights& offcenter,
                                                     const ConceptDictionary& dict,
                                                     const std::vector<std::string>& targets, double tau) {
  if (center.w.size() != dict.size() || offcenter.w.size() != dict.size()) {
    throw InvalidArgument("both weight vectors must come from the same dictionary");
  }
  std::vector<VanishingEntry> out;
  for (const auto& name : targets) {
    const int i = dict.index_of(name);
    if (i < 0) throw InvalidArgument("unknown concept '" + name + "'");
    VanishingEntry e{name, center.w[i], offcenter.w[i], false};
    e.vanished = e.center_weight > tau && e.offcenter_weight <= tau;
    out.push_back(std::move(e));
  }
  return out;
}

std::string decomposition_json(const ConceptWeights& weights, const ConceptDictionary& dict, int top_k) {
  nlohmann::ordered_json j;
  j["lambda"] = weights.lambda;
  j["objective"] = weights.objective;
  j["kkt_residual"] = weights.kkt_residual;
  j["certified"] = weights.certified;
  j["iterations"] = weights.iterations;
  j["top_concepts"] = nlohmann::ordered_json::array();
  for (const auto& rc : top_concepts(weights, dict, top_k)) {
    j["top_concepts"].push_back({{"concept", rc.name}, {"weight", rc.weight}});
  }
  return j.dump(2) + "\n";
}

std::string decomposition_csv(const ConceptWeights& weights, const ConceptDictionary& dict) {
  std::ostringstream os;
  os.precision(9);
  os << "concept,weight\n";
  for (const auto& rc : top_concepts(weights, dict, static_cast<int>(std::max<std::size_t>(dict.size(), 1)))) {
    os << rc.name << ',' << rc.weight << '\n';
  }
  return os.str();
}

std::string vanishing_json(const std::vector<VanishingEntry>& report, double tau) {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["concepts"] = nlohmann::ordered_json::array();
  for (const auto& e : report) {
    j["concepts"].push_back({{"concept", e.concept_name},
                             {"center_weight", e.center_weight},
                             {"offcenter_weight", e.offcenter_weight},
                             {"vanished", e.vanished}});
  }
  return j.dump(2) + "\n";
}

std::string vanishing_csv(const std::vector<VanishingEntry>& report) {
  std::ostringstream os;
  os.precision(9);
  os << "concept,center_weight,offcenter_weight,vanished\n";
  for (const auto& e : report) {
    os << e.concept_name << ',' << e.center_weight << ',' << e.offcenter_weight << ','
       << (e.vanished ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace centerlens::decomp
