// SPDX-License-Identifier: Apache-2.0
#include "centerlens/interventions.hpp"

#include <algorithm>

namespace centerlens::intervene {

void redistribute_cls_row_inplace(std::span<float> row, const RedistributeOptions& options) {
  if (row.size() < 2) throw InvalidArgument("[CLS] row needs at least one patch entry");
  double patch_mass = 0.0;
  for (std::size_t j = 1; j < row.size(); ++j) patch_mass += row[j];
  row[0] = 0.0f;
  if (patch_mass < kDegenerateMass) {
    if (!options.uniform_fallback) {
      throw DegenerateRowError("degenerate [CLS] row: patch mass " + std::to_string(patch_mass) +
                               " below " + std::to_string(kDegenerateMass));
    }
    const float u = static_cast<float>(1.0 / static_cast<double>(row.size() - 1));
    std::fill(row.begin() + 1, row.end(), u);
    return;
  }
  const double inv = 1.0 / patch_mass;
  for (std::size_t j = 1; j < row.size(); ++j) row[j] = static_cast<float>(row[j] * inv);
}

std::vector<float> redistribute_cls_row(std::span<const float> row, const RedistributeOptions& options) {
  std::vector<float> out(row.begin(), row.end());
  redistribute_cls_row_inplace(out, options);
  return out;
}

vit::AttentionEditor redistribution_editor(const vit::WeightBundle& weights, const RedistributionConfig& config) {
  const int L = static_cast<int>(weights.layers.size());
  const int first = std::max(0, L - std::max(config.layers_from_end, 1));
  return [first, opts = config.row](int layer, int head, std::span<float> probs, int tokens) {
    if (layer < first) return;
    try {
      redistribute_cls_row_inplace(probs.first(static_cast<std::size_t>(tokens)), opts);
    } catch (const DegenerateRowError& e) {
      throw DegenerateRowError("layer " + std::to_string(layer) + ", head " + std::to_string(head) + ": " +
                               e.what());
    }
  };
}

vit::EmbeddingVector forward_with_redistribution(const Image& image, const vit::WeightBundle& weights,
                                                 const RedistributionConfig& config) {
  vit::ForwardOptions opts;
  opts.edit = redistribution_editor(weights, config);
  return vit::forward(image, weights, opts).embedding;
}

vit::EmbeddingVector mean_pool_embedding(const Image& image, const vit::WeightBundle& weights) {
  vit::ForwardOptions opts;
  opts.pooling = vit::Pooling::kMeanPatches;
  return vit::forward(image, weights, opts).embedding;
}

}  // namespace centerlens::intervene
