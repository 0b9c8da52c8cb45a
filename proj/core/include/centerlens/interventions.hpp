// SPDX-License-Identifier: Apache-2.0
//
// Test-time mitigations: [CLS] attention redistribution, mean-pool
// diagnostic embedding, and visual-prompt overlays from detection boxes.
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "centerlens/encoder.hpp"
#include "centerlens/error.hpp"
#include "centerlens/image.hpp"

namespace centerlens::intervene {

/// The [CLS] row put essentially all of its mass on itself.
class DegenerateRowError : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr double kDegenerateMass = 1e-8;

struct RedistributeOptions {
  /// Spread mass uniformly over patches instead of throwing on a degenerate row.
  bool uniform_fallback = false;
};

/// out[0] = 0, out[j] = row[j] / sum_{k>=1} row[k].
std::vector<float> redistribute_cls_row(std::span<const float> row, const RedistributeOptions& options = {});

/// In-place variant used inside the forward pass.
void redistribute_cls_row_inplace(std::span<float> row, const RedistributeOptions& options = {});

struct RedistributionConfig {
  RedistributeOptions row;
  /// Number of trailing layers to edit; 1 means the final layer only.
  int layers_from_end = 1;
};

/// Encoder forward where each head's [CLS] row in the edited layers is
/// redistributed before value mixing. Degenerate rows raise
/// DegenerateRowError naming layer and head.
vit::EmbeddingVector forward_with_redistribution(const Image& image, const vit::WeightBundle& weights,
                                                 const RedistributionConfig& config = {});

/// Attention editor performing the redistribution; exposed for batch use.
vit::AttentionEditor redistribution_editor(const vit::WeightBundle& weights, const RedistributionConfig& config = {});

/// proj(final_norm(mean of final patch tokens)).
vit::EmbeddingVector mean_pool_embedding(const Image& image, const vit::WeightBundle& weights);

// ---------------------------------------------------------------------------
// Visual prompting

enum class PromptShape { kBox, kCircle };

struct PromptStyle {
  PromptShape shape = PromptShape::kBox;
  std::array<float, 3> color{1.0f, 0.0f, 0.0f};
  int stroke_px = 2;
  int pad_px = 2;

  void validate() const;
};

/// Pixel box [x0, x1) x [y0, y1).
struct DetectionBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::string label;
  double score = 1.0;
};

struct ImageDetections {
  std::string image_id;
  std::vector<DetectionBox> boxes;
};

/// Clamps to [0, width] x [0, height]; throws if the box becomes empty.
DetectionBox clamp_box(const DetectionBox& box, int width, int height);

/// Draws a stroke band of `stroke_px` around each box, separated from it by
/// `pad_px`. Boxes: axis-aligned rectangle band. Circles: elliptical band
/// whose inner boundary is inscribed in the padded box. Changed pixels take
/// exactly style.color.
Image overlay_prompts(const Image& image, std::span<const DetectionBox> boxes, const PromptStyle& style = {});

/// True when pixel (x, y) lies in the stroke band drawn for `box`.
bool in_stroke(const DetectionBox& box, const PromptStyle& style, int x, int y);

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// JSON: [{"image_id": ..., "boxes": [{"x0","y0","x1","y1","label","score"}]}].
/// Rejects inverted/empty boxes and scores outside [0,1], naming the record;
/// clamps to `size` when given.
std::vector<ImageDetections> parse_detections(const std::string& json_text,
                                              std::optional<ImageSize> size = std::nullopt);
std::vector<ImageDetections> load_detections(const std::filesystem::path& path,
                                             std::optional<ImageSize> size = std::nullopt);

/// Tight box around a GRID object block.
DetectionBox grid_object_box(int anchor_row, int anchor_col, int s, int patch_px);

}  // namespace centerlens::intervene
