// SPDX-License-Identifier: Apache-2.0
//
// Minimal pre-norm ViT with a [CLS] token:
//
//   tokens = [cls; patchify(img) W_pe + b_pe] + pos
//   (optional pre_norm)
//   per layer:  x += Attn(LN1(x));  x += MLP(LN2(x))
//   embedding = proj(final_norm(x[0]))
//
// Row-vector convention throughout: y = x W + b with W stored in x out.
// Tensor names are listed in docs/weights.md.
#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "centerlens/image.hpp"
#include "centerlens/tensorio.hpp"

namespace centerlens::vit {

/// Row-major f32 matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<float> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const float> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  bool operator==(const Matrix&) const = default;
};

struct Norm {
  std::vector<float> weight;
  std::vector<float> bias;
};

struct Linear {
  Matrix weight;  // in x out
  std::vector<float> bias;
};

struct Layer {
  Norm norm1;
  Linear q, k, v, o;
  Norm norm2;
  Linear fc1, fc2;
};

enum class Activation { kGelu = 0, kQuickGelu = 1 };

struct Preprocess {
  int size = 0;  // native square input side
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
};

/// All parameters of the encoder plus its preprocessing constants.
struct WeightBundle {
  int num_heads = 1;
  int patch_size = 0;
  Activation activation = Activation::kGelu;
  float ln_eps = 1e-5f;
  Preprocess preproc;

  Linear patch_embed;      // (P*P*3) x d
  std::vector<float> cls_token;
  Matrix pos_embed;        // (N+1) x d
  std::optional<Norm> pre_norm;
  std::vector<Layer> layers;
  Norm final_norm;
  Matrix proj;             // d x d_out

  int dim() const { return pos_embed.cols; }
  int out_dim() const { return proj.cols; }
  int num_patches() const { return pos_embed.rows - 1; }
  int num_tokens() const { return pos_embed.rows; }
  int grid_side() const;
  int image_side() const { return grid_side() * patch_size; }
  int head_dim() const { return dim() / num_heads; }

  /// Throws DataError naming the first inconsistent tensor.
  void validate() const;

  static WeightBundle from_bundle(const tensorio::TensorBundle& bundle);
  tensorio::TensorBundle to_bundle() const;
};

/// Per-layer, per-head (N+1) x (N+1) row-stochastic attention; token 0 is [CLS].
struct AttentionTensor {
  int layers = 0;
  int heads = 0;
  int tokens = 0;
  std::vector<float> data;

  std::span<const float> matrix(int layer, int head) const;
  std::span<float> matrix(int layer, int head);
  float at(int layer, int head, int i, int j) const {
    return matrix(layer, head)[static_cast<std::size_t>(i) * tokens + j];
  }
};

struct EmbeddingVector {
  std::vector<float> values;
  bool normalized = false;

  /// Unit l2 copy (zero vectors stay zero).
  EmbeddingVector unit() const;
};

enum class Pooling { kCls, kMeanPatches };

/// Called with each layer/head's post-softmax probabilities (tokens x tokens,
/// row-major) before they mix the values; may rewrite them in place.
using AttentionEditor = std::function<void(int layer, int head, std::span<float> probs, int tokens)>;

struct ForwardOptions {
  bool capture_attention = false;
  Pooling pooling = Pooling::kCls;
  AttentionEditor edit;
};

struct ForwardResult {
  EmbeddingVector embedding;                 // unnormalized projection output
  std::optional<AttentionTensor> attention;  // probabilities actually applied
};

/// Rows are the flattened (row-major, channel-last) patches in row-major
/// patch order.
Matrix patchify(const Image& image, int patch_side);
Image unpatchify(const Matrix& tokens, int patch_side, int image_side);

/// Center-crops to square, resizes to the native side, and normalizes with
/// the bundle's mean/std.
Image preprocess(const Image& image, const WeightBundle& weights);

/// Encodes an already-preprocessed native-size image.
ForwardResult forward_preprocessed(const Image& image, const WeightBundle& weights,
                                   const ForwardOptions& options = {});

ForwardResult forward(const Image& image, const WeightBundle& weights, const ForwardOptions& options = {});

/// forward() over many images on `jobs` threads; element i is bit-identical
/// to forward(images[i]).
std::vector<ForwardResult> forward_batch(std::span<const Image> images, const WeightBundle& weights,
                                         const ForwardOptions& options = {}, int jobs = 1);

struct SpatialMap {
  int side = 0;
  std::vector<float> values;  // row-major side x side

  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * side + c]; }
};

/// Head reduction for attention_map: nullopt averages all heads.
using HeadSelect = std::optional<int>;

/// Row `token` of the chosen layer restricted to patch columns, reshaped to
/// the patch grid and renormalized to sum 1.
SpatialMap attention_map(const AttentionTensor& attn, int layer, int token, HeadSelect head = std::nullopt);

/// Mass within Chebyshev distance `radius` of the central cell.
double center_mass(const SpatialMap& map, int radius);

/// `attn.layer{l}.head{h}` entries.
tensorio::TensorBundle attention_to_bundle(const AttentionTensor& attn);

}  // namespace centerlens::vit
