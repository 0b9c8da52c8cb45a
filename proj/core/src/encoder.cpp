// SPDX-License-Identifier: Apache-2.0
#include "centerlens/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "centerlens/error.hpp"
#include "centerlens/parallel.hpp"

namespace centerlens::vit {

using tensorio::Tensor;
using tensorio::TensorBundle;

namespace {

// ---------------------------------------------------------------------------
// kernels

// out = x W + b, with double accumulation per output row.
Matrix linear(const Matrix& x, const Linear& lin) {
  const int in = lin.weight.rows;
  const int out_dim = lin.weight.cols;
  Matrix out(x.rows, out_dim);
  std::vector<double> acc(static_cast<std::size_t>(out_dim));
  for (int r = 0; r < x.rows; ++r) {
    std::copy(lin.bias.begin(), lin.bias.end(), acc.begin());
    const auto xr = x.row(r);
    for (int i = 0; i < in; ++i) {
      const double xv = xr[i];
      if (xv == 0.0) continue;
      const auto wr = lin.weight.row(i);
      for (int j = 0; j < out_dim; ++j) acc[j] += xv * wr[j];
    }
    auto orow = out.row(r);
    for (int j = 0; j < out_dim; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  return out;
}

void layer_norm_row(std::span<const float> in, std::span<float> out, const Norm& n, float eps) {
  const std::size_t d = in.size();
  double mean = 0.0;
  for (float v : in) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (float v : in) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = static_cast<float>((in[i] - mean) * inv * n.weight[i] + n.bias[i]);
  }
}

Matrix layer_norm(const Matrix& x, const Norm& n, float eps) {
  Matrix out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) layer_norm_row(x.row(r), out.row(r), n, eps);
  return out;
}

float activate(float x, Activation a) {
  if (a == Activation::kQuickGelu) return static_cast<float>(x / (1.0 + std::exp(-1.702 * x)));
  return static_cast<float>(0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)));
}

// Max-subtracted softmax in place.
void softmax_row(std::span<float> row) {
  const float mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (float& v : row) v = static_cast<float>(v / sum);
}

void attention_block(Matrix& x, const Layer& layer, int layer_index, const WeightBundle& w,
                     const ForwardOptions& options, AttentionTensor* capture) {
  const int T = x.rows;
  const int d = w.dim();
  const int H = w.num_heads;
  const int dh = w.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix h = layer_norm(x, layer.norm1, w.ln_eps);
  const Matrix q = linear(h, layer.q);
  const Matrix k = linear(h, layer.k);
  const Matrix v = linear(h, layer.v);

  Matrix mixed(T, d);
  std::vector<float> probs(static_cast<std::size_t>(T) * T);
  for (int head = 0; head < H; ++head) {
    const int off = head * dh;
    for (int i = 0; i < T; ++i) {
      std::span<float> row(probs.data() + static_cast<std::size_t>(i) * T, static_cast<std::size_t>(T));
      for (int j = 0; j < T; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += static_cast<double>(q.at(i, off + c)) * k.at(j, off + c);
        row[j] = static_cast<float>(s * scale);
      }
      softmax_row(row);
    }
    if (options.edit) options.edit(layer_index, head, probs, T);
    if (capture) {
      auto dst = capture->matrix(layer_index, head);
      std::copy(probs.begin(), probs.end(), dst.begin());
    }
    for (int i = 0; i < T; ++i) {
      for (int c = 0; c < dh; ++c) {
        double s = 0.0;
        for (int j = 0; j < T; ++j) s += static_cast<double>(probs[static_cast<std::size_t>(i) * T + j]) * v.at(j, off + c);
        mixed.at(i, off + c) = static_cast<float>(s);
      }
    }
  }
  const Matrix out = linear(mixed, layer.o);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += out.data[i];
}

void mlp_block(Matrix& x, const Layer& layer, const WeightBundle& w) {
  Matrix hidden = linear(layer_norm(x, layer.norm2, w.ln_eps), layer.fc1);
  for (float& v : hidden.data) v = activate(v, w.activation);
  const Matrix out = linear(hidden, layer.fc2);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += out.data[i];
}

// ---------------------------------------------------------------------------
// bundle conversion

std::vector<float> vec(const TensorBundle& b, const std::string& name, int expect) {
  const Tensor& t = b.get(name);
  if (t.shape.size() != 1 || (expect >= 0 && t.shape[0] != expect)) {
    throw DataError("tensor '" + name + "' must have shape [" + std::to_string(expect) + "]");
  }
  return t.data;
}

Matrix mat(const TensorBundle& b, const std::string& name, int rows, int cols) {
  const Tensor& t = b.get(name);
  if (t.shape.size() != 2 || (rows >= 0 && t.shape[0] != rows) || (cols >= 0 && t.shape[1] != cols)) {
    throw DataError("tensor '" + name + "' must have shape [" + (rows >= 0 ? std::to_string(rows) : "?") +
                    ", " + (cols >= 0 ? std::to_string(cols) : "?") + "]");
  }
  Matrix m(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  m.data = t.data;
  return m;
}

float scalar(const TensorBundle& b, const std::string& name, float fallback) {
  const Tensor* t = b.find(name);
  if (!t) return fallback;
  if (t->data.size() != 1) throw DataError("tensor '" + name + "' must hold one value");
  return t->data[0];
}

Norm norm(const TensorBundle& b, const std::string& prefix, int d) {
  return {vec(b, prefix + ".weight", d), vec(b, prefix + ".bias", d)};
}

Linear lin(const TensorBundle& b, const std::string& w, const std::string& bias, int in, int out) {
  Linear l{mat(b, w, in, out), {}};
  l.bias = vec(b, bias, l.weight.cols);
  return l;
}

void put(TensorBundle& b, const std::string& name, const std::vector<float>& v) {
  b.add(name, {static_cast<std::int64_t>(v.size())}, v);
}

void put(TensorBundle& b, const std::string& name, const Matrix& m) { b.add(name, {m.rows, m.cols}, m.data); }

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

void check_norm(const Norm& n, int d, const std::string& name) {
  if (static_cast<int>(n.weight.size()) != d || static_cast<int>(n.bias.size()) != d) {
    throw DataError("tensor '" + name + "' must have " + std::to_string(d) + " elements");
  }
}

void check_linear(const Linear& l, int in, int out, const std::string& name) {
  if (l.weight.rows != in || l.weight.cols != out) {
    throw DataError("tensor '" + name + "' must have shape [" + std::to_string(in) + ", " +
                    std::to_string(out) + "]");
  }
  if (static_cast<int>(l.bias.size()) != out) throw DataError("bias of '" + name + "' has the wrong length");
}

}  // namespace

int WeightBundle::grid_side() const {
  const int n = num_patches();
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(std::max(n, 0)))));
  return side * side == n ? side : -1;
}

void WeightBundle::validate() const {
  const int d = dim();
  if (d <= 0) throw DataError("tensor 'pos_embed' must have a positive width");
  if (num_heads <= 0 || d % num_heads != 0) {
    throw DataError("tensor 'config.num_heads': width " + std::to_string(d) + " not divisible by " +
                    std::to_string(num_heads) + " heads");
  }
  if (patch_size <= 0) throw DataError("tensor 'patch_embed.weight': patch size must be positive");
  if (grid_side() <= 0) throw DataError("tensor 'pos_embed': patch count is not a positive square");
  check_linear(patch_embed, patch_size * patch_size * 3, d, "patch_embed.weight");
  if (static_cast<int>(cls_token.size()) != d) throw DataError("tensor 'cls_token' must have " + std::to_string(d) + " elements");
  if (pre_norm) check_norm(*pre_norm, d, "pre_norm.weight");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto p = layer_prefix(l);
    const Layer& L = layers[l];
    check_norm(L.norm1, d, p + "norm1.weight");
    check_linear(L.q, d, d, p + "attn.wq");
    check_linear(L.k, d, d, p + "attn.wk");
    check_linear(L.v, d, d, p + "attn.wv");
    check_linear(L.o, d, d, p + "attn.wo");
    check_norm(L.norm2, d, p + "norm2.weight");
    check_linear(L.fc1, d, L.fc1.weight.cols, p + "mlp.w1");
    check_linear(L.fc2, L.fc1.weight.cols, d, p + "mlp.w2");
  }
  check_norm(final_norm, d, "final_norm.weight");
  if (proj.rows != d || proj.cols <= 0) throw DataError("tensor 'proj' must have shape [" + std::to_string(d) + ", d_out]");
  if (preproc.size != image_side()) {
    throw DataError("tensor 'preproc.size': " + std::to_string(preproc.size) + " does not match the native side " +
                    std::to_string(image_side()));
  }
  for (float s : preproc.std) {
    if (!(s > 0.0f)) throw DataError("tensor 'preproc.std' must be positive");
  }
}

WeightBundle WeightBundle::from_bundle(const TensorBundle& b) {
  WeightBundle w;
  w.num_heads = static_cast<int>(std::lround(scalar(b, "config.num_heads", 1.0f)));
  w.activation = static_cast<int>(std::lround(scalar(b, "config.activation", 0.0f))) == 1 ? Activation::kQuickGelu
                                                                                           : Activation::kGelu;
  w.ln_eps = scalar(b, "config.ln_eps", 1e-5f);

  w.pos_embed = mat(b, "pos_embed", -1, -1);
  const int d = w.pos_embed.cols;
  w.patch_embed = lin(b, "patch_embed.weight", "patch_embed.bias", -1, d);
  const int rows = w.patch_embed.weight.rows;
  w.patch_size = static_cast<int>(std::lround(std::sqrt(rows / 3.0)));
  if (rows % 3 != 0 || w.patch_size * w.patch_size * 3 != rows) {
    throw DataError("tensor 'patch_embed.weight' rows must equal P*P*3");
  }
  w.cls_token = vec(b, "cls_token", d);
  if (b.contains("pre_norm.weight")) w.pre_norm = norm(b, "pre_norm", d);

  for (std::size_t l = 0;; ++l) {
    const auto p = layer_prefix(l);
    if (!b.contains(p + "attn.wq")) break;
    Layer L;
    L.norm1 = norm(b, p + "norm1", d);
    L.q = lin(b, p + "attn.wq", p + "attn.bq", d, d);
    L.k = lin(b, p + "attn.wk", p + "attn.bk", d, d);
    L.v = lin(b, p + "attn.wv", p + "attn.bv", d, d);
    L.o = lin(b, p + "attn.wo", p + "attn.bo", d, d);
    L.norm2 = norm(b, p + "norm2", d);
    L.fc1 = lin(b, p + "mlp.w1", p + "mlp.b1", d, -1);
    L.fc2 = lin(b, p + "mlp.w2", p + "mlp.b2", L.fc1.weight.cols, d);
    w.layers.push_back(std::move(L));
  }
  w.final_norm = norm(b, "final_norm", d);
  w.proj = mat(b, "proj", d, -1);

  const int side = w.grid_side() * w.patch_size;
  w.preproc.size = static_cast<int>(std::lround(scalar(b, "preproc.size", static_cast<float>(side))));
  if (b.contains("preproc.mean")) {
    const auto m = vec(b, "preproc.mean", 3);
    std::copy(m.begin(), m.end(), w.preproc.mean.begin());
  }
  if (b.contains("preproc.std")) {
    const auto s = vec(b, "preproc.std", 3);
    std::copy(s.begin(), s.end(), w.preproc.std.begin());
  }
  w.validate();
  return w;
}

TensorBundle WeightBundle::to_bundle() const {
  validate();
  TensorBundle b;
  b.add("config.num_heads", {1}, {static_cast<float>(num_heads)});
  b.add("config.activation", {1}, {static_cast<float>(static_cast<int>(activation))});
  b.add("config.ln_eps", {1}, {ln_eps});
  b.add("preproc.size", {1}, {static_cast<float>(preproc.size)});
  b.add("preproc.mean", {3}, {preproc.mean.begin(), preproc.mean.end()});
  b.add("preproc.std", {3}, {preproc.std.begin(), preproc.std.end()});
  put(b, "patch_embed.weight", patch_embed.weight);
  put(b, "patch_embed.bias", patch_embed.bias);
  put(b, "cls_token", cls_token);
  put(b, "pos_embed", pos_embed);
  if (pre_norm) {
    put(b, "pre_norm.weight", pre_norm->weight);
    put(b, "pre_norm.bias", pre_norm->bias);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto p = layer_prefix(l);
    const Layer& L = layers[l];
    put(b, p + "norm1.weight", L.norm1.weight);
    put(b, p + "norm1.bias", L.norm1.bias);
    put(b, p + "attn.wq", L.q.weight);
    put(b, p + "attn.bq", L.q.bias);
    put(b, p + "attn.wk", L.k.weight);
    put(b, p + "attn.bk", L.k.bias);
    put(b, p + "attn.wv", L.v.weight);
    put(b, p + "attn.bv", L.v.bias);
    put(b, p + "attn.wo", L.o.weight);
    put(b, p + "attn.bo", L.o.bias);
    put(b, p + "norm2.weight", L.norm2.weight);
    put(b, p + "norm2.bias", L.norm2.bias);
    put(b, p + "mlp.w1", L.fc1.weight);
    put(b, p + "mlp.b1", L.fc1.bias);
    put(b, p + "mlp.w2", L.fc2.weight);
    put(b, p + "mlp.b2", L.fc2.bias);
  }
  put(b, "final_norm.weight", final_norm.weight);
  put(b, "final_norm.bias", final_norm.bias);
  put(b, "proj", proj);
  return b;
}

std::span<const float> AttentionTensor::matrix(int layer, int head) const {
  const std::size_t n = static_cast<std::size_t>(tokens) * tokens;
  return {data.data() + (static_cast<std::size_t>(layer) * heads + head) * n, n};
}

std::span<float> AttentionTensor::matrix(int layer, int head) {
  const std::size_t n = static_cast<std::size_t>(tokens) * tokens;
  return {data.data() + (static_cast<std::size_t>(layer) * heads + head) * n, n};
}

EmbeddingVector EmbeddingVector::unit() const {
  double sq = 0.0;
  for (float v : values) sq += static_cast<double>(v) * v;
  EmbeddingVector out{values, true};
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : out.values) v = static_cast<float>(v * inv);
  }
  return out;
}

Matrix patchify(const Image& image, int P) {
  if (P <= 0) throw InvalidArgument("patch side must be positive");
  if (image.height() % P != 0 || image.width() % P != 0) {
    throw InvalidArgument("image side " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                          " is not divisible by patch side " + std::to_string(P));
  }
  const int gh = image.height() / P;
  const int gw = image.width() / P;
  Matrix tokens(gh * gw, P * P * Image::kChannels);
  for (int pr = 0; pr < gh; ++pr) {
    for (int pc = 0; pc < gw; ++pc) {
      auto row = tokens.row(pr * gw + pc);
      std::size_t i = 0;
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x)
          for (int c = 0; c < Image::kChannels; ++c) row[i++] = image.at(pr * P + y, pc * P + x, c);
    }
  }
  return tokens;
}

Image unpatchify(const Matrix& tokens, int P, int image_side) {
  const int g = image_side / P;
  if (P <= 0 || g * P != image_side || tokens.rows != g * g || tokens.cols != P * P * Image::kChannels) {
    throw InvalidArgument("token matrix does not match the requested image geometry");
  }
  Image img(image_side, image_side);
  for (int t = 0; t < tokens.rows; ++t) {
    const int pr = t / g;
    const int pc = t % g;
    auto row = tokens.row(t);
    std::size_t i = 0;
    for (int y = 0; y < P; ++y)
      for (int x = 0; x < P; ++x)
        for (int c = 0; c < Image::kChannels; ++c) img.at(pr * P + y, pc * P + x, c) = row[i++];
  }
  return img;
}

Image preprocess(const Image& image, const WeightBundle& w) {
  if (image.empty()) throw InvalidArgument("image is empty");
  Image out = resize_bilinear(center_crop_square(image), w.preproc.size, w.preproc.size);
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::size_t c = i % Image::kChannels;
    px[i] = (px[i] - w.preproc.mean[c]) / w.preproc.std[c];
  }
  return out;
}

ForwardResult forward_preprocessed(const Image& image, const WeightBundle& w, const ForwardOptions& options) {
  if (image.height() != w.image_side() || image.width() != w.image_side()) {
    throw DataError("image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                    " but tensor 'pos_embed' expects side " + std::to_string(w.image_side()));
  }
  const int d = w.dim();
  const int N = w.num_patches();
  const int T = N + 1;

  const Matrix patches = linear(patchify(image, w.patch_size), w.patch_embed);
  Matrix x(T, d);
  for (int c = 0; c < d; ++c) x.at(0, c) = w.cls_token[c] + w.pos_embed.at(0, c);
  for (int t = 1; t < T; ++t)
    for (int c = 0; c < d; ++c) x.at(t, c) = patches.at(t - 1, c) + w.pos_embed.at(t, c);
  if (w.pre_norm) x = layer_norm(x, *w.pre_norm, w.ln_eps);

  ForwardResult result;
  if (options.capture_attention) {
    AttentionTensor a;
    a.layers = static_cast<int>(w.layers.size());
    a.heads = w.num_heads;
    a.tokens = T;
    a.data.assign(static_cast<std::size_t>(a.layers) * a.heads * T * T, 0.0f);
    result.attention = std::move(a);
  }
  AttentionTensor* capture = result.attention ? &*result.attention : nullptr;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    attention_block(x, w.layers[l], static_cast<int>(l), w, options, capture);
    mlp_block(x, w.layers[l], w);
  }

  Matrix pooled(1, d);
  if (options.pooling == Pooling::kCls) {
    std::copy(x.row(0).begin(), x.row(0).end(), pooled.row(0).begin());
  } else {
    for (int c = 0; c < d; ++c) {
      double s = 0.0;
      for (int t = 1; t < T; ++t) s += x.at(t, c);
      pooled.at(0, c) = static_cast<float>(s / N);
    }
  }
  const Matrix normed = layer_norm(pooled, w.final_norm, w.ln_eps);
  const Matrix emb = linear(normed, Linear{w.proj, std::vector<float>(static_cast<std::size_t>(w.out_dim()), 0.0f)});
  result.embedding.values = emb.data;
  return result;
}

ForwardResult forward(const Image& image, const WeightBundle& w, const ForwardOptions& options) {
  return forward_preprocessed(preprocess(image, w), w, options);
}

std::vector<ForwardResult> forward_batch(std::span<const Image> images, const WeightBundle& w,
                                         const ForwardOptions& options, int jobs) {
  std::vector<ForwardResult> out(images.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) { out[i] = forward(images[i], w, options); });
  return out;
}

SpatialMap attention_map(const AttentionTensor& attn, int layer, int token, HeadSelect head) {
  const int N = attn.tokens - 1;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(std::max(N, 0)))));
  if (side * side != N || N <= 0) throw InvalidArgument("patch count " + std::to_string(N) + " is not a square");
  if (layer < 0 || layer >= attn.layers) throw InvalidArgument("layer index out of range");
  if (token < 0 || token > N) throw InvalidArgument("token index must lie in 0..N");
  if (head && (*head < 0 || *head >= attn.heads)) throw InvalidArgument("head index out of range");

  std::vector<double> acc(static_cast<std::size_t>(N), 0.0);
  const int h0 = head ? *head : 0;
  const int h1 = head ? *head + 1 : attn.heads;
  for (int h = h0; h < h1; ++h) {
    for (int j = 1; j <= N; ++j) acc[j - 1] += attn.at(layer, h, token, j);
  }
  const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
  SpatialMap map{side, std::vector<float>(static_cast<std::size_t>(N), 0.0f)};
  if (total > 0.0) {
    for (int j = 0; j < N; ++j) map.values[j] = static_cast<float>(acc[j] / total);
  }
  return map;
}

double center_mass(const SpatialMap& map, int radius) {
  if (radius < 0 || radius >= map.side) {
    throw InvalidArgument("radius must lie in [0, side) for a " + std::to_string(map.side) + "-cell map");
  }
  const double total = std::accumulate(map.values.begin(), map.values.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-5) throw InvalidArgument("attention map must sum to 1");
  // Cells whose doubled offset from the (possibly half-integer) center is
  // within 2r+1; for odd sides this is plain Chebyshev distance <= r.
  const int lim = 2 * radius + 1;
  double mass = 0.0;
  for (int r = 0; r < map.side; ++r) {
    if (std::abs(2 * r - (map.side - 1)) > lim) continue;
    for (int c = 0; c < map.side; ++c) {
      if (std::abs(2 * c - (map.side - 1)) <= lim) mass += map.at(r, c);
    }
  }
  return mass;
}

TensorBundle attention_to_bundle(const AttentionTensor& attn) {
  TensorBundle b;
  for (int l = 0; l < attn.layers; ++l) {
    for (int h = 0; h < attn.heads; ++h) {
      const auto m = attn.matrix(l, h);
      b.add("attn.layer" + std::to_string(l) + ".head" + std::to_string(h), {attn.tokens, attn.tokens},
            std::vector<float>(m.begin(), m.end()));
    }
  }
  return b;
}

}  // namespace centerlens::vit
