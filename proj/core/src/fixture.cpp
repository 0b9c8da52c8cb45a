// SPDX-License-Identifier: Apache-2.0
#include "centerlens/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "centerlens/error.hpp"
#include "centerlens/rng.hpp"

namespace centerlens::fixture {

namespace fs = std::filesystem;

namespace {

// Residual-stream layout. Every token is x = [u, -u] with u in R^16, so each
// token has zero mean over its 32 channels and LayerNorm reduces to
// x * sqrt(d) / ||x||. Positional parts are sized so ||u|| == kNorm for every
// blank token.
constexpr int kHalf = 16;
constexpr int kDim = 2 * kHalf;
constexpr int kHeads = 2;
constexpr int kHeadDim = kDim / kHeads;
constexpr int kCentrality = 12;  // u index read by the keys
constexpr int kFiller = 13;      // pads ||u|| up to kNorm
constexpr int kQuery = 14;       // u index read by the queries ([CLS] only)
constexpr double kNorm = 8.0;
constexpr double kQueryValue = 4.0;
constexpr double kQkGain = 4.0;  // wq == wk == kQkGain

const char* const kClassNames[] = {"airplane", "automobile", "bird", "cat", "deer",
                                   "dog",      "frog",       "horse", "ship", "truck"};
constexpr int kNumClasses = 10;

struct Quadrants {
  std::array<std::array<float, 3>, 4> rgb;  // TL, TR, BL, BR
};

std::array<double, kFeatureDims> features_of(const Quadrants& q) {
  std::array<double, kFeatureDims> f{};
  for (int i = 0; i < 4; ++i) {
    f[2 * i] = static_cast<double>(q.rgb[i][0]) - q.rgb[i][1];
    f[2 * i + 1] = static_cast<double>(q.rgb[i][1]) - q.rgb[i][2];
  }
  return f;
}

double cos_sim(const std::array<double, kFeatureDims>& a, const std::array<double, kFeatureDims>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < kFeatureDims; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

Image render(const Quadrants& q, int side) {
  Image img(side, side);
  const int h = side / 2;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int quad = (y < h ? 0 : 2) + (x < h ? 0 : 1);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = q.rgb[quad][c];
    }
  return img;
}

// Rejection-samples class colors whose chroma features are well separated.
std::vector<Quadrants> sample_prototypes(Rng& rng) {
  std::vector<Quadrants> protos;
  std::vector<std::array<double, kFeatureDims>> feats;
  while (static_cast<int>(protos.size()) < kNumClasses) {
    Quadrants q;
    for (auto& quad : q.rgb)
      for (auto& ch : quad) ch = static_cast<float>(std::round(rng.uniform(0.1, 0.9) * 255.0) / 255.0);
    const auto f = features_of(q);
    double norm = 0;
    for (double v : f) norm += v * v;
    if (std::sqrt(norm) < 0.6) continue;
    const bool separated = std::all_of(feats.begin(), feats.end(), [&](const auto& g) { return cos_sim(f, g) < 0.4; });
    if (!separated) continue;
    protos.push_back(q);
    feats.push_back(f);
  }
  return protos;
}

vit::Linear zero_linear(int in, int out) { return {vit::Matrix(in, out), std::vector<float>(static_cast<std::size_t>(out), 0.0f)}; }

vit::Norm unit_norm() { return {std::vector<float>(kDim, 1.0f), std::vector<float>(kDim, 0.0f)}; }

// Writes u into both halves of a residual row.
void set_mirrored(std::span<float> row, int i, double v) {
  row[i] = static_cast<float>(v);
  row[i + kHalf] = static_cast<float>(-v);
}

}  // namespace

void FixtureConfig::validate() const {
  if (patch_px < 2 || patch_px % 2 != 0) throw InvalidArgument("fixture patch_px must be even and >= 2");
  if (k < 5 || k % 2 == 0) throw InvalidArgument("fixture grid side must be odd and >= 5");
  if (!(cls_self_mass > 0.0 && cls_self_mass < 1.0)) throw InvalidArgument("cls_self_mass must lie in (0,1)");
  if (!(center_share > 0.0 && center_share < 1.0)) throw InvalidArgument("center_share must lie in (0,1)");
  if (!(junk >= 0.0 && junk < 1.0)) throw InvalidArgument("junk must lie in [0,1)");
  if (images_per_class <= 0) throw InvalidArgument("images_per_class must be positive");
  if (!(jitter >= 0.0 && jitter < 0.1)) throw InvalidArgument("jitter must lie in [0,0.1)");
}

Fixture build_fixture(const FixtureConfig& config) {
  config.validate();
  const int P = config.patch_px;
  const int N = config.k * config.k;
  const int center_token = 1 + (config.k / 2) * config.k + config.k / 2;

  // Target [CLS] logits: 0 on ordinary patches, t_center on the center patch,
  // t_self on itself.
  const double others = N - 1;
  const double e_center = config.center_share / (1.0 - config.center_share) * others;
  const double t_center = std::log(e_center);
  const double t_self = std::log(config.cls_self_mass / (1.0 - config.cls_self_mass) * (e_center + others));

  // LN(x)_i = u_i * kappa for tokens with ||u|| == kNorm.
  const double kappa = std::sqrt(kDim / 2.0) / kNorm;
  // logit = (kQkGain kappa Q)(kQkGain kappa m) / sqrt(head_dim)  =>  m = t / gain
  const double gain = kQkGain * kQkGain * kappa * kappa * kQueryValue / std::sqrt(static_cast<double>(kHeadDim));
  const double m_center = t_center / gain;
  const double m_self = t_self / gain;

  Rng rng(config.seed);
  const auto protos = sample_prototypes(rng);

  // [CLS] content: a small push toward class 0 plus an axis no class uses.
  const auto f0 = features_of(protos[0]);
  double f0_norm = 0;
  for (double v : f0) f0_norm += v * v;
  f0_norm = std::sqrt(f0_norm);

  vit::WeightBundle w;
  w.num_heads = kHeads;
  w.patch_size = P;
  w.preproc.size = config.k * P;

  // Patch embedding: per-quadrant mean of (R - G) and (G - B).
  w.patch_embed = zero_linear(P * P * 3, kDim);
  const int half = P / 2;
  const float inv_area = 1.0f / static_cast<float>(half * half);
  for (int y = 0; y < P; ++y)
    for (int x = 0; x < P; ++x) {
      const int quad = (y < half ? 0 : 2) + (x < half ? 0 : 1);
      const int base = (y * P + x) * 3;
      auto add = [&](int row, int feature, float v) {
        w.patch_embed.weight.at(row, feature) += v;
        w.patch_embed.weight.at(row, feature + kHalf) -= v;
      };
      add(base + 0, 2 * quad, inv_area);
      add(base + 1, 2 * quad, -inv_area);
      add(base + 1, 2 * quad + 1, inv_area);
      add(base + 2, 2 * quad + 1, -inv_area);
    }

  w.cls_token.assign(kDim, 0.0f);
  double cls_content = 0.0;
  for (int i = 0; i < kFeatureDims; ++i) {
    const double v = config.junk * f0[i] / f0_norm;
    set_mirrored(w.cls_token, i, v);
    cls_content += v * v;
  }
  set_mirrored(w.cls_token, kJunkDim, config.junk);
  cls_content += config.junk * config.junk;
  set_mirrored(w.cls_token, kQuery, kQueryValue);

  w.pos_embed = vit::Matrix(N + 1, kDim);
  const double cls_fill2 = kNorm * kNorm - m_self * m_self - kQueryValue * kQueryValue - cls_content;
  if (cls_fill2 < 0) throw InvalidArgument("fixture attention targets exceed the token norm budget");
  set_mirrored(w.pos_embed.row(0), kCentrality, m_self);
  set_mirrored(w.pos_embed.row(0), kFiller, std::sqrt(cls_fill2));
  for (int t = 1; t <= N; ++t) {
    const double m = t == center_token ? m_center : 0.0;
    set_mirrored(w.pos_embed.row(t), kCentrality, m);
    set_mirrored(w.pos_embed.row(t), kFiller, std::sqrt(kNorm * kNorm - m * m));
  }

  vit::Layer L;
  L.norm1 = unit_norm();
  L.norm2 = unit_norm();
  L.q = zero_linear(kDim, kDim);
  L.k = zero_linear(kDim, kDim);
  L.v = zero_linear(kDim, kDim);
  L.o = zero_linear(kDim, kDim);
  for (int h = 0; h < kHeads; ++h) {
    const int slot = h * kHeadDim + kHeadDim - 1;
    L.q.weight.at(kQuery, slot) = static_cast<float>(kQkGain);
    L.k.weight.at(kCentrality, slot) = static_cast<float>(kQkGain);
  }
  // Values copy content: head 0 carries features 0..3 and the junk axis,
  // head 1 features 4..7. v = u / kappa so the mixed output is in u units.
  const float vgain = static_cast<float>(1.0 / kappa);
  auto route = [&](int u_index, int head, int slot) {
    L.v.weight.at(u_index, head * kHeadDim + slot) = vgain;
    L.o.weight.at(head * kHeadDim + slot, u_index) = 1.0f;
    L.o.weight.at(head * kHeadDim + slot, u_index + kHalf) = -1.0f;
  };
  for (int i = 0; i < 4; ++i) route(i, 0, i);
  route(kJunkDim, 0, 4);
  for (int i = 4; i < 8; ++i) route(i, 1, i - 4);
  L.fc1 = zero_linear(kDim, 4 * kDim);
  L.fc2 = zero_linear(4 * kDim, kDim);
  w.layers.push_back(std::move(L));

  w.final_norm = unit_norm();
  w.proj = vit::Matrix(kDim, kOutDim);
  for (int i = 0; i < kOutDim; ++i) w.proj.at(i, i) = 1.0f;
  w.validate();

  Fixture fx;
  fx.config = config;
  fx.weights = std::move(w);

  // Class embeddings: each prototype resized to one patch, embedded by the
  // patch projection, and read out through the output projection.
  vit::Matrix class_rows(kNumClasses, kOutDim);
  std::vector<std::string> names;
  for (int c = 0; c < kNumClasses; ++c) {
    names.emplace_back(kClassNames[c]);
    const Image proto = render(protos[c], 4 * P);
    fx.prototypes.emplace_back(kClassNames[c], proto);
    const vit::Matrix patch = vit::patchify(resize_bilinear(proto, P, P), P);
    for (int j = 0; j < kOutDim; ++j) {
      double s = fx.weights.patch_embed.bias[j];
      for (int i = 0; i < patch.cols; ++i) s += static_cast<double>(patch.at(0, i)) * fx.weights.patch_embed.weight.at(i, j);
      // proj is the identity on the first kOutDim channels.
      class_rows.at(c, j) = static_cast<float>(s);
    }
  }
  fx.classes = bench::ClassSet::make(names, class_rows);

  // Concepts: one per class, one per chroma axis, and the [CLS]-only axis.
  std::vector<std::string> concept_names = names;
  std::vector<float> concept_rows(fx.classes.embeddings.data.begin(), fx.classes.embeddings.data.end());
  const char* const quads[] = {"top-left", "top-right", "bottom-left", "bottom-right"};
  for (int i = 0; i < kFeatureDims; ++i) {
    concept_names.push_back(std::string(i % 2 == 0 ? "red-green " : "green-blue ") + quads[i / 2]);
    for (int j = 0; j < kOutDim; ++j) concept_rows.push_back(j == i ? 1.0f : 0.0f);
  }
  concept_names.emplace_back("texture");
  for (int j = 0; j < kOutDim; ++j) concept_rows.push_back(j == kJunkDim ? 1.0f : 0.0f);
  fx.concepts = decomp::ConceptDictionary(std::move(concept_names), std::move(concept_rows), kOutDim);
  return fx;
}

std::vector<grid::SourceImage> fixture_sources(const Fixture& fx) {
  std::vector<grid::SourceImage> out;
  Rng rng(derive_seed(fx.config.seed, 0x5eed));
  for (const auto& [name, proto] : fx.prototypes) {
    for (int i = 0; i < fx.config.images_per_class; ++i) {
      Image img = proto;
      const int h = img.height() / 2;
      // One jitter per quadrant and channel keeps quadrants uniform.
      std::array<std::array<float, 3>, 4> delta;
      for (auto& quad : delta)
        for (auto& ch : quad) ch = static_cast<float>(rng.uniform(-fx.config.jitter, fx.config.jitter));
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
          const int quad = (y < h ? 0 : 2) + (x < h ? 0 : 1);
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(img.at(y, x, c) + delta[quad][c], 0.0f, 1.0f);
        }
      out.push_back({std::move(img), name, "fixture"});
    }
  }
  return out;
}

void write_fixture(const Fixture& fx, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  tensorio::write_bundle_file(fx.weights.to_bundle(), out_dir / "weights.cblt");
  bench::save_classes(fx.classes, out_dir / "classes.cblt");
  decomp::save_dictionary(fx.concepts, out_dir / "concepts.cblt");
  const auto sources = fixture_sources(fx);
  std::map<std::string, int> counters;
  for (const auto& s : sources) {
    const fs::path dir = out_dir / "sources" / s.class_label;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    char file[96];
    std::snprintf(file, sizeof file, "%s_%03d.png", s.class_label.c_str(), counters[s.class_label]++);
    write_png(s.image, dir / file);
  }
}

}  // namespace centerlens::fixture
