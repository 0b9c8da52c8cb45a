// SPDX-License-Identifier: Apache-2.0
//
// Hand-constructed center-biased encoder, its class embeddings, a matching
// concept dictionary, and class source images. The construction is
// documented in docs/fixture.md.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "centerlens/bench.hpp"
#include "centerlens/decomp.hpp"
#include "centerlens/encoder.hpp"
#include "centerlens/gridgen.hpp"

namespace centerlens::fixture {

struct FixtureConfig {
  int patch_px = 8;              // model patch side == GRID cell side
  int k = 7;                     // grid side; the model sees k x k patches
  double cls_self_mass = 0.95;   // final-layer [CLS] self-attention on a blank canvas
  double center_share = 0.5;     // share of the remaining mass on the center patch
  double junk = 0.0025;          // magnitude of the [CLS] token's own content
  int images_per_class = 10;     // source images written per class
  double jitter = 0.04;          // per-image color jitter of source images
  std::uint64_t seed = 7;

  void validate() const;
};

struct Fixture {
  FixtureConfig config;
  vit::WeightBundle weights;
  bench::ClassSet classes;
  decomp::ConceptDictionary concepts;
  std::vector<std::pair<std::string, Image>> prototypes;  // class name, prototype image
};

inline constexpr int kFeatureDims = 8;  // (R-G, G-B) per patch quadrant
inline constexpr int kJunkDim = 8;      // embedding axis only the [CLS] token writes
inline constexpr int kOutDim = 9;

Fixture build_fixture(const FixtureConfig& config = {});

/// `images_per_class` jittered copies of each prototype, source set "fixture".
std::vector<grid::SourceImage> fixture_sources(const Fixture& fixture);

/// Writes weights.cblt, classes.cblt, concepts.cblt (each with a names
/// sidecar where needed) and sources/<class>/<class>_NNN.png.
void write_fixture(const Fixture& fixture, const std::filesystem::path& out_dir);

}  // namespace centerlens::fixture
