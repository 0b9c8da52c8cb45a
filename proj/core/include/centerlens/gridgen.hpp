// SPDX-License-Identifier: Apache-2.0
//
// GRID synthetic benchmark: a k x k cell canvas with one s x s object block
// either at the canvas center or touching the outer ring.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "centerlens/image.hpp"
#include "centerlens/rng.hpp"
#include "centerlens/tensorio.hpp"

namespace centerlens::grid {

using tensorio::ManifestEntry;
using tensorio::Placement;

enum class BackgroundKind { kSolid, kChecker, kValueNoise, kStripes, kExternal };

/// Procedural background recipe, or an external image file/directory.
/// Procedural kinds are achromatic (equal R, G, B).
struct Background {
  BackgroundKind kind = BackgroundKind::kValueNoise;
  float level = 0.5f;       // solid value; noise mean
  float low = 0.25f;        // checker / stripes
  float high = 0.75f;
  float amplitude = 0.15f;  // noise half-range around `level`
  int period_px = 0;        // checker / stripes / noise lattice; 0 means patch_px
  std::filesystem::path image;

  bool operator==(const Background&) const = default;
};

/// Parses "solid[:level]", "checker[:period]", "stripes[:period]",
/// "noise[:amplitude]" or "image:PATH".
Background parse_background(const std::string& text);
std::string describe(const Background& bg);

struct GridSpec {
  int k = 7;          // odd, >= 5
  int patch_px = 32;  // cell side in pixels
  int s = 1;          // object side in cells, odd, 1 <= s <= k - 2
  Background background;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument naming the violated constraint.
  void validate() const;
  int canvas_px() const { return k * patch_px; }
  int center_anchor() const { return (k - s) / 2; }
};

struct PlacementRecord {
  int anchor_row = 0;  // top-left cell of the s x s block
  int anchor_col = 0;
  Placement mode = Placement::kCenter;

  bool operator==(const PlacementRecord&) const = default;
};

Image make_canvas(const GridSpec& spec);

/// Every anchor admissible for `mode`: the centered anchor, or every
/// in-canvas anchor other than it whose block touches row/col 0 or k-1.
std::vector<std::pair<int, int>> candidate_anchors(Placement mode, const GridSpec& spec);

bool is_valid_placement(const PlacementRecord& p, const GridSpec& spec);

PlacementRecord sample_placement(Placement mode, const GridSpec& spec, Rng& rng);

/// Resamples the square object to (s * patch_px)^2 and pastes it at the
/// anchor block. Pixels outside the block are copied from `canvas` as is.
Image place_object(const Image& canvas, const Image& object, const PlacementRecord& placement,
                   const GridSpec& spec);

struct SourceImage {
  Image image;
  std::string class_label;
  std::string source_set;
};

/// Loads `dir/<class>/*.png` (one source set named after `dir`) or
/// `dir/<set>/<class>/*.png`. Files are taken in sorted order, at most
/// `per_class` per class; images are center-cropped to squares.
std::vector<SourceImage> load_sources(const std::filesystem::path& dir, int per_class = 100);

struct GenerateOptions {
  int jobs = 1;
  bool write_images = true;
};

/// Two samples per source image (center, then off-center) written to
/// `out_dir/images/<sample_id>.png`, plus `out_dir/manifest.jsonl`.
/// Output depends only on (sources, spec).
std::vector<ManifestEntry> generate_dataset(std::span<const SourceImage> sources,
                                            const GridSpec& spec,
                                            const std::filesystem::path& out_dir,
                                            const GenerateOptions& options = {});

/// Checks every grid entry against the placement rules for grid side k.
/// Returns human-readable violations (empty when all pass).
std::vector<std::string> check_placements(std::span<const ManifestEntry> entries, int k);

}  // namespace centerlens::grid
