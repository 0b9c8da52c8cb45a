// SPDX-License-Identifier: Apache-2.0
#include "centerlens/gridgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "centerlens/error.hpp"
#include "centerlens/parallel.hpp"

namespace centerlens::grid {

namespace fs = std::filesystem;

namespace {

float parse_float(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const float v = std::stof(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("bad " + what + " '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("bad " + what + " '" + s + "'");
  }
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Smoothstep-interpolated lattice noise, one value per lattice point.
Image value_noise(const GridSpec& spec, int side) {
  const Background& bg = spec.background;
  const int cell = bg.period_px > 0 ? bg.period_px : spec.patch_px;
  const int lattice = side / cell + 2;
  Rng rng(spec.seed);
  std::vector<float> lat(static_cast<std::size_t>(lattice) * lattice);
  for (auto& v : lat) v = static_cast<float>(bg.level + bg.amplitude * (2.0 * rng.uniform01() - 1.0));

  Image img(side, side);
  for (int y = 0; y < side; ++y) {
    const int gy = y / cell;
    double ty = static_cast<double>(y % cell) / cell;
    ty = ty * ty * (3.0 - 2.0 * ty);
    for (int x = 0; x < side; ++x) {
      const int gx = x / cell;
      double tx = static_cast<double>(x % cell) / cell;
      tx = tx * tx * (3.0 - 2.0 * tx);
      auto L = [&](int r, int c) { return static_cast<double>(lat[static_cast<std::size_t>(r) * lattice + c]); };
      const double top = L(gy, gx) * (1 - tx) + L(gy, gx + 1) * tx;
      const double bot = L(gy + 1, gx) * (1 - tx) + L(gy + 1, gx + 1) * tx;
      const float v = std::clamp(static_cast<float>(top * (1 - ty) + bot * ty), 0.0f, 1.0f);
      for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) = v;
    }
  }
  return img;
}

Image external_background(const GridSpec& spec, int side) {
  const fs::path& p = spec.background.image;
  fs::path chosen = p;
  std::error_code ec;
  if (fs::is_directory(p, ec)) {
    const auto files = sorted_pngs(p);
    if (files.empty()) throw IoError("background directory " + p.string() + " has no PNG files");
    Rng rng(spec.seed);
    chosen = files[rng.uniform_index(files.size())];
  }
  return resize_bilinear(center_crop_square(read_png(chosen)), side, side);
}

}  // namespace

Background parse_background(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  Background bg;
  if (kind == "solid") {
    bg.kind = BackgroundKind::kSolid;
    if (!arg.empty()) bg.level = parse_float(arg, "solid level");
    if (bg.level < 0.0f || bg.level > 1.0f) throw InvalidArgument("solid level must lie in [0,1]");
  } else if (kind == "checker" || kind == "stripes") {
    bg.kind = kind == "checker" ? BackgroundKind::kChecker : BackgroundKind::kStripes;
    if (!arg.empty()) bg.period_px = parse_int(arg, kind + " period");
    if (bg.period_px < 0) throw InvalidArgument(kind + " period must be positive");
  } else if (kind == "noise") {
    bg.kind = BackgroundKind::kValueNoise;
    if (!arg.empty()) bg.amplitude = parse_float(arg, "noise amplitude");
    if (bg.amplitude < 0.0f || bg.amplitude > 0.5f) {
      throw InvalidArgument("noise amplitude must lie in [0,0.5]");
    }
  } else if (kind == "image") {
    if (arg.empty()) throw InvalidArgument("image background needs a path: image:PATH");
    bg.kind = BackgroundKind::kExternal;
    bg.image = arg;
  } else {
    throw InvalidArgument("unknown background '" + text + "'");
  }
  return bg;
}

std::string describe(const Background& bg) {
  switch (bg.kind) {
    case BackgroundKind::kSolid: return "solid:" + std::to_string(bg.level);
    case BackgroundKind::kChecker: return "checker:" + std::to_string(bg.period_px);
    case BackgroundKind::kStripes: return "stripes:" + std::to_string(bg.period_px);
    case BackgroundKind::kValueNoise: return "noise:" + std::to_string(bg.amplitude);
    case BackgroundKind::kExternal: return "image:" + bg.image.string();
  }
  return "?";
}

void GridSpec::validate() const {
  if (k < 5 || k % 2 == 0) throw InvalidArgument("grid side k must be an odd integer >= 5");
  if (patch_px <= 0) throw InvalidArgument("patch_px must be positive");
  if (s < 1 || s % 2 == 0) throw InvalidArgument("object size s must be an odd integer >= 1");
  if (s > k - 2) throw InvalidArgument("object size s must not exceed k - 2");
}

Image make_canvas(const GridSpec& spec) {
  spec.validate();
  const int side = spec.canvas_px();
  const Background& bg = spec.background;
  const int period = bg.period_px > 0 ? bg.period_px : spec.patch_px;
  switch (bg.kind) {
    case BackgroundKind::kSolid:
      return Image(side, side, bg.level);
    case BackgroundKind::kChecker:
    case BackgroundKind::kStripes: {
      Image img(side, side);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const int phase = bg.kind == BackgroundKind::kChecker ? (x / period + y / period) : (y / period);
          const float v = phase % 2 == 0 ? bg.low : bg.high;
          for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) = v;
        }
      }
      return img;
    }
    case BackgroundKind::kValueNoise:
      return value_noise(spec, side);
    case BackgroundKind::kExternal:
      return external_background(spec, side);
  }
  throw InvalidArgument("unknown background kind");
}

std::vector<std::pair<int, int>> candidate_anchors(Placement mode, const GridSpec& spec) {
  spec.validate();
  const int c = spec.center_anchor();
  if (mode == Placement::kCenter) return {{c, c}};
  std::vector<std::pair<int, int>> out;
  const int last = spec.k - spec.s;
  for (int r = 0; r <= last; ++r) {
    for (int col = 0; col <= last; ++col) {
      if (r == c && col == c) continue;
      if (r == 0 || col == 0 || r == last || col == last) out.emplace_back(r, col);
    }
  }
  return out;
}

bool is_valid_placement(const PlacementRecord& p, const GridSpec& spec) {
  const int last = spec.k - spec.s;
  if (p.anchor_row < 0 || p.anchor_col < 0 || p.anchor_row > last || p.anchor_col > last) return false;
  const int c = spec.center_anchor();
  const bool centered = p.anchor_row == c && p.anchor_col == c;
  if (p.mode == Placement::kCenter) return centered;
  const bool on_ring = p.anchor_row == 0 || p.anchor_col == 0 || p.anchor_row == last || p.anchor_col == last;
  return !centered && on_ring;
}

PlacementRecord sample_placement(Placement mode, const GridSpec& spec, Rng& rng) {
  const auto candidates = candidate_anchors(mode, spec);
  const auto& [r, c] = candidates[rng.uniform_index(candidates.size())];
  return {r, c, mode};
}

Image place_object(const Image& canvas, const Image& object, const PlacementRecord& placement,
                   const GridSpec& spec) {
  if (object.height() != object.width() || object.empty()) {
    throw InvalidArgument("object image must be square and non-empty");
  }
  if (canvas.height() != spec.canvas_px() || canvas.width() != spec.canvas_px()) {
    throw InvalidArgument("canvas size does not match the grid spec");
  }
  if (!is_valid_placement(placement, spec)) throw InvalidArgument("placement invalid for grid spec");

  const int block = spec.s * spec.patch_px;
  const Image resized = resize_bilinear(object, block, block);
  Image out = canvas;
  const int y0 = placement.anchor_row * spec.patch_px;
  const int x0 = placement.anchor_col * spec.patch_px;
  for (int y = 0; y < block; ++y)
    for (int x = 0; x < block; ++x)
      for (int c = 0; c < Image::kChannels; ++c) out.at(y0 + y, x0 + x, c) = resized.at(y, x, c);
  return out;
}

std::vector<SourceImage> load_sources(const fs::path& dir, int per_class) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("source directory " + dir.string() + " not found");
  if (per_class <= 0) throw InvalidArgument("per-class count must be positive");

  // dir/<class>/*.png, or dir/<set>/<class>/*.png when classes hold no images.
  std::vector<std::pair<std::string, fs::path>> sets;
  const auto top = sorted_subdirs(dir);
  const bool nested = !top.empty() && std::all_of(top.begin(), top.end(), [](const fs::path& p) {
    return sorted_pngs(p).empty() && !sorted_subdirs(p).empty();
  });
  if (nested) {
    for (const auto& s : top) sets.emplace_back(s.filename().string(), s);
  } else {
    auto norm = fs::absolute(dir).lexically_normal();
    if (norm.filename().empty()) norm = norm.parent_path();
    sets.emplace_back(norm.filename().string(), dir);
  }

  std::vector<SourceImage> out;
  for (const auto& [set_name, set_dir] : sets) {
    for (const auto& class_dir : sorted_subdirs(set_dir)) {
      const auto files = sorted_pngs(class_dir);
      const std::size_t take = std::min<std::size_t>(files.size(), static_cast<std::size_t>(per_class));
      for (std::size_t i = 0; i < take; ++i) {
        out.push_back({center_crop_square(read_png(files[i])), class_dir.filename().string(), set_name});
      }
    }
  }
  if (out.empty()) throw DataError("no source images found under " + dir.string());
  return out;
}

std::vector<ManifestEntry> generate_dataset(std::span<const SourceImage> sources, const GridSpec& spec,
                                            const fs::path& out_dir, const GenerateOptions& options) {
  spec.validate();
  if (sources.empty()) throw InvalidArgument("source image list is empty");

  const fs::path image_dir = out_dir / "images";
  if (options.write_images) {
    std::error_code ec;
    fs::create_directories(image_dir, ec);
    if (ec || !fs::is_directory(image_dir)) {
      throw IoError("cannot create output directory " + image_dir.string());
    }
  }

  // Per-set running index so ids are stable under reordering of other sets.
  std::vector<std::size_t> index_in_set(sources.size());
  {
    std::map<std::string, std::size_t> counters;
    for (std::size_t i = 0; i < sources.size(); ++i) index_in_set[i] = counters[sources[i].source_set]++;
  }

  std::vector<ManifestEntry> entries(2 * sources.size());
  parallel_for(sources.size(), options.jobs, [&](std::size_t i) {
    const SourceImage& src = sources[i];
    GridSpec sample_spec = spec;
    sample_spec.seed = derive_seed(spec.seed, 2 * i);
    Rng placement_rng(derive_seed(spec.seed, 2 * i + 1));

    const Image canvas = options.write_images ? make_canvas(sample_spec) : Image{};
    const PlacementRecord placements[2] = {
        sample_placement(Placement::kCenter, spec, placement_rng),
        sample_placement(Placement::kOffCenter, spec, placement_rng),
    };
    char id_prefix[64];
    std::snprintf(id_prefix, sizeof id_prefix, "-%05zu-", index_in_set[i]);
    for (int v = 0; v < 2; ++v) {
      const auto& p = placements[v];
      ManifestEntry e;
      e.sample_id = src.source_set + id_prefix + (v == 0 ? "c" : "o");
      e.image_path = "images/" + e.sample_id + ".png";
      e.class_label = src.class_label;
      e.placement = p.mode;
      e.cell_row = p.anchor_row;
      e.cell_col = p.anchor_col;
      e.source_set = src.source_set;
      e.object_size_s = spec.s;
      if (options.write_images) write_png(place_object(canvas, src.image, p, spec), out_dir / e.image_path);
      entries[2 * i + v] = std::move(e);
    }
  });

  if (options.write_images) tensorio::write_manifest(entries, out_dir / "manifest.jsonl");
  return entries;
}

std::vector<std::string> check_placements(std::span<const ManifestEntry> entries, int k) {
  std::vector<std::string> problems;
  for (const auto& e : entries) {
    GridSpec spec;
    spec.k = k;
    spec.s = e.object_size_s;
    try {
      spec.validate();
    } catch (const InvalidArgument& ex) {
      problems.push_back(e.sample_id + ": " + ex.what());
      continue;
    }
    if (!is_valid_placement({e.cell_row, e.cell_col, e.placement}, spec)) {
      problems.push_back(e.sample_id + ": anchor (" + std::to_string(e.cell_row) + "," +
                         std::to_string(e.cell_col) + ") invalid for " + tensorio::to_string(e.placement));
    }
  }
  return problems;
}

}  // namespace centerlens::grid
