// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "centerlens/interventions.hpp"
#include "json.hpp"

namespace centerlens::intervene {

void PromptStyle::validate() const {
  if (stroke_px < 1) throw InvalidArgument("stroke_px must be >= 1");
  if (pad_px < 0) throw InvalidArgument("pad_px must be >= 0");
  for (float c : color) {
    if (!(c >= 0.0f && c <= 1.0f)) throw InvalidArgument("prompt color channels must lie in [0,1]");
  }
}

DetectionBox clamp_box(const DetectionBox& box, int width, int height) {
  DetectionBox out = box;
  out.x0 = std::clamp(box.x0, 0.0, static_cast<double>(width));
  out.x1 = std::clamp(box.x1, 0.0, static_cast<double>(width));
  out.y0 = std::clamp(box.y0, 0.0, static_cast<double>(height));
  out.y1 = std::clamp(box.y1, 0.0, static_cast<double>(height));
  if (!(out.x0 < out.x1 && out.y0 < out.y1)) {
    throw DataError("box '" + box.label + "' is empty after clamping to the image");
  }
  return out;
}

bool in_stroke(const DetectionBox& box, const PromptStyle& style, int x, int y) {
  const double px = x + 0.5;
  const double py = y + 0.5;
  const double pad = style.pad_px;
  const double sw = style.stroke_px;
  if (style.shape == PromptShape::kBox) {
    auto inside = [&](double grow) {
      return px >= box.x0 - grow && px < box.x1 + grow && py >= box.y0 - grow && py < box.y1 + grow;
    };
    return inside(pad + sw) && !inside(pad);
  }
  const double cx = 0.5 * (box.x0 + box.x1);
  const double cy = 0.5 * (box.y0 + box.y1);
  const double a = 0.5 * (box.x1 - box.x0) + pad;
  const double b = 0.5 * (box.y1 - box.y0) + pad;
  auto radius = [&](double ra, double rb) {
    const double u = (px - cx) / ra;
    const double v = (py - cy) / rb;
    return u * u + v * v;
  };
  return radius(a + sw, b + sw) <= 1.0 && radius(a, b) > 1.0;
}

namespace {

// First integer pixel whose center is >= edge.
int first_pixel_at(double edge) { return static_cast<int>(std::ceil(edge - 0.5)); }

void paint(Image& img, int x, int y, const PromptStyle& style) {
  for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) = style.color[c];
}

void draw_box(Image& img, const DetectionBox& box, const PromptStyle& style) {
  const double pad = style.pad_px;
  const double grow = pad + style.stroke_px;
  const int ox0 = std::max(first_pixel_at(box.x0 - grow), 0);
  const int ox1 = std::min(first_pixel_at(box.x1 + grow), img.width());
  const int oy0 = std::max(first_pixel_at(box.y0 - grow), 0);
  const int oy1 = std::min(first_pixel_at(box.y1 + grow), img.height());
  const int ix0 = first_pixel_at(box.x0 - pad);
  const int ix1 = first_pixel_at(box.x1 + pad);
  const int iy0 = first_pixel_at(box.y0 - pad);
  const int iy1 = first_pixel_at(box.y1 + pad);
  for (int y = oy0; y < oy1; ++y) {
    const bool inner_row = y >= iy0 && y < iy1;
    for (int x = ox0; x < ox1; ++x) {
      if (inner_row && x >= ix0 && x < ix1) {
        x = ix1 - 1;
        continue;
      }
      paint(img, x, y, style);
    }
  }
}

void draw_ellipse(Image& img, const DetectionBox& box, const PromptStyle& style) {
  const double grow = style.pad_px + style.stroke_px;
  const int x0 = std::max(first_pixel_at(box.x0 - grow), 0);
  const int x1 = std::min(first_pixel_at(box.x1 + grow), img.width());
  const int y0 = std::max(first_pixel_at(box.y0 - grow), 0);
  const int y1 = std::min(first_pixel_at(box.y1 + grow), img.height());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      if (in_stroke(box, style, x, y)) paint(img, x, y, style);
}

}  // namespace

Image overlay_prompts(const Image& image, std::span<const DetectionBox> boxes, const PromptStyle& style) {
  style.validate();
  Image out = image;
  for (const auto& raw : boxes) {
    const DetectionBox box = clamp_box(raw, image.width(), image.height());
    if (style.shape == PromptShape::kBox) {
      draw_box(out, box, style);
    } else {
      draw_ellipse(out, box, style);
    }
  }
  return out;
}

std::vector<ImageDetections> parse_detections(const std::string& text, std::optional<ImageSize> size) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("detections file is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) throw DataError("detections file must hold a JSON array");
  std::vector<ImageDetections> out;
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& rec = j[r];
    ImageDetections d;
    try {
      d.image_id = rec.at("image_id").get<std::string>();
      const auto where = "detection record " + std::to_string(r) + " (image '" + d.image_id + "')";
      for (std::size_t b = 0; b < rec.at("boxes").size(); ++b) {
        const auto& jb = rec.at("boxes")[b];
        DetectionBox box;
        box.x0 = jb.at("x0").get<double>();
        box.y0 = jb.at("y0").get<double>();
        box.x1 = jb.at("x1").get<double>();
        box.y1 = jb.at("y1").get<double>();
        box.label = jb.value("label", std::string{});
        box.score = jb.value("score", 1.0);
        if (!(box.x0 < box.x1) || !(box.y0 < box.y1)) {
          throw DataError(where + ", box " + std::to_string(b) + ": requires x0 < x1 and y0 < y1");
        }
        if (!(box.score >= 0.0 && box.score <= 1.0)) {
          throw DataError(where + ", box " + std::to_string(b) + ": score outside [0,1]");
        }
        if (size) box = clamp_box(box, size->width, size->height);
        d.boxes.push_back(std::move(box));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("detection record " + std::to_string(r) + ": " + e.what());
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<ImageDetections> load_detections(const std::filesystem::path& path, std::optional<ImageSize> size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_detections(ss.str(), size);
}

DetectionBox grid_object_box(int anchor_row, int anchor_col, int s, int patch_px) {
  DetectionBox b;
  b.x0 = static_cast<double>(anchor_col) * patch_px;
  b.y0 = static_cast<double>(anchor_row) * patch_px;
  b.x1 = static_cast<double>(anchor_col + s) * patch_px;
  b.y1 = static_cast<double>(anchor_row + s) * patch_px;
  b.label = "object";
  b.score = 1.0;
  return b;
}

}  // namespace centerlens::intervene
