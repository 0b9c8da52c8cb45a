// SPDX-License-Identifier: Apache-2.0
#include "centerlens/image.hpp"

#include <algorithm>
#include <cmath>

#include "centerlens/error.hpp"

namespace centerlens {

Image::Image(int height, int width, float fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) {
    throw InvalidArgument("image dimensions must be non-negative");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

namespace {

// Source coordinate for output index i under corner alignment.
double source_coord(int i, int in, int out) {
  if (out <= 1) return 0.0;
  return static_cast<double>(i) * (in - 1) / (out - 1);
}

}  // namespace

Image resize_bilinear(const Image& src, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) {
    throw InvalidArgument("resize target must be positive");
  }
  if (src.empty()) throw InvalidArgument("cannot resize an empty image");
  if (out_height == src.height() && out_width == src.width()) return src;

  Image dst(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    const double sy = source_coord(y, src.height(), out_height);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), src.height() - 1);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double sx = source_coord(x, src.width(), out_width);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), src.width() - 1);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double fx = sx - x0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - fx) + src.at(y0, x1, c) * fx;
        const double bot = src.at(y1, x0, c) * (1.0 - fx) + src.at(y1, x1, c) * fx;
        dst.at(y, x, c) = static_cast<float>(top * (1.0 - fy) + bot * fy);
      }
    }
  }
  return dst;
}

Image center_crop_square(const Image& src) {
  const int side = std::min(src.height(), src.width());
  if (side == src.height() && side == src.width()) return src;
  const int oy = (src.height() - side) / 2;
  const int ox = (src.width() - side) / 2;
  Image dst(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < Image::kChannels; ++c) dst.at(y, x, c) = src.at(y + oy, x + ox, c);
  return dst;
}

unsigned char quantize_u8(float v) {
  const double scaled = std::floor(static_cast<double>(v) * 255.0 + 0.5);
  return static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0));
}

}  // namespace centerlens
