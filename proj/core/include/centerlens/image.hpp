// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace centerlens {

/// H x W x 3 image, float values in [0, 1], row-major with interleaved
/// channels (channel-last).
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  float at(int y, int x, int c) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Bilinear resampling with corner-aligned mapping: output pixel i samples
/// the source at i * (in - 1) / (out - 1). Same-size input is returned
/// unchanged.
Image resize_bilinear(const Image& src, int out_height, int out_width);

/// Largest centered square crop.
Image center_crop_square(const Image& src);

/// Quantizes a [0,1] value to 8 bits, rounding half up and clamping.
unsigned char quantize_u8(float v);

Image read_png(const std::filesystem::path& path);

/// 8-bit RGB, no ancillary chunks, so identical images give identical files.
void write_png(const Image& image, const std::filesystem::path& path);

/// Min-max normalized 8-bit grayscale rendering of a row-major map.
void write_gray_png(std::span<const float> values, int height, int width,
                    const std::filesystem::path& path);

}  // namespace centerlens
