// SPDX-License-Identifier: Apache-2.0
#include <png.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "centerlens/error.hpp"
#include "centerlens/image.hpp"

namespace centerlens {

namespace {

void write_rgb8(const std::vector<unsigned char>& bytes, int height, int width, png_uint_32 format,
                const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  auto px = out.pixels();
  std::transform(buf.begin(), buf.end(), px.begin(),
                 [](unsigned char b) { return static_cast<float>(b) / 255.0f; });
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), bytes.begin(), quantize_u8);
  write_rgb8(bytes, image.height(), image.width(), PNG_FORMAT_RGB, path);
}

void write_gray_png(std::span<const float> values, int height, int width,
                    const std::filesystem::path& path) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidArgument("map size does not match height*width");
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const float range = values.empty() ? 0.0f : *hi - *lo;
  std::vector<unsigned char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    bytes[i] = range > 0.0f ? quantize_u8((values[i] - *lo) / range) : 0;
  }
  write_rgb8(bytes, height, width, PNG_FORMAT_GRAY, path);
}

}  // namespace centerlens
