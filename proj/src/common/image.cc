// Copyright 2026 The mmrecall Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mmr/common/image.h"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mmr/common/errors.h"

namespace mmr {
namespace {

// Parses one whitespace-delimited header integer, skipping '#' comments.
bool read_header_int(std::string_view bytes, std::size_t& pos,
                     std::size_t& value) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() ||
      !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    return false;
  }
  value = 0;
  while (pos < bytes.size() &&
         std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > 1'000'000) return false;
    ++pos;
  }
  return true;
}

std::uint8_t to_byte(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

}  // namespace

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

std::optional<GrayImage> decode_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    return std::nullopt;
  }
  std::size_t pos = 2;
  std::size_t width = 0, height = 0, maxval = 0;
  if (!read_header_int(bytes, pos, width) ||
      !read_header_int(bytes, pos, height) ||
      !read_header_int(bytes, pos, maxval)) {
    return std::nullopt;
  }
  if (width == 0 || height == 0 || maxval != 255) return std::nullopt;
  // Exactly one whitespace byte separates the header from the raster.
  if (pos >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    return std::nullopt;
  }
  ++pos;
  if (bytes.size() - pos != width * height) return std::nullopt;
  GrayImage image = GrayImage::blank(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    image.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  }
  return image;
}

GrayImage quantize8(GrayImage image) {
  for (double& v : image.pixels) v = to_byte(v) / 255.0;
  return image;
}

GrayImage crop(const GrayImage& image, const Box& box) {
  if (box.x1 <= box.x0 || box.y1 <= box.y0 || box.x1 > image.width ||
      box.y1 > image.height) {
    throw ShapeError("crop box outside image");
  }
  GrayImage out = GrayImage::blank(box.x1 - box.x0, box.y1 - box.y0);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      out.at(r, c) = image.at(box.y0 + r, box.x0 + c);
    }
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& image, std::size_t width,
                          std::size_t height) {
  if (image.width == width && image.height == height) return image;
  if (image.width == 0 || image.height == 0 || width == 0 || height == 0) {
    throw ShapeError("resize of empty image");
  }
  GrayImage out = GrayImage::blank(width, height);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (std::size_t r = 0; r < height; ++r) {
    // Pixel-center alignment.
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (std::size_t c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      const double top = image.at(y0, x0) * (1 - wx) + image.at(y0, x1) * wx;
      const double bot = image.at(y1, x0) * (1 - wx) + image.at(y1, x1) * wx;
      out.at(r, c) = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

}  // namespace mmr
