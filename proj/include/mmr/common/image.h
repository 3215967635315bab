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

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmr {

// Grayscale raster with intensities in [0, 1], row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  static GrayImage blank(std::size_t width, std::size_t height) {
    return GrayImage{width, height, std::vector<double>(width * height, 0.0)};
  }

  double at(std::size_t row, std::size_t col) const {
    return pixels[row * width + col];
  }
  double& at(std::size_t row, std::size_t col) {
    return pixels[row * width + col];
  }

  bool operator==(const GrayImage&) const = default;
};

struct Box {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t x1 = 0;  // exclusive
  std::size_t y1 = 0;  // exclusive

  bool operator==(const Box&) const = default;
};

// Binary PGM ("P5", maxval 255). Pixels are quantized to 8 bits on encode.
std::string encode_pgm(const GrayImage& image);
// Returns nullopt for anything that is not a well-formed 8-bit P5 image.
std::optional<GrayImage> decode_pgm(std::string_view bytes);

// Rounds every pixel to the nearest multiple of 1/255, i.e. the values an
// encode/decode round trip would produce.
GrayImage quantize8(GrayImage image);

GrayImage crop(const GrayImage& image, const Box& box);
GrayImage resize_bilinear(const GrayImage& image, std::size_t width,
                          std::size_t height);

}  // namespace mmr
