// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"

#include <filesystem>
#include <vector>

namespace p2l {

struct GrayImage {
  ImageShape shape;
  Vector data;  // row-major
};

/// 16-bit binary PGM (P5, maxval 65535). Values are clamped to [0, 1].
void write_pgm16(const std::filesystem::path& path, const Vector& image,
                 ImageShape shape);
[[nodiscard]] GrayImage read_pgm16(const std::filesystem::path& path);

/// Single-channel little-endian PFM, stored bottom row first.
void write_pfm(const std::filesystem::path& path, const Vector& image,
               ImageShape shape);
[[nodiscard]] GrayImage read_pfm(const std::filesystem::path& path);

/// Flat little-endian float64 array.
void write_f64(const std::filesystem::path& path, const std::vector<double>& values);
[[nodiscard]] std::vector<double> read_f64(const std::filesystem::path& path);

}  // namespace p2l
