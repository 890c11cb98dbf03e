// SPDX-License-Identifier: Apache-2.0
#include "p2l/image_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace p2l {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary writers assume a little-endian host");

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  return in;
}

void check_written(const std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

void check_shape(const Vector& image, ImageShape shape) {
  if (shape.height < 1 || shape.width < 1 || image.size() != shape.size()) {
    throw DimensionError(fmt::format("image has {} values, shape is {}x{}",
                                     image.size(), shape.height, shape.width));
  }
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

long header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in);
  try {
    return std::stol(tok);
  } catch (const std::exception&) {
    throw IoError(fmt::format("'{}': malformed header token '{}'", path.string(), tok));
  }
}

}  // namespace

void write_pgm16(const std::filesystem::path& path, const Vector& image,
                 ImageShape shape) {
  check_shape(image, shape);
  auto out = open_out(path);
  out << "P5\n" << shape.width << ' ' << shape.height << "\n65535\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.size()) * 2);
  for (Index i = 0; i < image.size(); ++i) {
    const double v = std::isnan(image[i]) ? 0.0 : std::clamp(image[i], 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[static_cast<std::size_t>(2 * i)] = static_cast<unsigned char>(q >> 8);
    bytes[static_cast<std::size_t>(2 * i + 1)] = static_cast<unsigned char>(q & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  check_written(out, path);
}

GrayImage read_pgm16(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (header_token(in) != "P5") {
    throw IoError(fmt::format("'{}' is not a binary PGM", path.string()));
  }
  const long w = header_int(in, path);
  const long h = header_int(in, path);
  const long maxval = header_int(in, path);
  if (w < 1 || h < 1 || maxval != 65535) {
    throw IoError(fmt::format("'{}': expected a 16-bit PGM", path.string()));
  }
  GrayImage img{{h, w}, Vector(h * w)};
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h * w) * 2);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError(fmt::format("'{}': truncated pixel data", path.string()));
  for (Index i = 0; i < h * w; ++i) {
    const unsigned q = (unsigned{bytes[static_cast<std::size_t>(2 * i)]} << 8) |
                       bytes[static_cast<std::size_t>(2 * i + 1)];
    img.data[i] = q / 65535.0;
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const Vector& image,
               ImageShape shape) {
  check_shape(image, shape);
  auto out = open_out(path);
  out << "Pf\n" << shape.width << ' ' << shape.height << "\n-1.0\n";
  for (Index r = shape.height - 1; r >= 0; --r) {
    for (Index c = 0; c < shape.width; ++c) {
      const auto v = static_cast<float>(image[r * shape.width + c]);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  check_written(out, path);
}

GrayImage read_pfm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (header_token(in) != "Pf") {
    throw IoError(fmt::format("'{}' is not a grayscale PFM", path.string()));
  }
  const long w = header_int(in, path);
  const long h = header_int(in, path);
  const std::string scale = header_token(in);
  if (w < 1 || h < 1 || scale.empty() || scale.front() != '-') {
    throw IoError(fmt::format("'{}': expected a little-endian PFM", path.string()));
  }
  GrayImage img{{h, w}, Vector(h * w)};
  for (Index r = h - 1; r >= 0; --r) {
    for (Index c = 0; c < w; ++c) {
      float v = 0.0F;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      img.data[r * w + c] = v;
    }
  }
  if (!in) throw IoError(fmt::format("'{}': truncated pixel data", path.string()));
  return img;
}

void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  check_written(out, path);
}

std::vector<double> read_f64(const std::filesystem::path& path) {
  auto in = open_in(path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(double) != 0) {
    throw IoError(fmt::format("'{}': size {} is not a multiple of 8", path.string(), bytes));
  }
  in.seekg(0);
  std::vector<double> values(bytes / sizeof(double));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError(fmt::format("'{}': read failed", path.string()));
  return values;
}

}  // namespace p2l
