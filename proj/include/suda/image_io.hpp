#pragma once

// Binary PGM (P5) and PPM (P6) with 8-bit samples.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"

namespace suda::io {

struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 for P5, 3 for P6
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

inline std::uint8_t to_byte(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

inline void write_pnm(const std::filesystem::path& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw DimensionError("pnm: channels must be 1 or 3");
  if (r.pixels.size() != r.width * r.height * r.channels) throw DimensionError("pnm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << (r.channels == 1 ? "P5" : "P6") << '\n' << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline Raster read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto token = [&in]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const std::string magic = token();
  Raster r;
  if (magic == "P5") {
    r.channels = 1;
  } else if (magic == "P6") {
    r.channels = 3;
  } else {
    throw FormatError("not a binary PGM/PPM file: " + path.string(), 0);
  }
  r.width = std::stoul(token());
  r.height = std::stoul(token());
  if (std::stoul(token()) != 255) throw FormatError("only 8-bit samples are supported", static_cast<std::size_t>(in.tellg()));
  r.pixels.resize(r.width * r.height * r.channels);
  in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.pixels.size())) {
    throw FormatError("truncated pixel data in " + path.string(), static_cast<std::size_t>(in.gcount()));
  }
  return r;
}

// Single-channel H x W values in [0,1] to PGM.
inline void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::span<const double> values) {
  Raster r{width, height, 1, {}};
  r.pixels.reserve(values.size());
  for (double v : values) r.pixels.push_back(to_byte(v));
  write_pnm(path, r);
}

// 3 x H x W planar image with values in [0,1] to PPM.
inline void write_ppm(const std::filesystem::path& path, const ad::Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw DimensionError("write_ppm expects a 3xHxW image, got " + ad::shape_string(image.shape()));
  }
  const std::size_t h = image.extent(1), w = image.extent(2);
  Raster r{w, h, 3, std::vector<std::uint8_t>(3 * h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) r.pixels[(y * w + x) * 3 + c] = to_byte(image[(c * h + y) * w + x]);
  write_pnm(path, r);
}

}  // namespace suda::io
