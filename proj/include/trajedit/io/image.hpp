// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "trajedit/core/errors.hpp"
#include "trajedit/core/tensor.hpp"

namespace trajedit::io {

// Binary netpbm: P6 for 3-channel latents, P5 for 1-channel masks. Values in
// [0, 1] map to 8 bits by round(clamp(v) * 255).

inline std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<std::uint8_t> encode_netpbm(const Latent& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw ShapeError("encode_netpbm: expected 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  const std::string header = std::string(img.channels() == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width()) +
                             " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.push_back(to_byte(img.at(c, y, x)));
  return out;
}

inline void write_netpbm(const std::filesystem::path& path, const Latent& img) {
  const auto bytes = encode_netpbm(img);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

namespace detail {

inline int read_header_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw ParseError(path, 0, "malformed netpbm header");
  return v;
}

}  // namespace detail

/// Reads P5/P6 (8-bit) into a [0, 1] latent with 1 or 3 channels.
inline Latent read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw ParseError(path.string(), 0, "unsupported image format '" + magic + "'");
  const int channels = magic == "P6" ? 3 : 1;
  const int w = detail::read_header_int(in, path.string());
  const int h = detail::read_header_int(in, path.string());
  const int maxval = detail::read_header_int(in, path.string());
  if (w < 1 || h < 1 || maxval != 255) throw ParseError(path.string(), 0, "only 8-bit images are supported");
  in.get();
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw ParseError(path.string(), 0, "truncated pixel data");
  Latent img(Shape3{channels, h, w});
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = buf[i++] / 255.0;
  return img;
}

}  // namespace trajedit::io
