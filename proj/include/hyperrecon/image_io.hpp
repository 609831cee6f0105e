#pragma once

// PNG encoding (libpng), base64, and the landscape heatmap renderer.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hyperrecon/error.hpp"
#include "hyperrecon/evaluation.hpp"
#include "hyperrecon/signal.hpp"

namespace hyperrecon {

/// Encodes 8-bit pixels (1 = gray, 3 = RGB channels) as a PNG byte string.
inline std::string encode_png(const std::vector<std::uint8_t>& pixels, std::size_t width, std::size_t height,
                              int channels) {
  if (pixels.size() != width * height * static_cast<std::size_t>(channels))
    throw InvalidShape("encode_png: pixel buffer size mismatch");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("encode_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("encode_png: png_create_info_struct failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("encode_png: libpng error");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width * static_cast<std::size_t>(channels)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Magnitude image, [0, 1] mapped linearly to 0..255 (clamped).
inline std::string magnitude_png(const ComplexGrid& img) {
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(std::abs(img[i]), 0.0, 1.0) * 255.0));
  return encode_png(px, img.width(), img.height(), 1);
}

inline std::string base64_encode(std::string_view in) {
  static constexpr char kTable[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                            static_cast<unsigned char>(in[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kTable[(v >> s) & 63]);
  }
  if (i < in.size()) {
    std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
    if (i + 1 < in.size()) v |= static_cast<unsigned char>(in[i + 1]) << 8;
    out.push_back(kTable[(v >> 18) & 63]);
    out.push_back(kTable[(v >> 12) & 63]);
    out.push_back(i + 1 < in.size() ? kTable[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::string base64_decode(std::string_view in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : in) {
    const int v = val(c);
    if (v < 0) continue;
    buf = (buf << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buf >> bits) & 0xffu));
    }
  }
  return out;
}

namespace detail {

// Piecewise-linear approximation of the viridis colormap.
inline std::array<std::uint8_t, 3> viridis(double t) {
  static constexpr std::array<std::array<double, 3>, 6> kStops{{{68, 1, 84},
                                                                {65, 68, 135},
                                                                {42, 120, 142},
                                                                {34, 168, 132},
                                                                {122, 209, 81},
                                                                {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * (kStops.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), kStops.size() - 2);
  const double f = t - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<std::uint8_t>(std::lround(kStops[i][c] * (1 - f) + kStops[i + 1][c] * f));
  return rgb;
}

}  // namespace detail

/// Heatmap of a landscape (alpha1 along x, alpha2 upward) with black level-set
/// contours at the given RPSNR levels, `scale` pixels per cell.
inline std::string landscape_png(const Landscape& land, const std::vector<double>& levels, std::size_t scale = 16) {
  const std::size_t g = land.resolution;
  const std::size_t side = (g - 1) * scale + 1;
  const double lo = *std::min_element(land.values.begin(), land.values.end());
  const double hi = land.max();
  std::vector<double> field(side * side);
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px) {
      const double a1 = static_cast<double>(px) / static_cast<double>(scale);
      const double a2 = static_cast<double>(side - 1 - py) / static_cast<double>(scale);
      const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(a1), g - 2);
      const std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(a2), g - 2);
      const double u = a1 - static_cast<double>(i), v = a2 - static_cast<double>(j);
      field[py * side + px] = (1 - u) * (1 - v) * land.at(i, j) + (1 - u) * v * land.at(i, j + 1) +
                              u * (1 - v) * land.at(i + 1, j) + u * v * land.at(i + 1, j + 1);
    }
  std::vector<std::uint8_t> px(side * side * 3);
  for (std::size_t p = 0; p < side * side; ++p) {
    const auto c = detail::viridis(hi > lo ? (field[p] - lo) / (hi - lo) : 0.5);
    std::copy(c.begin(), c.end(), px.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }
  // A pixel is on a contour when the level lies between it and its right or lower neighbour.
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double f = field[y * side + x];
      bool edge = false;
      for (double level : levels) {
        if (x + 1 < side && (f - level) * (field[y * side + x + 1] - level) < 0) edge = true;
        if (y + 1 < side && (f - level) * (field[(y + 1) * side + x] - level) < 0) edge = true;
      }
      if (edge) std::fill_n(px.begin() + static_cast<std::ptrdiff_t>(3 * (y * side + x)), 3, std::uint8_t{0});
    }
  return encode_png(px, side, side, 3);
}

}  // namespace hyperrecon
