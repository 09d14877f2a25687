#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

namespace specklenn {

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

inline void png_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()),
                                                 static_cast<uInt>(body.size()))));
}

}  // namespace detail

/// 8-bit grayscale PNG of a row-major width x height image.
inline std::string encode_png_gray8(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height) {
  if (pixels.size() != width * height || width == 0 || height == 0) {
    throw std::invalid_argument("encode_png_gray8: pixel count does not match dimensions");
  }
  std::string raw;
  raw.reserve((width + 1) * height);
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(pixels.data() + y * width), width);
  }
  uLongf cap = compressBound(static_cast<uLong>(raw.size()));
  std::string z(cap, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &cap, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_SPEED) != Z_OK) {
    throw std::runtime_error("encode_png_gray8: zlib compression failed");
  }
  z.resize(cap);
  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit gray, deflate, no filter, no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", "");
  return out;
}

/// log(1 + v) scaled so the brightest pixel maps to 255; negatives clamp to 0.
inline std::vector<std::uint8_t> log_preview(std::span<const float> frame) {
  double top = 0;
  for (float v : frame) top = std::max(top, std::log1p(std::max(0.0, static_cast<double>(v))));
  std::vector<std::uint8_t> out(frame.size(), 0);
  if (top <= 0) return out;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double v = std::log1p(std::max(0.0, static_cast<double>(frame[i]))) / top;
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return out;
}

}  // namespace specklenn
