#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace herdid {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const RgbImage&) const = default;
};

/// Decodes PNG/JPEG/BMP/... bytes. Throws Error(kUndecodableImage).
RgbImage decode_image(std::string_view bytes);
RgbImage load_image(const std::filesystem::path& path);
std::string encode_png(const RgbImage& image);
void save_png(const std::filesystem::path& path, const RgbImage& image);

/// Lowercase hex SHA-256 of `bytes`; used as content-addressed image id.
std::string sha256_hex(std::string_view bytes);

/// File extension (with dot) guessed from magic bytes, ".img" otherwise.
std::string sniff_image_extension(std::string_view bytes);

}  // namespace herdid
