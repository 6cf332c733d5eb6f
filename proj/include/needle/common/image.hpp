#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace needle {

/// Tightly packed 8-bit RGB raster, row-major.
struct ImagePixels {
  uint32_t width = 0;
  uint32_t height = 0;
  std::vector<uint8_t> data;

  ImagePixels() = default;
  ImagePixels(uint32_t w, uint32_t h) : width(w), height(h), data(size_t{w} * h * 3, 0) {}

  bool valid() const noexcept {
    return width > 0 && height > 0 && data.size() == size_t{width} * height * 3;
  }
  size_t pixelCount() const noexcept { return size_t{width} * height; }

  uint8_t* at(uint32_t x, uint32_t y) noexcept { return data.data() + (size_t{y} * width + x) * 3; }
  const uint8_t* at(uint32_t x, uint32_t y) const noexcept {
    return data.data() + (size_t{y} * width + x) * 3;
  }

  bool operator==(const ImagePixels&) const = default;
};

// PNG and JPEG decoding share this seam. Throws Error(Corrupt) on undecodable
// input and Error(Io) when the file cannot be read.
ImagePixels decodeImage(std::span<const uint8_t> bytes);
ImagePixels readImageFile(const std::filesystem::path& path);

std::vector<uint8_t> encodePng(const ImagePixels& image);
void writePngFile(const std::filesystem::path& path, const ImagePixels& image);

std::vector<uint8_t> readFileBytes(const std::filesystem::path& path);

}  // namespace needle
