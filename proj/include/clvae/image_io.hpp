#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace clvae {

// 8-bit image as read from / written to PNG, row-major, interleaved channels.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> data;
};

// Reads a PNG converted to the requested channel count (1 or 3).
RawImage read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const RawImage& image);

}  // namespace clvae
