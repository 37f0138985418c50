#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mtadv {

struct Png8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Png8& img);
Png8 read_png(const std::filesystem::path& path);

}  // namespace mtadv
