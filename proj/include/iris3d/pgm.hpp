#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace iris3d {

struct PgmImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

// binary (P5) 8-bit grayscale
PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const PgmImage& img);

}  // namespace iris3d
