#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iris3d/tensor.hpp"

namespace iris3d {

// Named-array container file. Layout: magic "CLRE", format version (u32 LE),
// array count (u32 LE); per array: name length (u32 LE), UTF-8 name, rank
// (u32 LE), extents (u32 LE each), raw float32 LE payload.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace iris3d
