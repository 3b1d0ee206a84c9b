#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace iris3d {

// Embedding container. Layout: magic "IREM", version u32 LE, count u32 LE,
// dim u32 LE; per record: id length u16 LE, UTF-8 id, dim float32 LE values.
struct EmbeddingFile {
    int dim = 0;
    std::vector<std::pair<std::string, std::vector<float>>> records;  // id-sorted

    const std::vector<float>& find(const std::string& id) const;  // LookupError when absent
};

inline constexpr std::uint32_t kEmbeddingVersion = 1;

void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile load_embeddings(const std::filesystem::path& path);

}  // namespace iris3d
