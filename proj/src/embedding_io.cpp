#include "iris3d/embedding_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "iris3d/error.hpp"

namespace iris3d {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw DatasetError("truncated embedding file " + path.string());
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t get_u16(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (in.gcount() != 2) throw DatasetError("truncated embedding file " + path.string());
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

const std::vector<float>& EmbeddingFile::find(const std::string& id) const {
    const auto it = std::lower_bound(
        records.begin(), records.end(), id,
        [](const auto& rec, const std::string& key) { return rec.first < key; });
    if (it == records.end() || it->first != id) {
        throw LookupError("no embedding stored for sample '" + id + "'");
    }
    return it->second;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write embeddings " + path.string());
    out.write("IREM", 4);
    put_u32(out, kEmbeddingVersion);
    put_u32(out, static_cast<std::uint32_t>(file.records.size()));
    put_u32(out, static_cast<std::uint32_t>(file.dim));
    for (const auto& [id, values] : file.records) {
        if (static_cast<int>(values.size()) != file.dim) {
            throw UsageError("embedding '" + id + "' length does not match dim");
        }
        put_u16(out, static_cast<std::uint16_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * 4));
    }
    if (!out) throw DatasetError("short write to " + path.string());
}

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open embeddings " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "IREM", 4) != 0) {
        throw DatasetError("bad embedding magic in " + path.string());
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kEmbeddingVersion) {
        throw DatasetError("unsupported embedding version in " + path.string());
    }
    const std::uint32_t count = get_u32(in, path);
    EmbeddingFile file;
    file.dim = static_cast<int>(get_u32(in, path));
    file.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = get_u16(in, path);
        std::string id(len, '\0');
        in.read(id.data(), len);
        std::vector<float> values(static_cast<std::size_t>(file.dim));
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * 4));
        if (!in) throw DatasetError("truncated embedding file " + path.string());
        file.records.emplace_back(std::move(id), std::move(values));
    }
    std::sort(file.records.begin(), file.records.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return file;
}

}  // namespace iris3d
