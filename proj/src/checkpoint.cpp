#include "iris3d/checkpoint.hpp"

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

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw DatasetError("truncated checkpoint " + path.string());
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, const float* data, std::size_t count) {
    // float32 little-endian; byte-swap would go here on big-endian targets
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write checkpoint " + path.string());
    out.write("CLRE", 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const NamedArray& a : arrays) {
        put_u32(out, static_cast<std::uint32_t>(a.name.size()));
        out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
        for (int e : a.shape) put_u32(out, static_cast<std::uint32_t>(e));
        if (static_cast<std::int64_t>(a.data.size()) != shape_numel(a.shape)) {
            throw UsageError("checkpoint array '" + a.name + "' data does not match its shape");
        }
        put_f32(out, a.data.data(), a.data.size());
    }
    if (!out) throw DatasetError("short write to checkpoint " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "CLRE", 4) != 0) {
        throw DatasetError("bad checkpoint magic in " + path.string());
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kCheckpointVersion) {
        throw DatasetError("unsupported checkpoint version " + std::to_string(version) + " in " +
                           path.string());
    }
    const std::uint32_t count = get_u32(in, path);
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        const std::uint32_t name_len = get_u32(in, path);
        a.name.resize(name_len);
        in.read(a.name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            throw DatasetError("truncated checkpoint " + path.string());
        }
        const std::uint32_t rank = get_u32(in, path);
        a.shape.resize(rank);
        for (std::uint32_t r = 0; r < rank; ++r) {
            a.shape[r] = static_cast<int>(get_u32(in, path));
        }
        const std::int64_t numel = shape_numel(a.shape);
        a.data.resize(static_cast<std::size_t>(numel));
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(numel * 4));
        if (in.gcount() != static_cast<std::streamsize>(numel * 4)) {
            throw DatasetError("truncated checkpoint payload in " + path.string());
        }
        arrays.push_back(std::move(a));
    }
    return arrays;
}

}  // namespace iris3d
