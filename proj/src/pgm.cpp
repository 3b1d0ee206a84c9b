#include "iris3d/pgm.hpp"

#include <fstream>
#include <string>

#include "iris3d/error.hpp"

namespace iris3d {

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string next_token(std::istream& in, const std::filesystem::path& path) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw DatasetError("truncated PGM header in " + path.string());
    return tok;
}

}  // namespace

PgmImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + path.string());
    const std::string magic = next_token(in, path);
    if (magic != "P5") {
        throw DatasetError("unsupported PGM magic '" + magic + "' in " + path.string());
    }
    PgmImage img;
    try {
        img.width = std::stoi(next_token(in, path));
        img.height = std::stoi(next_token(in, path));
        const int maxval = std::stoi(next_token(in, path));
        if (maxval != 255) {
            throw DatasetError("PGM maxval must be 255 in " + path.string());
        }
    } catch (const std::invalid_argument&) {
        throw DatasetError("malformed PGM header in " + path.string());
    }
    if (img.width <= 0 || img.height <= 0) {
        throw DatasetError("invalid PGM extents in " + path.string());
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw DatasetError("truncated PGM payload in " + path.string());
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const PgmImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw DatasetError("short write to " + path.string());
}

}  // namespace iris3d
