#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "iris3d/checkpoint.hpp"
#include "iris3d/embedding_io.hpp"
#include "iris3d/error.hpp"
#include "iris3d/pgm.hpp"
#include "iris3d/trainer.hpp"

using iris3d::DatasetError;
using iris3d::EmbeddingFile;
using iris3d::LookupError;
using iris3d::NamedArray;
using iris3d::RunConfig;

namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
    return fs::temp_directory_path() / ("iris3d_io_" + name);
}

}  // namespace

TEST_CASE("checkpoint round trip and header layout") {
    const fs::path path = tmp_file("ckpt.clre");
    std::vector<NamedArray> arrays = {
        {"alpha", {2, 3}, {1, 2, 3, 4, 5, 6}},
        {"beta/gamma", {4}, {0.5f, -0.5f, 2.0f, 0.0f}},
    };
    iris3d::save_checkpoint(path, arrays);

    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "CLRE");
    unsigned char version[4];
    in.read(reinterpret_cast<char*>(version), 4);
    CHECK(version[0] == 1);  // little-endian u32

    const auto loaded = iris3d::load_checkpoint(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].name == "alpha");
    CHECK(loaded[0].shape == iris3d::Shape{2, 3});
    CHECK(loaded[0].data == arrays[0].data);
    CHECK(loaded[1].name == "beta/gamma");
    CHECK(loaded[1].data == arrays[1].data);
    fs::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign files") {
    const fs::path path = tmp_file("bad.clre");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE late";
    }
    CHECK_THROWS_AS(iris3d::load_checkpoint(path), DatasetError);
    fs::remove(path);
}

TEST_CASE("embedding file round trip and lookup") {
    const fs::path path = tmp_file("emb.irem");
    EmbeddingFile file;
    file.dim = 3;
    file.records = {{"s0/a", {1.0f, 0.0f, 0.0f}}, {"s1/b", {0.0f, 1.0f, 0.0f}}};
    iris3d::save_embeddings(path, file);

    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "IREM");

    const EmbeddingFile loaded = iris3d::load_embeddings(path);
    CHECK(loaded.dim == 3);
    REQUIRE(loaded.records.size() == 2);
    CHECK(loaded.find("s0/a") == std::vector<float>{1.0f, 0.0f, 0.0f});
    CHECK_THROWS_AS(loaded.find("s9/z"), LookupError);
    fs::remove(path);
}

TEST_CASE("pgm round trip") {
    const fs::path path = tmp_file("img.pgm");
    iris3d::PgmImage img;
    img.width = 5;
    img.height = 3;
    img.pixels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 255};
    iris3d::write_pgm(path, img);
    const iris3d::PgmImage back = iris3d::read_pgm(path);
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.pixels == img.pixels);
    fs::remove(path);
}

TEST_CASE("pgm reader rejects other formats") {
    const fs::path path = tmp_file("ascii.pgm");
    {
        std::ofstream out(path);
        out << "P2\n2 2\n255\n0 1 2 3\n";
    }
    CHECK_THROWS_AS(iris3d::read_pgm(path), DatasetError);
    fs::remove(path);
}

TEST_CASE("run config survives a json round trip") {
    RunConfig cfg;
    cfg.data = "/tmp/data";
    cfg.out = "/tmp/run";
    cfg.preset = "paperish";
    cfg.optimizer.kind = "sgd-momentum";
    cfg.optimizer.lr = 0.01;
    cfg.curriculum.cycles = 2;
    cfg.curriculum.phase_length = 3;
    cfg.curriculum.warmup_epochs = 1;
    cfg.loss.arc_margin = 0.35f;
    cfg.batch.classes_per_batch = 6;
    cfg.seed = 123;
    cfg.train_split = "all";

    const RunConfig back = RunConfig::from_json_string(cfg.to_json_string());
    CHECK(back.data == cfg.data);
    CHECK(back.preset == cfg.preset);
    CHECK(back.optimizer.kind == cfg.optimizer.kind);
    CHECK(back.optimizer.lr == cfg.optimizer.lr);
    CHECK(back.curriculum.cycles == 2);
    CHECK(back.curriculum.phase_length == 3);
    CHECK(back.curriculum.warmup_epochs == 1);
    CHECK(back.loss.arc_margin == 0.35f);
    CHECK(back.batch.classes_per_batch == 6);
    CHECK(back.seed == 123);
    CHECK(back.train_split == "all");

    CHECK_THROWS_AS(RunConfig::from_json_string("not json"), iris3d::ConfigError);
}
