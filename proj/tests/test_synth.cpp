#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iris3d/error.hpp"
#include "iris3d/synth.hpp"

using iris3d::DatasetError;
using iris3d::DatasetIndex;
using iris3d::SampleRef;
using iris3d::SplitKind;
using iris3d::SynthSpec;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("iris3d_synth_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

SynthSpec small_spec(std::uint64_t seed = 5) {
    SynthSpec spec;
    spec.num_subjects = 3;
    spec.samples_per_subject = 4;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("generation is byte deterministic") {
    const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
    iris3d::generate(small_spec(), a);
    iris3d::generate(small_spec(), b);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        CHECK(slurp(entry.path()) == slurp(b / rel));
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("zero perturbations make a subject's samples identical") {
    const fs::path dir = fresh_dir("flat");
    SynthSpec spec = small_spec();
    spec.perturb = {0, 0.0, 0.0, 0.0};
    iris3d::generate(spec, dir);
    const auto first = slurp(dir / "s000" / "i000.pgm");
    for (int i = 1; i < spec.samples_per_subject; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "i%03d.pgm", i);
        CHECK(slurp(dir / "s000" / name) == first);
    }
    fs::remove_all(dir);
}

TEST_CASE("split arithmetic gives a per-subject 50-50 partition") {
    const fs::path dir = fresh_dir("split");
    SynthSpec spec;
    spec.num_subjects = 8;
    spec.samples_per_subject = 6;
    spec.seed = 1;
    const DatasetIndex index = iris3d::generate(spec, dir);
    REQUIRE(index.subjects.size() == 8);
    for (const std::string& s : index.subjects) {
        int gallery = 0, probe = 0;
        for (const auto& ref : index.samples.at(s)) {
            (ref.split == SplitKind::Gallery ? gallery : probe) += 1;
        }
        CHECK(gallery == 3);
        CHECK(probe == 3);
    }
    CHECK(index.split(SplitKind::Gallery).size() == 24);
    CHECK(index.split(SplitKind::Probe).size() == 24);
    fs::remove_all(dir);
}

TEST_CASE("generate round-trips through load_index") {
    const fs::path dir = fresh_dir("roundtrip");
    const DatasetIndex written = iris3d::generate(small_spec(), dir);
    const DatasetIndex loaded = iris3d::load_index(dir);
    REQUIRE(written.subjects == loaded.subjects);
    for (const std::string& s : written.subjects) {
        const auto& wa = written.samples.at(s);
        const auto& lb = loaded.samples.at(s);
        REQUIRE(wa.size() == lb.size());
        for (std::size_t i = 0; i < wa.size(); ++i) {
            CHECK(wa[i].sample_id == lb[i].sample_id);
            CHECK(wa[i].split == lb[i].split);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("load_index rejects an empty directory") {
    const fs::path dir = fresh_dir("empty");
    CHECK_THROWS_AS(iris3d::load_index(dir), DatasetError);
    fs::remove_all(dir);
}

TEST_CASE("load_index names the corrupted sidecar") {
    const fs::path dir = fresh_dir("corrupt");
    iris3d::generate(small_spec(), dir);
    {
        std::ofstream bad(dir / "s001" / "i002.json");
        bad << "{\"pupil\": {\"cx\": 1.0}}";
    }
    try {
        iris3d::load_index(dir);
        FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("i002.json") != std::string::npos);
        CHECK(msg.find("pupil") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("generated samples satisfy the geometry invariants") {
    const fs::path dir = fresh_dir("valid");
    const DatasetIndex index = iris3d::generate(small_spec(), dir);
    for (const SampleRef* ref : index.all()) {
        const iris3d::IrisSample sample = iris3d::load_sample(*ref);  // validates internally
        CHECK(sample.pupil.r < sample.iris.r);
        bool mask_binary = true;
        for (std::uint8_t m : sample.mask) {
            if (m != 0 && m != 255) mask_binary = false;
        }
        CHECK(mask_binary);
    }
    fs::remove_all(dir);
}

TEST_CASE("genuine pairs sit closer in raw strip space than impostor pairs") {
    const fs::path dir = fresh_dir("sep");
    SynthSpec spec;
    spec.num_subjects = 4;
    spec.samples_per_subject = 4;
    spec.seed = 9;
    const DatasetIndex index = iris3d::generate(spec, dir);

    std::vector<std::vector<float>> strips;
    std::vector<int> owner;
    const auto labels = index.label_map();
    for (const SampleRef* ref : index.all()) {
        const auto normalized = iris3d::rubber_sheet_normalize(iris3d::load_sample(*ref));
        strips.push_back(normalized.iris_channel);
        owner.push_back(labels.at(ref->subject_id));
    }
    double genuine_sum = 0.0, impostor_sum = 0.0;
    int genuine_n = 0, impostor_n = 0;
    for (std::size_t i = 0; i < strips.size(); ++i) {
        for (std::size_t j = i + 1; j < strips.size(); ++j) {
            double l2 = 0.0;
            for (std::size_t k = 0; k < strips[i].size(); ++k) {
                const double d = strips[i][k] - strips[j][k];
                l2 += d * d;
            }
            l2 = std::sqrt(l2 / strips[i].size());
            if (owner[i] == owner[j]) {
                genuine_sum += l2;
                ++genuine_n;
            } else {
                impostor_sum += l2;
                ++impostor_n;
            }
        }
    }
    CHECK(genuine_sum / genuine_n < impostor_sum / impostor_n);
    fs::remove_all(dir);
}

TEST_CASE("batch plans are class balanced, covering and seeded") {
    const fs::path dir = fresh_dir("batches");
    SynthSpec spec;
    spec.num_subjects = 4;
    spec.samples_per_subject = 6;
    spec.seed = 2;
    const DatasetIndex index = iris3d::generate(spec, dir);

    const auto batches = iris3d::make_batches(index, SplitKind::Gallery, 4, 2, 77);
    std::map<std::string, int> seen;
    for (const auto& batch : batches) {
        REQUIRE(batch.refs.size() == 8);
        REQUIRE(batch.labels.size() == 8);
        std::map<int, int> per_class;
        for (int l : batch.labels) per_class[l] += 1;
        CHECK(per_class.size() == 4);
        for (const auto& [label, count] : per_class) CHECK(count == 2);
        // 4 classes x 2 samples admit at least 4 anchor-positive ordered pairs
        int pairs = 0;
        for (const auto& [label, count] : per_class) pairs += count * (count - 1);
        CHECK(pairs >= 4);
        for (const auto* ref : batch.refs) seen[ref->sample_id] += 1;
    }
    for (const auto* ref : index.split(SplitKind::Gallery)) {
        CHECK(seen[ref->sample_id] >= 1);  // epoch coverage
    }

    const auto again = iris3d::make_batches(index, SplitKind::Gallery, 4, 2, 77);
    REQUIRE(again.size() == batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
        for (std::size_t i = 0; i < batches[b].refs.size(); ++i) {
            CHECK(batches[b].refs[i]->sample_id == again[b].refs[i]->sample_id);
        }
    }

    CHECK_THROWS_AS(iris3d::make_batches(index, SplitKind::Gallery, 5, 2, 1),
                    iris3d::ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("spec validation bounds the perturbations") {
    SynthSpec spec = small_spec();
    spec.perturb.rotation_px = 512;
    CHECK_THROWS_AS(spec.validate(), iris3d::ConfigError);
    spec = small_spec();
    spec.perturb.occlusion_frac = 1.0;
    CHECK_THROWS_AS(spec.validate(), iris3d::ConfigError);
    spec = small_spec();
    spec.perturb.reflection_prob = 1.5;
    CHECK_THROWS_AS(spec.validate(), iris3d::ConfigError);
}
