#include "iris3d/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "iris3d/error.hpp"
#include "iris3d/pgm.hpp"
#include "iris3d/runtime.hpp"

namespace iris3d {

using json = nlohmann::ordered_json;

namespace {

// fixed eye geometry shared by every synthetic sample
constexpr int kEyeWidth = 320, kEyeHeight = 240;
constexpr double kCx = 160.0, kCy = 120.0;
constexpr double kPupilR = 28.0, kIrisR = 100.0;
constexpr int kStripH = 112, kStripW = 512;
constexpr double kTwoPi = 6.283185307179586476925287;

// per-subject band-limited texture on the normalized-strip domain
struct Texture {
    std::vector<float> grid;  // kStripH x kStripW

    float sample(double t, double theta) const {
        double gc = theta / kTwoPi * kStripW;
        gc -= std::floor(gc / kStripW) * kStripW;
        const double gr = std::clamp(t, 0.0, 1.0) * (kStripH - 1);
        const int r0 = static_cast<int>(gr);
        const int r1 = std::min(r0 + 1, kStripH - 1);
        const int c0 = static_cast<int>(gc) % kStripW;
        const int c1 = (c0 + 1) % kStripW;
        const double fr = gr - r0, fc = gc - c0;
        const auto at = [this](int r, int c) {
            return static_cast<double>(grid[static_cast<std::size_t>(r) * kStripW + c]);
        };
        return static_cast<float>((1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c1)) +
                                  fr * ((1.0 - fc) * at(r1, c0) + fc * at(r1, c1)));
    }
};

Texture make_texture(Rng& rng) {
    Texture tex;
    tex.grid.assign(static_cast<std::size_t>(kStripH) * kStripW, 0.0f);

    constexpr int kTerms = 10;
    struct Term {
        int ka;
        double kr, phase, amp;
    };
    std::vector<Term> terms;
    for (int j = 0; j < kTerms; ++j) {
        terms.push_back({rng.uniform_int(1, 18), rng.uniform(0.0, 6.0), rng.uniform(0.0, kTwoPi),
                         rng.uniform(0.6, 1.0) / (1.0 + 0.25 * j)});
    }
    // low-resolution noise layer, bilinearly upsampled with angular wrap
    constexpr int kNh = 14, kNw = 64;
    std::vector<double> noise(static_cast<std::size_t>(kNh) * kNw);
    for (double& v : noise) v = rng.uniform(-1.0, 1.0);

    float lo = 1e30f, hi = -1e30f;
    for (int r = 0; r < kStripH; ++r) {
        const double t = static_cast<double>(r) / (kStripH - 1);
        for (int c = 0; c < kStripW; ++c) {
            const double theta = kTwoPi * c / kStripW;
            double v = 0.0;
            for (const Term& term : terms) {
                v += term.amp * std::sin(term.ka * theta + term.kr * 3.141592653589793 * t +
                                         term.phase);
            }
            const double nr = t * (kNh - 1);
            const double nc = static_cast<double>(c) / kStripW * kNw;
            const int r0 = static_cast<int>(nr), c0 = static_cast<int>(nc) % kNw;
            const int r1 = std::min(r0 + 1, kNh - 1), c1 = (c0 + 1) % kNw;
            const double fr = nr - r0, fc = nc - c0;
            const double nv =
                (1.0 - fr) * ((1.0 - fc) * noise[static_cast<std::size_t>(r0) * kNw + c0] +
                              fc * noise[static_cast<std::size_t>(r0) * kNw + c1]) +
                fr * ((1.0 - fc) * noise[static_cast<std::size_t>(r1) * kNw + c0] +
                      fc * noise[static_cast<std::size_t>(r1) * kNw + c1]);
            v += 0.8 * nv;
            const float fv = static_cast<float>(v);
            tex.grid[static_cast<std::size_t>(r) * kStripW + c] = fv;
            lo = std::min(lo, fv);
            hi = std::max(hi, fv);
        }
    }
    const float span = hi - lo > 1e-6f ? hi - lo : 1.0f;
    for (float& v : tex.grid) v = (v - lo) / span;
    return tex;
}

void gaussian_blur(std::vector<float>& img, int w, int h, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (double& k : kernel) k /= norm;

    std::vector<float> tmp(img.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, w - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       img[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, h - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       tmp[static_cast<std::size_t>(yy) * w + x];
            }
            img[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
        }
    }
}

std::string subject_name(int s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", s);
    return buf;
}

std::string sample_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "i%03d", i);
    return buf;
}

void write_sidecar(const std::filesystem::path& path) {
    json j;
    j["pupil"] = {{"cx", kCx}, {"cy", kCy}, {"r", kPupilR}};
    j["iris"] = {{"cx", kCx}, {"cy", kCy}, {"r", kIrisR}};
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write sidecar " + path.string());
    out << j.dump(2) << "\n";
}

Circle parse_circle(const json& j, const std::filesystem::path& file, const char* key) {
    if (!j.contains(key)) {
        throw DatasetError(file.string() + ": missing field '" + key + "'");
    }
    const json& c = j[key];
    for (const char* f : {"cx", "cy", "r"}) {
        if (!c.contains(f) || !c[f].is_number()) {
            throw DatasetError(file.string() + ": field '" + std::string(key) + "." + f +
                               "' missing or not numeric");
        }
    }
    return {c["cx"].get<double>(), c["cy"].get<double>(), c["r"].get<double>()};
}

}  // namespace

void SynthSpec::validate() const {
    if (num_subjects < 1) throw ConfigError("synth spec: num_subjects must be >= 1");
    if (samples_per_subject < 1) throw ConfigError("synth spec: samples_per_subject must be >= 1");
    if (perturb.rotation_px < 0 || perturb.rotation_px >= kStripW) {
        throw ConfigError("synth spec: rotation_px must lie in [0, 512)");
    }
    if (perturb.reflection_prob < 0.0 || perturb.reflection_prob > 1.0) {
        throw ConfigError("synth spec: reflection_prob must lie in [0, 1]");
    }
    if (perturb.occlusion_frac < 0.0 || perturb.occlusion_frac >= 1.0) {
        throw ConfigError("synth spec: occlusion_frac must lie in [0, 1)");
    }
    if (perturb.blur_sigma < 0.0) throw ConfigError("synth spec: blur_sigma must be >= 0");
}

std::vector<const SampleRef*> DatasetIndex::split(SplitKind kind) const {
    std::vector<const SampleRef*> out;
    for (const std::string& s : subjects) {
        for (const SampleRef& r : samples.at(s)) {
            if (r.split == kind) out.push_back(&r);
        }
    }
    return out;
}

std::vector<const SampleRef*> DatasetIndex::all() const {
    std::vector<const SampleRef*> out;
    for (const std::string& s : subjects) {
        for (const SampleRef& r : samples.at(s)) out.push_back(&r);
    }
    return out;
}

std::map<std::string, int> DatasetIndex::label_map() const {
    std::map<std::string, int> m;
    int next = 0;
    for (const std::string& s : subjects) m[s] = next++;
    return m;
}

DatasetIndex generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    apply_thread_cap();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw DatasetError("cannot create output directory " + out_dir.string());
    }
    {
        // fail early on unwritable targets
        const auto probe_path = out_dir / ".write_probe";
        std::ofstream probe(probe_path);
        if (!probe) throw DatasetError("output directory not writable: " + out_dir.string());
        probe.close();
        std::filesystem::remove(probe_path, ec);
    }

    std::vector<std::string> failures(static_cast<std::size_t>(spec.num_subjects));
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < spec.num_subjects; ++s) {
        try {
            const std::string sid = subject_name(s);
            const auto subject_dir = out_dir / sid;
            std::filesystem::create_directories(subject_dir);
            Rng subject_rng(mix_seed(spec.seed, static_cast<std::uint64_t>(s)));
            const Texture tex = make_texture(subject_rng);

            for (int i = 0; i < spec.samples_per_subject; ++i) {
                Rng rng(mix_seed(spec.seed, (static_cast<std::uint64_t>(s) << 20) + 0x5a5a + i));
                const int shift = spec.perturb.rotation_px > 0
                                      ? rng.uniform_int(-spec.perturb.rotation_px,
                                                        spec.perturb.rotation_px)
                                      : 0;
                const double dtheta = kTwoPi * shift / kStripW;

                std::vector<float> img(static_cast<std::size_t>(kEyeWidth) * kEyeHeight, 200.0f);
                std::vector<std::uint8_t> mask(img.size(), 0);
                for (int y = 0; y < kEyeHeight; ++y) {
                    for (int x = 0; x < kEyeWidth; ++x) {
                        const double dx = x - kCx, dy = y - kCy;
                        const double d = std::sqrt(dx * dx + dy * dy);
                        const std::size_t o = static_cast<std::size_t>(y) * kEyeWidth + x;
                        if (d < kPupilR) {
                            img[o] = 30.0f;
                        } else if (d <= kIrisR) {
                            double theta = std::atan2(dy, dx);
                            if (theta < 0.0) theta += kTwoPi;
                            const double t = (d - kPupilR) / (kIrisR - kPupilR);
                            img[o] = 40.0f + 175.0f * tex.sample(t, theta + dtheta);
                            mask[o] = 255;
                        }
                    }
                }

                if (rng.uniform() < spec.perturb.reflection_prob) {
                    const int count = rng.uniform_int(1, 2);
                    for (int k = 0; k < count; ++k) {
                        const double phi = rng.uniform(0.0, kTwoPi);
                        const double rad = rng.uniform(kPupilR + 8.0, kIrisR - 8.0);
                        const double ex = kCx + rad * std::cos(phi);
                        const double ey = kCy + rad * std::sin(phi);
                        const double ax = rng.uniform(3.0, 8.0), ay = rng.uniform(2.0, 5.0);
                        const int x0 = std::max(0, static_cast<int>(ex - ax - 1));
                        const int x1 = std::min(kEyeWidth - 1, static_cast<int>(ex + ax + 1));
                        const int y0 = std::max(0, static_cast<int>(ey - ay - 1));
                        const int y1 = std::min(kEyeHeight - 1, static_cast<int>(ey + ay + 1));
                        for (int y = y0; y <= y1; ++y) {
                            for (int x = x0; x <= x1; ++x) {
                                const double u = (x - ex) / ax, v = (y - ey) / ay;
                                if (u * u + v * v <= 1.0) {
                                    const std::size_t o =
                                        static_cast<std::size_t>(y) * kEyeWidth + x;
                                    img[o] = 255.0f;
                                    mask[o] = 0;
                                }
                            }
                        }
                    }
                }

                if (spec.perturb.occlusion_frac > 0.0) {
                    const double arc = kTwoPi * spec.perturb.occlusion_frac;
                    const double start = rng.uniform(0.0, kTwoPi);
                    for (int y = 0; y < kEyeHeight; ++y) {
                        for (int x = 0; x < kEyeWidth; ++x) {
                            const std::size_t o = static_cast<std::size_t>(y) * kEyeWidth + x;
                            if (!mask[o]) continue;
                            double theta = std::atan2(y - kCy, x - kCx);
                            if (theta < 0.0) theta += kTwoPi;
                            double rel = theta - start;
                            if (rel < 0.0) rel += kTwoPi;
                            if (rel < arc) mask[o] = 0;
                        }
                    }
                }

                gaussian_blur(img, kEyeWidth, kEyeHeight, spec.perturb.blur_sigma);

                PgmImage out_img;
                out_img.width = kEyeWidth;
                out_img.height = kEyeHeight;
                out_img.pixels.resize(img.size());
                for (std::size_t p = 0; p < img.size(); ++p) {
                    out_img.pixels[p] =
                        static_cast<std::uint8_t>(std::clamp(std::lround(img[p]), 0l, 255l));
                }
                PgmImage out_mask;
                out_mask.width = kEyeWidth;
                out_mask.height = kEyeHeight;
                out_mask.pixels = mask;

                const std::string name = sample_name(i);
                write_pgm(subject_dir / (name + ".pgm"), out_img);
                write_pgm(subject_dir / (name + ".mask.pgm"), out_mask);
                write_sidecar(subject_dir / (name + ".json"));
            }
        } catch (const std::exception& e) {
            failures[static_cast<std::size_t>(s)] = e.what();
        }
    }
    for (const std::string& f : failures) {
        if (!f.empty()) throw DatasetError(f);
    }

    // per-subject 50-50 split, ids sorted, extra sample to the gallery
    json index;
    index["seed"] = spec.seed;
    index["subjects"] = json::array();
    for (int s = 0; s < spec.num_subjects; ++s) {
        json subj;
        subj["id"] = subject_name(s);
        json gallery = json::array(), probe = json::array();
        const int gallery_count = (spec.samples_per_subject + 1) / 2;
        for (int i = 0; i < spec.samples_per_subject; ++i) {
            (i < gallery_count ? gallery : probe).push_back(sample_name(i));
        }
        subj["gallery"] = gallery;
        subj["probe"] = probe;
        index["subjects"].push_back(subj);
    }
    {
        std::ofstream out(out_dir / "index.json");
        if (!out) throw DatasetError("cannot write " + (out_dir / "index.json").string());
        out << index.dump(2) << "\n";
    }
    return load_index(out_dir);
}

DatasetIndex load_index(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) {
        throw DatasetError("dataset root is not a directory: " + root.string());
    }

    // split assignment from index.json when present
    std::map<std::string, std::map<std::string, SplitKind>> declared_split;
    const auto index_path = root / "index.json";
    if (std::filesystem::exists(index_path)) {
        std::ifstream in(index_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw DatasetError(index_path.string() + ": " + e.what());
        }
        if (!j.contains("subjects") || !j["subjects"].is_array()) {
            throw DatasetError(index_path.string() + ": missing 'subjects' array");
        }
        for (const auto& subj : j["subjects"]) {
            if (!subj.contains("id")) {
                throw DatasetError(index_path.string() + ": subject entry missing 'id'");
            }
            const std::string sid = subj["id"].get<std::string>();
            for (const auto& name : subj.value("gallery", json::array())) {
                declared_split[sid][name.get<std::string>()] = SplitKind::Gallery;
            }
            for (const auto& name : subj.value("probe", json::array())) {
                declared_split[sid][name.get<std::string>()] = SplitKind::Probe;
            }
        }
    }

    DatasetIndex index;
    index.root = root;
    std::vector<std::filesystem::path> subject_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory()) subject_dirs.push_back(entry.path());
    }
    std::sort(subject_dirs.begin(), subject_dirs.end());

    for (const auto& dir : subject_dirs) {
        const std::string sid = dir.filename().string();
        std::vector<std::string> names;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            const std::string fname = entry.path().filename().string();
            if (fname.size() > 4 && fname.ends_with(".pgm") && !fname.ends_with(".mask.pgm")) {
                names.push_back(fname.substr(0, fname.size() - 4));
            }
        }
        if (names.empty()) continue;
        std::sort(names.begin(), names.end());

        std::vector<SampleRef> refs;
        for (std::size_t i = 0; i < names.size(); ++i) {
            const std::string& name = names[i];
            SampleRef ref;
            ref.subject_id = sid;
            ref.sample_id = sid + "/" + name;
            ref.image = dir / (name + ".pgm");
            ref.mask = dir / (name + ".mask.pgm");
            ref.sidecar = dir / (name + ".json");
            if (!std::filesystem::exists(ref.mask)) {
                throw DatasetError(ref.sample_id + ": missing mask file " + ref.mask.string());
            }
            if (!std::filesystem::exists(ref.sidecar)) {
                throw DatasetError(ref.sample_id + ": missing sidecar " + ref.sidecar.string());
            }
            // sidecar must parse and carry both circles
            {
                std::ifstream in(ref.sidecar);
                json j;
                try {
                    in >> j;
                } catch (const json::exception& e) {
                    throw DatasetError(ref.sidecar.string() + ": " + e.what());
                }
                parse_circle(j, ref.sidecar, "pupil");
                parse_circle(j, ref.sidecar, "iris");
            }
            const auto subj_it = declared_split.find(sid);
            if (subj_it != declared_split.end()) {
                const auto split_it = subj_it->second.find(name);
                if (split_it == subj_it->second.end()) {
                    throw DatasetError(index_path.string() + ": sample " + ref.sample_id +
                                       " not listed in any split");
                }
                ref.split = split_it->second;
            } else {
                ref.split = i < (names.size() + 1) / 2 ? SplitKind::Gallery : SplitKind::Probe;
            }
            refs.push_back(std::move(ref));
        }
        index.subjects.push_back(sid);
        index.samples[sid] = std::move(refs);
    }
    if (index.subjects.empty()) {
        throw DatasetError("no subjects found under " + root.string());
    }
    return index;
}

IrisSample load_sample(const SampleRef& ref) {
    const PgmImage img = read_pgm(ref.image);
    const PgmImage mask = read_pgm(ref.mask);
    if (img.width != mask.width || img.height != mask.height) {
        throw DatasetError(ref.sample_id + ": mask extents differ from image extents");
    }
    IrisSample sample;
    sample.width = img.width;
    sample.height = img.height;
    sample.image = img.pixels;
    sample.mask.resize(mask.pixels.size());
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
        sample.mask[i] = mask.pixels[i] >= 128 ? 255 : 0;
    }
    std::ifstream in(ref.sidecar);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DatasetError(ref.sidecar.string() + ": " + e.what());
    }
    sample.pupil = parse_circle(j, ref.sidecar, "pupil");
    sample.iris = parse_circle(j, ref.sidecar, "iris");
    sample.subject_id = ref.subject_id;
    sample.sample_id = ref.sample_id;
    sample.validate();
    return sample;
}

Tensor load_batch_input(const std::vector<const SampleRef*>& refs) {
    apply_thread_cap();
    std::vector<PatchStack> stacks(refs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(refs.size()); ++i) {
        const IrisSample sample = load_sample(*refs[static_cast<std::size_t>(i)]);
        const NormalizedIris normalized = rubber_sheet_normalize(sample);
        stacks[static_cast<std::size_t>(i)] = make_patch_stack(compose_channels(normalized));
    }
    return patch_stacks_to_batch(stacks);
}

std::vector<Batch> make_batches(const DatasetIndex& index, std::optional<SplitKind> split,
                                int classes_per_batch, int samples_per_class, std::uint64_t seed) {
    if (classes_per_batch < 2) throw ConfigError("make_batches: classes_per_batch must be >= 2");
    if (samples_per_class < 2) throw ConfigError("make_batches: samples_per_class must be >= 2");

    const auto labels = index.label_map();
    struct ClassPool {
        std::string subject;
        std::vector<const SampleRef*> refs;
        std::vector<const SampleRef*> queue;  // drained over the epoch
    };
    std::vector<ClassPool> pools;
    for (const std::string& s : index.subjects) {
        ClassPool pool;
        pool.subject = s;
        for (const SampleRef& r : index.samples.at(s)) {
            if (!split || r.split == *split) pool.refs.push_back(&r);
        }
        if (!pool.refs.empty()) pools.push_back(std::move(pool));
    }
    if (static_cast<int>(pools.size()) < classes_per_batch) {
        throw ConfigError("make_batches: only " + std::to_string(pools.size()) +
                          " classes available, need " + std::to_string(classes_per_batch));
    }

    Rng rng(mix_seed(seed, 0xba7c4e5ull));
    std::vector<int> order(pools.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    for (ClassPool& pool : pools) {
        pool.queue = pool.refs;
        rng.shuffle(pool.queue);
    }

    auto any_pending = [&pools] {
        for (const ClassPool& p : pools) {
            if (!p.queue.empty()) return true;
        }
        return false;
    };

    std::vector<Batch> batches;
    std::size_t cursor = 0;
    while (any_pending()) {
        Batch batch;
        for (int c = 0; c < classes_per_batch; ++c) {
            ClassPool& pool = pools[static_cast<std::size_t>(order[cursor % order.size()])];
            ++cursor;
            const int label = labels.at(pool.subject);
            for (int k = 0; k < samples_per_class; ++k) {
                const SampleRef* ref;
                if (!pool.queue.empty()) {
                    ref = pool.queue.back();
                    pool.queue.pop_back();
                } else {
                    // class exhausted: re-draw so the batch keeps its shape
                    ref = pool.refs[static_cast<std::size_t>(
                        rng.uniform_int(0, static_cast<int>(pool.refs.size()) - 1))];
                }
                batch.refs.push_back(ref);
                batch.labels.push_back(label);
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace iris3d
