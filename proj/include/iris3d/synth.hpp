#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iris3d/preproc.hpp"
#include "iris3d/tensor.hpp"

namespace iris3d {

struct Perturbations {
    int rotation_px = 6;           // max circular shift along the 512-wide angular axis
    double blur_sigma = 0.6;       // Gaussian defocus on the eye image
    double reflection_prob = 0.25; // chance of a saturated specular ellipse
    double occlusion_frac = 0.06;  // angular fraction masked out (eyelash-style)
};

struct SynthSpec {
    int num_subjects = 8;
    int samples_per_subject = 6;
    std::uint64_t seed = 1;
    Perturbations perturb;
    void validate() const;
};

enum class SplitKind { Gallery, Probe };

struct SampleRef {
    std::string subject_id;
    std::string sample_id;  // global, "<subject>/<name>"
    std::filesystem::path image, mask, sidecar;
    SplitKind split = SplitKind::Gallery;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<std::string> subjects;                       // sorted
    std::map<std::string, std::vector<SampleRef>> samples;   // subject -> refs sorted by id
    std::vector<const SampleRef*> split(SplitKind kind) const;
    std::vector<const SampleRef*> all() const;
    std::map<std::string, int> label_map() const;  // sorted subject -> class index
};

// Writes eye images, masks and circle sidecars for seeded per-subject
// band-limited textures mapped onto a fixed annulus, plus index.json with
// the per-subject 50-50 gallery/probe split. Identical specs produce
// identical bytes.
DatasetIndex generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Scans <root>/<subject>/<name>.pgm + .mask.pgm + .json, validates sidecars,
// and reads the split from index.json (deriving a 50-50 split when absent).
DatasetIndex load_index(const std::filesystem::path& root);

IrisSample load_sample(const SampleRef& ref);

// Preprocessed network input for a list of samples.
Tensor load_batch_input(const std::vector<const SampleRef*>& refs);

struct Batch {
    std::vector<const SampleRef*> refs;
    std::vector<int> labels;
};

// Class-balanced batch plan: every batch holds exactly classes_per_batch
// classes x samples_per_class samples, and a full epoch covers every sample
// of the split (or of the whole index when split is empty) at least once.
// Deterministic in (index, seed).
std::vector<Batch> make_batches(const DatasetIndex& index, std::optional<SplitKind> split,
                                int classes_per_batch, int samples_per_class, std::uint64_t seed);

}  // namespace iris3d
