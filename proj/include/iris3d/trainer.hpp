#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "iris3d/backbone.hpp"
#include "iris3d/losses.hpp"

namespace iris3d {

struct OptimizerConfig {
    std::string kind = "adam";  // or "sgd-momentum"
    double lr = 1e-3;
    double momentum = 0.9;
    std::string schedule = "constant";  // or "cosine" (decay over the whole run)
};

struct CurriculumConfig {
    int cycles = 3;
    int phase_length = 5;   // epochs per phase
    int warmup_epochs = 0;  // cross-entropy warm-up before the curriculum
};

struct LossConfig {
    float triplet_margin_init = 0.5f;
    float arc_scale = 30.0f;
    float arc_margin = 0.2f;
};

struct BatchStructure {
    int classes_per_batch = 4;
    int samples_per_class = 2;
};

// Resolved run settings; every field has a default and the resolved value is
// written verbatim into the run directory.
struct RunConfig {
    std::filesystem::path data;
    std::filesystem::path out;
    std::string preset = "desk";  // or "paperish"
    std::optional<BackboneConfig> backbone;  // explicit config wins over preset
    OptimizerConfig optimizer;
    CurriculumConfig curriculum;
    LossConfig loss;
    BatchStructure batch;
    std::uint64_t seed = 42;
    std::string train_split = "gallery";  // or "all"

    std::string to_json_string() const;
    static RunConfig from_json_string(const std::string& text);
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::filesystem::path log_path;
    int epochs_run = 0;
    int batches_run = 0;
    float final_margin = 0.0f;
};

// Optional warm-up then the alternating triplet/arcface curriculum. Writes
// per-batch JSON log lines, per-phase checkpoints and the final checkpoint.
TrainResult run_train(const RunConfig& config);

// One unit-norm embedding per sample of the chosen split ("all", "gallery",
// "probe"), written in id order.
void run_embed(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
               const std::filesystem::path& out, const std::string& split = "all",
               int batch_size = 4);

// Gallery/probe matching over the dataset split; writes metrics.json,
// scores.csv and det.csv into out_dir.
void run_eval(const std::filesystem::path& embeddings, const std::filesystem::path& data,
              const std::filesystem::path& out_dir, const std::string& protocol = "closed");

}  // namespace iris3d
