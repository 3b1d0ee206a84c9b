#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "iris3d/embedding_io.hpp"
#include "iris3d/error.hpp"
#include "iris3d/eval.hpp"
#include "iris3d/synth.hpp"
#include "iris3d/trainer.hpp"

namespace {

int cmd_synth(const iris3d::SynthSpec& spec, const std::string& out_dir) {
    const iris3d::DatasetIndex index = iris3d::generate(spec, out_dir);
    std::size_t total = 0;
    for (const auto& [subject, refs] : index.samples) total += refs.size();
    std::cout << "wrote " << total << " samples for " << index.subjects.size()
              << " subjects under " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D iris matching pipeline: synthesize, train, embed, match, evaluate"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic iris dataset");
    iris3d::SynthSpec spec;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--subjects", spec.num_subjects, "number of subjects");
    synth->add_option("--samples", spec.samples_per_subject, "samples per subject");
    synth->add_option("--seed", spec.seed, "generator seed");
    synth->add_option("--rotation-px", spec.perturb.rotation_px,
                      "max circular shift along the angular axis");
    synth->add_option("--blur-sigma", spec.perturb.blur_sigma, "Gaussian blur sigma");
    synth->add_option("--reflection-prob", spec.perturb.reflection_prob,
                      "per-sample specular reflection probability");
    synth->add_option("--occlusion-frac", spec.perturb.occlusion_frac,
                      "angular fraction masked out");

    // train
    auto* train = app.add_subcommand("train", "run the curriculum training loop");
    iris3d::RunConfig run;
    std::string config_file;
    std::string data_dir, out_dir;
    train->add_option("--config", config_file, "JSON run config (flags override it)");
    train->add_option("--data", data_dir, "dataset directory");
    train->add_option("--out", out_dir, "run directory");
    std::string preset;
    train->add_option("--preset", preset, "backbone preset: desk or paperish");
    int cycles = -1, phase_length = -1, warmup = -1, cpb = -1, spc = -1;
    double lr = -1.0;
    std::string opt_kind;
    std::uint64_t seed = UINT64_MAX;
    double arc_s = -1.0, arc_m = -1.0, trip_m = -1.0;
    std::string train_split;
    train->add_option("--cycles", cycles, "curriculum cycles");
    train->add_option("--phase-length", phase_length, "epochs per curriculum phase");
    train->add_option("--warmup-epochs", warmup, "cross-entropy warm-up epochs");
    train->add_option("--optimizer", opt_kind, "adam or sgd-momentum");
    train->add_option("--lr", lr, "learning rate");
    std::string lr_schedule;
    train->add_option("--schedule", lr_schedule, "lr schedule: constant or cosine");
    train->add_option("--classes-per-batch", cpb, "classes per batch");
    train->add_option("--samples-per-class", spc, "samples per class per batch");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--arc-s", arc_s, "arcface scale");
    train->add_option("--arc-m", arc_m, "arcface angular margin");
    train->add_option("--triplet-margin", trip_m, "initial triplet margin");
    train->add_option("--train-split", train_split, "gallery, probe or all");

    // embed
    auto* embed = app.add_subcommand("embed", "extract embeddings with a checkpoint");
    std::string ckpt, emb_data, emb_out, emb_split = "all";
    int emb_batch = 4;
    embed->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    embed->add_option("--data", emb_data, "dataset directory")->required();
    embed->add_option("--out", emb_out, "output embedding file")->required();
    embed->add_option("--split", emb_split, "all, gallery or probe");
    embed->add_option("--batch-size", emb_batch, "inference batch size");

    // match
    auto* match = app.add_subcommand("match", "cosine score of two stored embeddings");
    std::string match_file, id_a, id_b;
    match->add_option("--embeddings", match_file, "embedding file")->required();
    match->add_option("--a", id_a, "first sample id")->required();
    match->add_option("--b", id_b, "second sample id")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "gallery/probe matching and metrics");
    std::string eval_emb, eval_data, eval_out, eval_protocol = "closed";
    eval_cmd->add_option("--embeddings", eval_emb, "embedding file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "output directory")->required();
    eval_cmd->add_option("--protocol", eval_protocol, "closed or open");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(spec, synth_out);
        }
        if (train->parsed()) {
            if (!config_file.empty()) {
                std::ifstream in(config_file);
                if (!in) throw iris3d::ConfigError("cannot open config file " + config_file);
                std::string text((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
                run = iris3d::RunConfig::from_json_string(text);
            }
            if (!data_dir.empty()) run.data = data_dir;
            if (!out_dir.empty()) run.out = out_dir;
            if (!preset.empty()) run.preset = preset;
            if (cycles >= 0) run.curriculum.cycles = cycles;
            if (phase_length >= 0) run.curriculum.phase_length = phase_length;
            if (warmup >= 0) run.curriculum.warmup_epochs = warmup;
            if (!opt_kind.empty()) run.optimizer.kind = opt_kind;
            if (lr > 0.0) run.optimizer.lr = lr;
            if (!lr_schedule.empty()) run.optimizer.schedule = lr_schedule;
            if (cpb >= 0) run.batch.classes_per_batch = cpb;
            if (spc >= 0) run.batch.samples_per_class = spc;
            if (seed != UINT64_MAX) run.seed = seed;
            if (arc_s > 0.0) run.loss.arc_scale = static_cast<float>(arc_s);
            if (arc_m >= 0.0) run.loss.arc_margin = static_cast<float>(arc_m);
            if (trip_m > 0.0) run.loss.triplet_margin_init = static_cast<float>(trip_m);
            if (!train_split.empty()) run.train_split = train_split;

            const iris3d::TrainResult result = iris3d::run_train(run);
            std::cout << "trained " << result.epochs_run << " epochs (" << result.batches_run
                      << " batches), final margin " << result.final_margin << "\n"
                      << "checkpoint: " << result.checkpoint.string() << "\n";
            return 0;
        }
        if (embed->parsed()) {
            iris3d::run_embed(ckpt, emb_data, emb_out, emb_split, emb_batch);
            std::cout << "embeddings written to " << emb_out << "\n";
            return 0;
        }
        if (match->parsed()) {
            const iris3d::EmbeddingFile file = iris3d::load_embeddings(match_file);
            const double score = iris3d::eval::cosine_similarity(file.find(id_a), file.find(id_b));
            std::printf("%.6f\n", score);
            return 0;
        }
        if (eval_cmd->parsed()) {
            iris3d::run_eval(eval_emb, eval_data, eval_out, eval_protocol);
            std::cout << "metrics written to " << eval_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
