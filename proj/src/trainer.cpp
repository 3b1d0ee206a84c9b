#include "iris3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "iris3d/embedding_io.hpp"
#include "iris3d/error.hpp"
#include "iris3d/eval.hpp"
#include "iris3d/nn_ops.hpp"
#include "iris3d/optimizer.hpp"
#include "iris3d/runtime.hpp"
#include "iris3d/synth.hpp"

namespace iris3d {

using json = nlohmann::ordered_json;

std::string RunConfig::to_json_string() const {
    json j;
    j["data"] = data.string();
    j["out"] = out.string();
    j["preset"] = preset;
    if (backbone) j["backbone"] = json::parse(backbone->to_json_string());
    j["optimizer"] = {{"kind", optimizer.kind},
                      {"lr", optimizer.lr},
                      {"momentum", optimizer.momentum},
                      {"schedule", optimizer.schedule}};
    j["curriculum"] = {{"cycles", curriculum.cycles},
                       {"phase_length", curriculum.phase_length},
                       {"warmup_epochs", curriculum.warmup_epochs}};
    j["loss"] = {{"triplet_margin_init", loss.triplet_margin_init},
                 {"arc_scale", loss.arc_scale},
                 {"arc_margin", loss.arc_margin}};
    j["batch"] = {{"classes_per_batch", batch.classes_per_batch},
                  {"samples_per_class", batch.samples_per_class}};
    j["seed"] = seed;
    j["train_split"] = train_split;
    return j.dump(2);
}

RunConfig RunConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: invalid JSON: ") + e.what());
    }
    RunConfig c;
    try {
        c.data = j.value("data", std::string());
        c.out = j.value("out", std::string());
        c.preset = j.value("preset", c.preset);
        if (j.contains("backbone")) {
            c.backbone = BackboneConfig::from_json_string(j["backbone"].dump());
        }
        if (j.contains("optimizer")) {
            const auto& o = j["optimizer"];
            c.optimizer.kind = o.value("kind", c.optimizer.kind);
            c.optimizer.lr = o.value("lr", c.optimizer.lr);
            c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
            c.optimizer.schedule = o.value("schedule", c.optimizer.schedule);
        }
        if (j.contains("curriculum")) {
            const auto& q = j["curriculum"];
            c.curriculum.cycles = q.value("cycles", c.curriculum.cycles);
            c.curriculum.phase_length = q.value("phase_length", c.curriculum.phase_length);
            c.curriculum.warmup_epochs = q.value("warmup_epochs", c.curriculum.warmup_epochs);
        }
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            c.loss.triplet_margin_init = l.value("triplet_margin_init", c.loss.triplet_margin_init);
            c.loss.arc_scale = l.value("arc_scale", c.loss.arc_scale);
            c.loss.arc_margin = l.value("arc_margin", c.loss.arc_margin);
        }
        if (j.contains("batch")) {
            const auto& b = j["batch"];
            c.batch.classes_per_batch = b.value("classes_per_batch", c.batch.classes_per_batch);
            c.batch.samples_per_class = b.value("samples_per_class", c.batch.samples_per_class);
        }
        c.seed = j.value("seed", c.seed);
        c.train_split = j.value("train_split", c.train_split);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
}

namespace {

SplitKind parse_split(const std::string& name) {
    if (name == "gallery") return SplitKind::Gallery;
    if (name == "probe") return SplitKind::Probe;
    throw ConfigError("split must be 'gallery', 'probe' or 'all', got '" + name + "'");
}

// number of subjects that actually have samples in the training split
int count_classes(const DatasetIndex& index, const std::vector<const SampleRef*>& train_refs) {
    std::map<std::string, int> seen;
    for (const SampleRef* r : train_refs) seen[r->subject_id] = 1;
    (void)index;
    return static_cast<int>(seen.size());
}

}  // namespace

TrainResult run_train(const RunConfig& config) {
    apply_thread_cap();
    if (config.data.empty()) throw ConfigError("run config: 'data' is required");
    if (config.out.empty()) throw ConfigError("run config: 'out' is required");
    if (config.curriculum.warmup_epochs < 0) {
        throw ConfigError("run config: warmup_epochs must be >= 0");
    }
    if (config.train_split != "gallery" && config.train_split != "all" &&
        config.train_split != "probe") {
        throw ConfigError("run config: train_split must be 'gallery', 'probe' or 'all'");
    }

    const DatasetIndex index = load_index(config.data);
    const std::vector<const SampleRef*> train_refs =
        config.train_split == "all" ? index.all() : index.split(parse_split(config.train_split));
    if (train_refs.empty()) throw DatasetError("training split is empty");
    const int num_classes = count_classes(index, train_refs);
    if (num_classes < 2) throw DatasetError("training needs at least 2 subjects");

    BackboneConfig bb;
    if (config.backbone) {
        bb = *config.backbone;
        bb.num_classes = num_classes;
    } else if (config.preset == "desk") {
        bb = BackboneConfig::desk(num_classes);
    } else if (config.preset == "paperish") {
        bb = BackboneConfig::paperish(num_classes);
    } else {
        throw ConfigError("run config: preset must be 'desk' or 'paperish', got '" +
                          config.preset + "'");
    }
    bb.validate();

    std::filesystem::create_directories(config.out);
    {
        std::ofstream cfg(config.out / "config.json");
        if (!cfg) throw DatasetError("cannot write " + (config.out / "config.json").string());
        RunConfig resolved = config;
        resolved.backbone = bb;
        cfg << resolved.to_json_string() << "\n";
    }

    Model model(bb, config.seed);
    std::vector<Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    auto optimizer = make_optimizer(config.optimizer.kind, params,
                                    static_cast<float>(config.optimizer.lr),
                                    static_cast<float>(config.optimizer.momentum));

    const CurriculumSchedule schedule =
        CurriculumSchedule::uniform(config.curriculum.phase_length, config.curriculum.cycles);
    TripletMarginState margin_state;
    margin_state.margin = config.loss.triplet_margin_init;
    ArcFaceParams arc;
    arc.scale = config.loss.arc_scale;
    arc.margin = config.loss.arc_margin;
    arc.class_weights = model.class_weights();
    ArcFaceParams warmup = arc;
    warmup.margin = 0.0f;  // plain cross-entropy over scaled cosine logits

    const std::filesystem::path log_path = config.out / "train_log.jsonl";
    std::ofstream log(log_path);
    if (!log) throw DatasetError("cannot write " + log_path.string());

    TrainResult result;
    result.log_path = log_path;

    if (config.optimizer.schedule != "constant" && config.optimizer.schedule != "cosine") {
        throw ConfigError("run config: optimizer schedule must be 'constant' or 'cosine'");
    }

    const int total_epochs = config.curriculum.warmup_epochs + schedule.total_epochs();
    Phase last_phase = Phase::Done;
    int phase_index = -1;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        if (config.optimizer.schedule == "cosine") {
            const double t = total_epochs > 1
                                 ? static_cast<double>(epoch) / (total_epochs - 1)
                                 : 0.0;
            optimizer->set_lr(static_cast<float>(
                config.optimizer.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(3.141592653589793 * t)))));
        }
        const bool warmup_phase = epoch < config.curriculum.warmup_epochs;
        const Phase phase = warmup_phase
                                ? Phase::ArcFace
                                : schedule.next_phase(epoch - config.curriculum.warmup_epochs);
        const char* phase_label = warmup_phase ? "warmup" : phase_name(phase);
        if (!warmup_phase && phase != last_phase) {
            if (phase_index >= 0) {
                model.save(config.out /
                           ("checkpoint_phase_" + std::to_string(phase_index) + ".clre"));
            }
            ++phase_index;
            last_phase = phase;
        }

        const std::optional<SplitKind> batch_split =
            config.train_split == "all" ? std::nullopt
                                        : std::optional<SplitKind>(parse_split(config.train_split));
        const auto batches =
            make_batches(index, batch_split, config.batch.classes_per_batch,
                         config.batch.samples_per_class,
                         mix_seed(config.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& batch = batches[bi];
            Tensor input = load_batch_input(batch.refs);
            Model::Output out = model.forward(input, nn::Mode::Train);

            Tensor loss_value;
            TripletStats stats;
            bool have_stats = false;
            if (!warmup_phase && phase == Phase::Triplet) {
                loss_value =
                    triplet_loss(out.embeddings, batch.labels, margin_state.margin, &stats);
                have_stats = true;
            } else {
                loss_value = arcface_loss(out.embeddings, batch.labels,
                                          warmup_phase ? warmup : arc);
            }
            const float loss_scalar = loss_value.item();
            if (!std::isfinite(loss_scalar)) {
                throw Error("training aborted: non-finite loss at epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(bi));
            }

            optimizer->zero_grad();
            backward(loss_value, /*release_graph=*/true);
            optimizer->step();

            json line;
            line["epoch"] = epoch;
            line["batch"] = bi;
            line["phase"] = phase_label;
            line["loss"] = loss_scalar;
            line["margin"] = margin_state.margin;
            if (have_stats) {
                line["semi_hard_fraction"] = stats.fraction();
                margin_state = update_margin(margin_state, stats);
            } else {
                line["semi_hard_fraction"] = nullptr;
            }
            log << line.dump() << "\n";
            ++result.batches_run;
        }
        log.flush();
        ++result.epochs_run;
    }
    if (phase_index >= 0) {
        model.save(config.out / ("checkpoint_phase_" + std::to_string(phase_index) + ".clre"));
    }

    result.checkpoint = config.out / "checkpoint.clre";
    model.save(result.checkpoint);
    result.final_margin = margin_state.margin;
    return result;
}

void run_embed(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
               const std::filesystem::path& out, const std::string& split, int batch_size) {
    apply_thread_cap();
    Model model = Model::load(checkpoint);
    const DatasetIndex index = load_index(data);
    const std::vector<const SampleRef*> refs =
        split == "all" ? index.all() : index.split(parse_split(split));
    if (refs.empty()) throw DatasetError("embedding split is empty");
    if (batch_size < 1) throw ConfigError("embed batch size must be >= 1");

    EmbeddingFile file;
    file.dim = model.config().embedding_dim;
    NoGradGuard no_grad;
    for (std::size_t start = 0; start < refs.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(refs.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const SampleRef*> chunk(refs.begin() + static_cast<std::ptrdiff_t>(start),
                                            refs.begin() + static_cast<std::ptrdiff_t>(end));
        Tensor input = load_batch_input(chunk);
        Model::Output result = model.forward(input, nn::Mode::Infer);
        const float* emb = result.embeddings.data();
        const int dim = model.config().embedding_dim;
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::vector<float> row(emb + static_cast<std::int64_t>(i) * dim,
                                   emb + static_cast<std::int64_t>(i + 1) * dim);
            file.records.emplace_back(chunk[i]->sample_id, std::move(row));
        }
    }
    std::sort(file.records.begin(), file.records.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    save_embeddings(out, file);
}

void run_eval(const std::filesystem::path& embeddings, const std::filesystem::path& data,
              const std::filesystem::path& out_dir, const std::string& protocol) {
    apply_thread_cap();
    const EmbeddingFile file = load_embeddings(embeddings);
    const DatasetIndex index = load_index(data);
    if (protocol != "closed" && protocol != "open") {
        throw ConfigError("protocol must be 'closed' or 'open', got '" + protocol + "'");
    }

    eval::Protocol proto;
    proto.kind = protocol == "open" ? eval::Protocol::Kind::Open : eval::Protocol::Kind::Closed;
    for (const std::string& subject : index.subjects) {
        for (const SampleRef& ref : index.samples.at(subject)) {
            eval::ProtocolEntry entry;
            entry.sample_id = ref.sample_id;
            entry.embedding = file.find(ref.sample_id);
            auto& side = ref.split == SplitKind::Gallery ? proto.gallery : proto.probe;
            side[subject].push_back(std::move(entry));
        }
    }

    const eval::PairCounts counts = eval::enumerate_pairs(proto);
    std::vector<eval::ScoredPair> pairs;
    const eval::ScoreSet scores = eval::score_all(proto, &pairs);
    const eval::EerResult eer = eval::eer(scores);
    const eval::TmrResult tmr = eval::tmr_at_fmr(scores);
    const double rank1 = eval::crr(proto);
    const double di = eval::decidability(scores);
    const eval::DetCurve det = eval::det_curve(scores);

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "scores.csv");
        if (!out) throw DatasetError("cannot write scores.csv under " + out_dir.string());
        eval::write_scores_csv(out, pairs);
    }
    {
        std::ofstream out(out_dir / "det.csv");
        if (!out) throw DatasetError("cannot write det.csv under " + out_dir.string());
        eval::write_det_csv(out, det);
    }
    {
        json j;
        j["eer"] = eer.eer;
        j["eer_threshold"] = eer.threshold;
        j["tmr_at_fmr_0p1"] = tmr.tmr[0];
        j["tmr_at_fmr_0p01"] = tmr.tmr[1];
        j["crr"] = rank1;
        j["di"] = di;
        j["genuine_count"] = counts.genuine;
        j["impostor_count"] = counts.impostor;
        j["protocol"] = protocol;
        if (tmr.low_impostor_warning) j["tmr_low_impostor_warning"] = true;
        std::ofstream out(out_dir / "metrics.json");
        if (!out) throw DatasetError("cannot write metrics.json under " + out_dir.string());
        out << j.dump(2) << "\n";
    }
}

}  // namespace iris3d
