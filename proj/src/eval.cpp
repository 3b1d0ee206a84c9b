#include "iris3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "iris3d/error.hpp"
#include "iris3d/runtime.hpp"

namespace iris3d::eval {

namespace {

void require_scores(const ScoreSet& s) {
    if (s.genuine.empty() || s.impostor.empty()) {
        throw InputError("score set needs both genuine and impostor scores");
    }
}

// flattened, id-sorted view of one side of the protocol
struct FlatEntry {
    const std::string* subject;
    const ProtocolEntry* entry;
};

std::vector<FlatEntry> flatten_sorted(
    const std::map<std::string, std::vector<ProtocolEntry>>& side) {
    std::vector<FlatEntry> flat;
    for (const auto& [subject, entries] : side) {
        for (const ProtocolEntry& e : entries) flat.push_back({&subject, &e});
    }
    std::sort(flat.begin(), flat.end(), [](const FlatEntry& a, const FlatEntry& b) {
        return a.entry->sample_id < b.entry->sample_id;
    });
    return flat;
}

// fraction of impostor scores >= t over the ascending-sorted array
double fmr_at(const std::vector<double>& imp_sorted, double t) {
    const auto it = std::lower_bound(imp_sorted.begin(), imp_sorted.end(), t);
    return static_cast<double>(imp_sorted.end() - it) / static_cast<double>(imp_sorted.size());
}

// fraction of genuine scores < t
double fnmr_at(const std::vector<double>& gen_sorted, double t) {
    const auto it = std::lower_bound(gen_sorted.begin(), gen_sorted.end(), t);
    return static_cast<double>(it - gen_sorted.begin()) / static_cast<double>(gen_sorted.size());
}

std::vector<double> sweep_thresholds(const ScoreSet& s) {
    std::vector<double> t;
    t.reserve(s.genuine.size() + s.impostor.size() + 2);
    t.insert(t.end(), s.genuine.begin(), s.genuine.end());
    t.insert(t.end(), s.impostor.begin(), s.impostor.end());
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    // sentinels: everything accepted / everything rejected
    t.insert(t.begin(), t.front() - 1.0);
    t.push_back(t.back() + 1.0);
    return t;
}

}  // namespace

double cosine_similarity(const std::vector<float>& probe, const std::vector<float>& gallery) {
    if (probe.size() != gallery.size() || probe.empty()) {
        throw DimensionError("cosine_similarity: vector lengths disagree");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        dot += static_cast<double>(probe[i]) * gallery[i];
        na += static_cast<double>(probe[i]) * probe[i];
        nb += static_cast<double>(gallery[i]) * gallery[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom < 1e-12) {
        throw DegenerateInputError("cosine_similarity: vector norm below 1e-12");
    }
    return std::clamp(dot / denom, -1.0, 1.0);
}

PairCounts enumerate_pairs(const Protocol& protocol) {
    if (protocol.gallery.empty() || protocol.probe.empty()) {
        throw InputError("enumerate_pairs: protocol has an empty side");
    }
    std::int64_t total_gallery = 0, total_probe = 0;
    PairCounts counts;
    for (const auto& [subject, gallery_entries] : protocol.gallery) {
        total_gallery += static_cast<std::int64_t>(gallery_entries.size());
        const auto it = protocol.probe.find(subject);
        if (it != protocol.probe.end()) {
            counts.genuine += static_cast<std::int64_t>(gallery_entries.size()) *
                              static_cast<std::int64_t>(it->second.size());
        }
    }
    for (const auto& [subject, probe_entries] : protocol.probe) {
        total_probe += static_cast<std::int64_t>(probe_entries.size());
    }
    counts.impostor = total_probe * total_gallery - counts.genuine;
    return counts;
}

ScoreSet score_all(const Protocol& protocol, std::vector<ScoredPair>* pairs) {
    apply_thread_cap();
    if (protocol.gallery.empty() || protocol.probe.empty()) {
        throw InputError("score_all: protocol has an empty side");
    }
    const auto probes = flatten_sorted(protocol.probe);
    const auto gallery = flatten_sorted(protocol.gallery);
    for (const auto& f : probes) {
        if (f.entry->embedding.empty()) {
            throw LookupError("score_all: missing embedding for probe " + f.entry->sample_id);
        }
    }
    for (const auto& f : gallery) {
        if (f.entry->embedding.empty()) {
            throw LookupError("score_all: missing embedding for gallery " + f.entry->sample_id);
        }
    }

    const std::size_t np = probes.size(), ng = gallery.size();
    std::vector<ScoredPair> rows(np * ng);
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(np); ++p) {
        for (std::size_t g = 0; g < ng; ++g) {
            ScoredPair& row = rows[static_cast<std::size_t>(p) * ng + g];
            row.probe_id = probes[static_cast<std::size_t>(p)].entry->sample_id;
            row.gallery_id = gallery[g].entry->sample_id;
            row.genuine = *probes[static_cast<std::size_t>(p)].subject == *gallery[g].subject;
            row.score = cosine_similarity(probes[static_cast<std::size_t>(p)].entry->embedding,
                                          gallery[g].entry->embedding);
        }
    }

    ScoreSet scores;
    for (const ScoredPair& row : rows) {
        (row.genuine ? scores.genuine : scores.impostor).push_back(row.score);
    }
    if (pairs) *pairs = std::move(rows);
    return scores;
}

EerResult eer(const ScoreSet& scores) {
    require_scores(scores);
    std::vector<double> gen = scores.genuine, imp = scores.impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());

    const auto thresholds = sweep_thresholds(scores);
    double prev_t = thresholds.front();
    double prev_fmr = fmr_at(imp, prev_t), prev_fnmr = fnmr_at(gen, prev_t);
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        const double t = thresholds[i];
        const double f = fmr_at(imp, t), n = fnmr_at(gen, t);
        const double prev_diff = prev_fmr - prev_fnmr;
        const double diff = f - n;
        if (diff == 0.0) return {f, t};
        if (prev_diff > 0.0 && diff < 0.0) {
            const double alpha = prev_diff / (prev_diff - diff);
            return {prev_fmr + alpha * (f - prev_fmr), prev_t + alpha * (t - prev_t)};
        }
        prev_t = t;
        prev_fmr = f;
        prev_fnmr = n;
    }
    // FMR-FNMR runs from +1 to -1 over the sweep, so a crossing always exists
    throw InputError("eer: no crossing found");
}

TmrResult tmr_at_fmr(const ScoreSet& scores, const std::vector<double>& fmr_targets) {
    require_scores(scores);
    std::vector<double> gen = scores.genuine, imp = scores.impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());
    const auto thresholds = sweep_thresholds(scores);

    TmrResult result;
    for (const double target : fmr_targets) {
        if (target > 0.0 &&
            static_cast<double>(imp.size()) < 1.0 / target) {
            result.low_impostor_warning = true;
        }
        double tmr = 0.0;
        for (const double t : thresholds) {
            if (fmr_at(imp, t) <= target) {
                tmr = 1.0 - fnmr_at(gen, t);
                break;
            }
        }
        result.tmr.push_back(tmr);
    }
    return result;
}

double crr(const Protocol& protocol) {
    const auto gallery = flatten_sorted(protocol.gallery);
    if (gallery.empty()) throw InputError("crr: empty gallery");
    const auto probes = flatten_sorted(protocol.probe);
    if (probes.empty()) throw InputError("crr: empty probe set");

    std::int64_t correct = 0;
#pragma omp parallel for schedule(static) reduction(+ : correct)
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(probes.size()); ++p) {
        const FlatEntry& probe = probes[static_cast<std::size_t>(p)];
        double best = -2.0;
        const std::string* best_subject = nullptr;
        for (const FlatEntry& g : gallery) {  // id-ascending: first max keeps smallest id
            const double s = cosine_similarity(probe.entry->embedding, g.entry->embedding);
            if (s > best) {
                best = s;
                best_subject = g.subject;
            }
        }
        if (best_subject && *best_subject == *probe.subject) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probes.size());
}

double decidability(const ScoreSet& scores) {
    if (scores.genuine.size() < 2 || scores.impostor.size() < 2) {
        throw InputError("decidability: both score arrays need >= 2 elements");
    }
    auto mean_var = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size() - 1);
        return std::pair<double, double>{mean, var};
    };
    const auto [mg, vg] = mean_var(scores.genuine);
    const auto [mi, vi] = mean_var(scores.impostor);
    if (vg == 0.0 && vi == 0.0) {
        throw DegenerateInputError("decidability: both score distributions have zero variance");
    }
    return std::abs(mg - mi) / std::sqrt((vg + vi) / 2.0);
}

DetCurve det_curve(const ScoreSet& scores) {
    require_scores(scores);
    std::vector<double> gen = scores.genuine, imp = scores.impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());
    DetCurve curve;
    for (const double t : sweep_thresholds(scores)) {
        curve.points.push_back({t, fmr_at(imp, t), fnmr_at(gen, t)});
    }
    return curve;
}

void write_scores_csv(std::ostream& out, const std::vector<ScoredPair>& pairs) {
    out << "probe_id,gallery_id,label,score\n";
    char buf[32];
    for (const ScoredPair& p : pairs) {
        std::snprintf(buf, sizeof(buf), "%.6f", p.score);
        out << p.probe_id << ',' << p.gallery_id << ',' << (p.genuine ? "genuine" : "impostor")
            << ',' << buf << '\n';
    }
}

void write_det_csv(std::ostream& out, const DetCurve& curve) {
    out << "threshold,fmr,fnmr\n";
    char buf[128];
    for (const DetPoint& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g", p.threshold, p.fmr, p.fnmr);
        out << buf << '\n';
    }
}

}  // namespace iris3d::eval
