#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace iris3d::eval {

// Labeled similarity-score collections. Metric accumulation runs in 64-bit.
struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

struct ProtocolEntry {
    std::string sample_id;  // globally unique, "<subject>/<name>"
    std::vector<float> embedding;
};

// Gallery/probe split; the sample sets are disjoint by construction.
struct Protocol {
    enum class Kind { Closed, Open };
    Kind kind = Kind::Closed;
    std::map<std::string, std::vector<ProtocolEntry>> gallery;  // subject -> samples
    std::map<std::string, std::vector<ProtocolEntry>> probe;
};

double cosine_similarity(const std::vector<float>& probe, const std::vector<float>& gallery);

struct PairCounts {
    std::int64_t genuine = 0;
    std::int64_t impostor = 0;
};
PairCounts enumerate_pairs(const Protocol& protocol);

struct ScoredPair {
    std::string probe_id, gallery_id;
    bool genuine = false;
    double score = 0.0;
};

// Scores every probe x gallery pair; `pairs`, when given, receives the rows
// ordered by probe id then gallery id.
ScoreSet score_all(const Protocol& protocol, std::vector<ScoredPair>* pairs = nullptr);

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// Threshold sweep over all distinct scores with FMR(t) = fraction of
// impostor scores >= t and FNMR(t) = fraction of genuine scores < t; the
// crossing is linearly interpolated when the rates never meet exactly.
EerResult eer(const ScoreSet& scores);

struct TmrResult {
    std::vector<double> tmr;  // one per target
    bool low_impostor_warning = false;
};
TmrResult tmr_at_fmr(const ScoreSet& scores, const std::vector<double>& fmr_targets = {0.001,
                                                                                       0.0001});

// Rank-1 identification rate; similarity ties break toward the
// lexicographically smallest gallery sample id.
double crr(const Protocol& protocol);

// d' = |mu_g - mu_i| / sqrt((var_g + var_i) / 2), unbiased sample variances.
double decidability(const ScoreSet& scores);

struct DetPoint {
    double threshold = 0.0, fmr = 0.0, fnmr = 0.0;
};
struct DetCurve {
    std::vector<DetPoint> points;  // thresholds ascending
};
DetCurve det_curve(const ScoreSet& scores);

// header: probe_id,gallery_id,label,score (6 decimal digits)
void write_scores_csv(std::ostream& out, const std::vector<ScoredPair>& pairs);
// header: threshold,fmr,fnmr
void write_det_csv(std::ostream& out, const DetCurve& curve);

}  // namespace iris3d::eval
