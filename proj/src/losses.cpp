#include "iris3d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iris3d/error.hpp"
#include "iris3d/nn_ops.hpp"

namespace iris3d {

namespace {

// squared Euclidean distance, float accumulation in index order so that an
// independent scorer using the same formula reproduces it bit for bit
float sq_dist(const float* a, const float* b, int d) {
    float acc = 0.0f;
    for (int i = 0; i < d; ++i) {
        const float diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

struct MinedTriplet {
    int anchor, positive, negative;
};

}  // namespace

Tensor triplet_loss(const Tensor& embeddings, const std::vector<int>& labels, float margin,
                    TripletStats* stats) {
    if (embeddings.rank() != 2) {
        throw DimensionError("triplet_loss embeddings must be [N,d], got " +
                             shape_str(embeddings.shape()));
    }
    const int N = embeddings.dim(0), d = embeddings.dim(1);
    if (static_cast<int>(labels.size()) != N) {
        throw DimensionError("triplet_loss: label count " + std::to_string(labels.size()) +
                             " != batch size " + std::to_string(N));
    }
    bool multi_class = false;
    for (int i = 1; i < N && !multi_class; ++i) multi_class = labels[i] != labels[0];
    if (!multi_class) {
        throw MiningError("triplet_loss: batch holds a single class; use class-balanced batching");
    }

    const float* e = embeddings.data();
    std::vector<float> d2(static_cast<std::size_t>(N) * N, 0.0f);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            d2[static_cast<std::size_t>(i) * N + j] =
                sq_dist(e + static_cast<std::int64_t>(i) * d, e + static_cast<std::int64_t>(j) * d, d);
        }
    }

    TripletStats local;
    std::vector<MinedTriplet> triplets;
    double loss_acc = 0.0;
    for (int a = 0; a < N; ++a) {
        for (int p = 0; p < N; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            ++local.anchor_positive_pairs;
            const float dap = d2[static_cast<std::size_t>(a) * N + p];
            int semi = -1, hardest = -1;
            float semi_best = 0.0f, hard_best = 0.0f;
            for (int n = 0; n < N; ++n) {
                if (labels[n] == labels[a]) continue;
                const float dan = d2[static_cast<std::size_t>(a) * N + n];
                if (hardest < 0 || dan < hard_best) {
                    hardest = n;
                    hard_best = dan;
                }
                if (dap < dan && dan < dap + margin && (semi < 0 || dan < semi_best)) {
                    semi = n;
                    semi_best = dan;
                }
            }
            const int neg = semi >= 0 ? semi : hardest;
            if (semi >= 0) ++local.semi_hard_count;
            triplets.push_back({a, p, neg});
            const float hinge = dap - d2[static_cast<std::size_t>(a) * N + neg] + margin;
            if (hinge > 0.0f) loss_acc += hinge;
        }
    }
    if (local.anchor_positive_pairs == 0) {
        throw MiningError("triplet_loss: no anchor-positive pairs in batch");
    }
    if (stats) *stats = local;

    const float loss_value = static_cast<float>(loss_acc / local.anchor_positive_pairs);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = {1};
    impl->data = {loss_value};
    impl->op = "triplet_loss";
    const bool record = grad_enabled() && embeddings.requires_grad();
    impl->requires_grad = record;
    if (record) {
        impl->parents.push_back(embeddings.impl());
        TensorImpl* self = impl.get();
        TensorImplPtr ei = embeddings.impl();
        const int pairs = local.anchor_positive_pairs;
        auto d2_shared = std::make_shared<std::vector<float>>(std::move(d2));
        auto trips = std::make_shared<std::vector<MinedTriplet>>(std::move(triplets));
        impl->backward_fn = [self, ei, d2_shared, trips, pairs, margin, N, d] {
            if (!ei->requires_grad) return;
            const float g = self->grad[0] / static_cast<float>(pairs);
            float* de = ei->ensure_grad().data();
            const float* e = ei->data.data();
            const auto& dist = *d2_shared;
            for (const MinedTriplet& t : *trips) {
                const float hinge = dist[static_cast<std::size_t>(t.anchor) * N + t.positive] -
                                    dist[static_cast<std::size_t>(t.anchor) * N + t.negative] +
                                    margin;
                if (hinge <= 0.0f) continue;
                const float* ea = e + static_cast<std::int64_t>(t.anchor) * d;
                const float* ep = e + static_cast<std::int64_t>(t.positive) * d;
                const float* en = e + static_cast<std::int64_t>(t.negative) * d;
                float* da = de + static_cast<std::int64_t>(t.anchor) * d;
                float* dp = de + static_cast<std::int64_t>(t.positive) * d;
                float* dn = de + static_cast<std::int64_t>(t.negative) * d;
                for (int i = 0; i < d; ++i) {
                    da[i] += 2.0f * g * (en[i] - ep[i]);
                    dp[i] += -2.0f * g * (ea[i] - ep[i]);
                    dn[i] += 2.0f * g * (ea[i] - en[i]);
                }
            }
        };
    }
    return Tensor(impl);
}

TripletMarginState update_margin(TripletMarginState state, const TripletStats& stats) {
    // integer comparison keeps the 10% threshold exact
    const bool low =
        static_cast<std::int64_t>(stats.semi_hard_count) * 10 < stats.anchor_positive_pairs;
    if (low) {
        ++state.low_streak;
    } else {
        state.low_streak = 0;
    }
    if (state.low_streak >= TripletMarginState::kStreakLength) {
        state.margin = std::min(state.margin + TripletMarginState::kStep, TripletMarginState::kCap);
        state.low_streak = 0;
    }
    return state;
}

namespace {

// mean cross-entropy over scaled cosine logits with the additive angular
// margin applied at the target class; backward goes to the cosine matrix
Tensor arcface_from_cos(const Tensor& cosines, const std::vector<int>& labels, float s, float m) {
    const int N = cosines.dim(0), C = cosines.dim(1);
    const float* cv = cosines.data();

    const float cos_m = std::cos(m), sin_m = std::sin(m);
    constexpr float kClamp = 1.0f - 1e-7f;

    // probs stored for the backward pass
    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(N) * C);
    auto dphi = std::make_shared<std::vector<float>>(N);  // d cos(theta+m) / d cos(theta)
    double loss_acc = 0.0;
    std::vector<float> logits(static_cast<std::size_t>(C));
    for (int n = 0; n < N; ++n) {
        const int y = labels[n];
        const float* row = cv + static_cast<std::int64_t>(n) * C;
        for (int c = 0; c < C; ++c) logits[static_cast<std::size_t>(c)] = s * row[c];
        const float cy_raw = row[y];
        const float cy = std::clamp(cy_raw, -kClamp, kClamp);
        const float sy = std::sqrt(std::max(0.0f, 1.0f - cy * cy));
        const float phi = cy * cos_m - sy * sin_m;
        logits[static_cast<std::size_t>(y)] = s * phi;
        (*dphi)[n] = (cy_raw > -kClamp && cy_raw < kClamp) ? (cos_m + cy / sy * sin_m) : 0.0f;

        float maxv = logits[0];
        for (int c = 1; c < C; ++c) maxv = std::max(maxv, logits[static_cast<std::size_t>(c)]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(logits[static_cast<std::size_t>(c)] - maxv));
        for (int c = 0; c < C; ++c) {
            (*probs)[static_cast<std::size_t>(n) * C + c] = static_cast<float>(
                std::exp(static_cast<double>(logits[static_cast<std::size_t>(c)] - maxv)) / denom);
        }
        loss_acc -= static_cast<double>(logits[static_cast<std::size_t>(y)] - maxv) - std::log(denom);
    }

    auto impl = std::make_shared<TensorImpl>();
    impl->shape = {1};
    impl->data = {static_cast<float>(loss_acc / N)};
    impl->op = "arcface";
    const bool record = grad_enabled() && cosines.requires_grad();
    impl->requires_grad = record;
    if (record) {
        impl->parents.push_back(cosines.impl());
        TensorImpl* self = impl.get();
        TensorImplPtr ci = cosines.impl();
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        impl->backward_fn = [self, ci, probs, dphi, labels_copy, s, N, C] {
            if (!ci->requires_grad) return;
            const float g = self->grad[0] / static_cast<float>(N);
            float* dc = ci->ensure_grad().data();
            for (int n = 0; n < N; ++n) {
                const int y = (*labels_copy)[n];
                const float* pr = probs->data() + static_cast<std::int64_t>(n) * C;
                float* dr = dc + static_cast<std::int64_t>(n) * C;
                for (int c = 0; c < C; ++c) {
                    const float dlogit = g * s * (pr[c] - (c == y ? 1.0f : 0.0f));
                    dr[c] += c == y ? dlogit * (*dphi)[n] : dlogit;
                }
            }
        };
    }
    return Tensor(impl);
}

}  // namespace

Tensor arcface_loss(const Tensor& embeddings, const std::vector<int>& labels,
                    const ArcFaceParams& params) {
    if (embeddings.rank() != 2) {
        throw DimensionError("arcface_loss embeddings must be [N,d], got " +
                             shape_str(embeddings.shape()));
    }
    if (!params.class_weights.defined() || params.class_weights.rank() != 2) {
        throw ConfigError("arcface_loss: class_weights must be a [num_classes, dim] tensor");
    }
    if (params.class_weights.dim(1) != embeddings.dim(1)) {
        throw DimensionError("arcface_loss: embedding dim " + std::to_string(embeddings.dim(1)) +
                             " != class weight dim " + std::to_string(params.class_weights.dim(1)));
    }
    if (!(params.scale > 0.0f)) throw ConfigError("arcface_loss: scale must be positive");
    if (params.margin < 0.0f || params.margin >= 1.5707963f) {
        throw ConfigError("arcface_loss: margin must lie in [0, pi/2)");
    }
    const int N = embeddings.dim(0), C = params.class_weights.dim(0);
    if (static_cast<int>(labels.size()) != N) {
        throw DimensionError("arcface_loss: label count != batch size");
    }
    for (int i = 0; i < N; ++i) {
        if (labels[i] < 0 || labels[i] >= C) {
            throw LabelError("arcface_loss: label " + std::to_string(labels[i]) +
                             " out of range for " + std::to_string(C) + " classes");
        }
    }
    Tensor w_norm = nn::l2_normalize(params.class_weights);
    Tensor cosines = nn::matmul_nt(embeddings, w_norm);
    return arcface_from_cos(cosines, labels, params.scale, params.margin);
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Triplet: return "triplet";
        case Phase::ArcFace: return "arcface";
        default: return "done";
    }
}

CurriculumSchedule CurriculumSchedule::uniform(int phase_length, int cycles) {
    if (phase_length < 1) throw ConfigError("curriculum: phase_length must be >= 1");
    if (cycles < 1) throw ConfigError("curriculum: cycles must be >= 1");
    CurriculumSchedule s;
    s.cycles = cycles;
    s.phase_lengths.assign(static_cast<std::size_t>(2 * cycles), phase_length);
    return s;
}

Phase CurriculumSchedule::next_phase(int completed_epochs) const {
    if (completed_epochs < 0) throw UsageError("curriculum: negative epoch count");
    int acc = 0;
    for (std::size_t i = 0; i < phase_lengths.size(); ++i) {
        acc += phase_lengths[i];
        if (completed_epochs < acc) return i % 2 == 0 ? Phase::Triplet : Phase::ArcFace;
    }
    return Phase::Done;
}

int CurriculumSchedule::total_epochs() const {
    int acc = 0;
    for (int l : phase_lengths) acc += l;
    return acc;
}

}  // namespace iris3d
