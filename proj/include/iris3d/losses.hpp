#pragma once

#include <vector>

#include "iris3d/tensor.hpp"

namespace iris3d {

struct TripletStats {
    int semi_hard_count = 0;
    int anchor_positive_pairs = 0;
    double fraction() const {
        return anchor_positive_pairs > 0
                   ? static_cast<double>(semi_hard_count) / anchor_positive_pairs
                   : 0.0;
    }
};

// Adaptive triplet margin: starts at 0.5, steps by 0.05 up to 1.5 whenever
// the semi-hard fraction stays under 10% for three consecutive batches.
struct TripletMarginState {
    static constexpr float kInitial = 0.5f;
    static constexpr float kCap = 1.5f;
    static constexpr float kStep = 0.05f;
    static constexpr int kStreakLength = 3;

    float margin = kInitial;
    int low_streak = 0;
};

// Margin-hinge loss over mined triplets, squared Euclidean distances.
// For every ordered anchor-positive pair the negative is the hardest
// semi-hard one (d_ap^2 < d_an^2 < d_ap^2 + margin, smallest d_an^2); when
// none exists the hardest negative overall is used. Ties break toward the
// lowest batch index. Loss is the mean hinge over all selected triplets.
Tensor triplet_loss(const Tensor& embeddings, const std::vector<int>& labels, float margin,
                    TripletStats* stats = nullptr);

// Pure fold over the per-batch stats stream.
TripletMarginState update_margin(TripletMarginState state, const TripletStats& stats);

struct ArcFaceParams {
    float scale = 30.0f;
    float margin = 0.2f;  // additive angular margin, radians
    Tensor class_weights;  // [num_classes, embedding_dim]; rows are normalized internally
};

// Additive-angular-margin softmax: cosine logits from unit-norm embeddings
// and class weights, cos(theta_y + m) at the target class, scaled by s,
// then mean cross-entropy.
Tensor arcface_loss(const Tensor& embeddings, const std::vector<int>& labels,
                    const ArcFaceParams& params);

enum class Phase { Triplet, ArcFace, Done };

const char* phase_name(Phase p);

// Alternating triplet/arcface phases, triplet first, for a fixed number of
// cycles.
struct CurriculumSchedule {
    std::vector<int> phase_lengths;  // one entry per phase, 2*cycles entries
    int cycles = 3;

    static CurriculumSchedule uniform(int phase_length, int cycles = 3);
    Phase next_phase(int completed_epochs) const;
    int total_epochs() const;
};

}  // namespace iris3d
