#include <doctest.h>

#include <cmath>

#include "iris3d/error.hpp"
#include "iris3d/losses.hpp"
#include "iris3d/nn_ops.hpp"
#include "iris3d/runtime.hpp"
#include "oracles.hpp"

using iris3d::ArcFaceParams;
using iris3d::CurriculumSchedule;
using iris3d::LabelError;
using iris3d::MiningError;
using iris3d::Phase;
using iris3d::Rng;
using iris3d::Tensor;
using iris3d::TripletMarginState;
using iris3d::TripletStats;
namespace nn = iris3d::nn;

namespace {

Tensor unit_rows(int n, int d, std::uint64_t seed, bool requires_grad = false) {
    Rng rng(seed);
    std::vector<float> v(static_cast<std::size_t>(n) * d);
    for (float& x : v) x = static_cast<float>(rng.normal());
    Tensor raw = Tensor::from_vector({n, d}, std::move(v));
    Tensor normed = nn::l2_normalize(raw);
    Tensor out = Tensor::from_vector({n, d}, normed.vec(), requires_grad);
    return out;
}

// pairwise squared distances far from every mining decision boundary, so
// finite differences stay on one side of each selection
bool mining_stable(const Tensor& emb, const std::vector<int>& labels, float margin) {
    const int n = emb.dim(0), d = emb.dim(1);
    const auto d2 = [&](int i, int j) {
        float acc = 0.0f;
        for (int k = 0; k < d; ++k) {
            const float diff = emb.data()[i * d + k] - emb.data()[j * d + k];
            acc += diff * diff;
        }
        return acc;
    };
    constexpr float kGap = 0.03f;
    for (int a = 0; a < n; ++a) {
        for (int p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            const float dap = d2(a, p);
            for (int neg = 0; neg < n; ++neg) {
                if (labels[neg] == labels[a]) continue;
                const float dan = d2(a, neg);
                if (std::abs(dan - dap) < kGap) return false;
                if (std::abs(dan - (dap + margin)) < kGap) return false;
                for (int other = neg + 1; other < n; ++other) {
                    if (labels[other] == labels[a]) continue;
                    if (std::abs(dan - d2(a, other)) < kGap) return false;
                }
            }
        }
    }
    return true;
}

}  // namespace

TEST_CASE("triplet loss on identical embeddings equals the margin") {
    Tensor emb = Tensor::from_vector({4, 3}, std::vector<float>(12, 0.5f));
    TripletStats stats;
    Tensor loss = iris3d::triplet_loss(emb, {0, 0, 1, 1}, 0.5f, &stats);
    CHECK(loss.item() == 0.5f);
    CHECK(stats.anchor_positive_pairs == 4);
    CHECK(stats.semi_hard_count == 0);  // the window (dap, dap+m) is empty at distance 0
}

TEST_CASE("triplet hinge stays inactive for easy negatives") {
    // d_ap^2 = 0.04, d_an^2 = 2.25 for the first anchor, margin 0.5
    Tensor emb = Tensor::from_vector({3, 1}, {0.0f, 0.2f, 1.5f});
    Tensor loss = iris3d::triplet_loss(emb, {0, 0, 1}, 0.5f);
    CHECK(loss.item() == 0.0f);
}

TEST_CASE("triplet loss matches the exhaustive oracle exactly") {
    for (std::uint64_t seed : {7u, 8u, 9u, 10u, 11u}) {
        Tensor emb = unit_rows(8, 16, seed);
        const std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};
        for (float margin : {0.5f, 1.0f}) {
            TripletStats stats;
            Tensor loss = iris3d::triplet_loss(emb, labels, margin, &stats);
            const auto ref =
                oracle::triplet_brute_force(emb.vec(), 8, 16, labels, margin);
            CHECK(loss.item() == static_cast<float>(ref.loss));
            CHECK(stats.semi_hard_count == ref.semi_hard_count);
            CHECK(stats.anchor_positive_pairs == ref.anchor_positive_pairs);
        }
    }
}

TEST_CASE("triplet loss rejects single-class batches") {
    Tensor emb = unit_rows(4, 8, 3);
    CHECK_THROWS_AS(iris3d::triplet_loss(emb, {2, 2, 2, 2}, 0.5f), MiningError);
}

TEST_CASE("triplet loss is non-negative") {
    for (std::uint64_t seed = 50; seed < 62; ++seed) {
        Tensor emb = unit_rows(6, 8, seed);
        Tensor loss = iris3d::triplet_loss(emb, {0, 0, 1, 1, 2, 2}, 0.7f);
        CHECK(loss.item() >= 0.0f);
    }
}

TEST_CASE("triplet gradients match finite differences") {
    int checked = 0;
    std::uint64_t seed = 300;
    const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    while (checked < 5 && seed < 400) {
        Tensor emb = unit_rows(6, 6, seed, /*requires_grad=*/true);
        if (!mining_stable(emb, labels, 0.6f)) {
            ++seed;
            continue;
        }
        const auto make_loss = [&] { return iris3d::triplet_loss(emb, labels, 0.6f); };
        CHECK(oracle::grad_check({emb}, make_loss, {1e-3, 0, seed}) <= 1e-3);
        ++checked;
        ++seed;
    }
    REQUIRE(checked == 5);
}

TEST_CASE("margin update follows the streak rule") {
    TripletMarginState state;
    const TripletStats low{3, 100};    // 3% semi-hard
    const TripletStats high{20, 100};  // 20%

    SUBCASE("three consecutive low batches step the margin") {
        state = iris3d::update_margin(state, low);
        CHECK(state.margin == 0.5f);
        CHECK(state.low_streak == 1);
        state = iris3d::update_margin(state, low);
        state = iris3d::update_margin(state, low);
        CHECK(state.margin == doctest::Approx(0.55f));
        CHECK(state.low_streak == 0);
    }

    SUBCASE("a high batch resets the streak") {
        state = iris3d::update_margin(state, low);
        state = iris3d::update_margin(state, low);
        state = iris3d::update_margin(state, high);
        CHECK(state.low_streak == 0);
        CHECK(state.margin == 0.5f);
    }

    SUBCASE("margin saturates at the cap") {
        for (int i = 0; i < 70; ++i) state = iris3d::update_margin(state, low);
        CHECK(state.margin == 1.5f);
        for (int i = 0; i < 6; ++i) state = iris3d::update_margin(state, low);
        CHECK(state.margin == 1.5f);
    }

    SUBCASE("exactly 10% does not count as low") {
        const TripletStats boundary{10, 100};
        for (int i = 0; i < 9; ++i) {
            state = iris3d::update_margin(state, boundary);
            CHECK(state.low_streak == 0);
        }
        CHECK(state.margin == 0.5f);
    }
}

TEST_CASE("margin trajectory is a pure fold") {
    std::vector<TripletStats> stream;
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        stream.push_back({rng.uniform_int(0, 30), 100});
    }
    TripletMarginState a, b;
    std::vector<float> traj_a, traj_b;
    for (const auto& s : stream) {
        a = iris3d::update_margin(a, s);
        traj_a.push_back(a.margin);
    }
    for (const auto& s : stream) {
        b = iris3d::update_margin(b, s);
        traj_b.push_back(b.margin);
    }
    CHECK(traj_a == traj_b);
    for (std::size_t i = 1; i < traj_a.size(); ++i) {
        CHECK(traj_a[i] >= traj_a[i - 1]);
        CHECK(traj_a[i] >= 0.5f);
        CHECK(traj_a[i] <= 1.5f);
    }
}

TEST_CASE("arcface with zero margin reduces to cross-entropy on cosine logits") {
    for (std::uint64_t seed : {21u, 22u, 23u, 24u, 25u}) {
        const int n = 5, d = 8, c = 4;
        Tensor emb = unit_rows(n, d, seed);
        Tensor weights = unit_rows(c, d, seed + 1000);
        std::vector<int> labels;
        Rng rng(seed);
        for (int i = 0; i < n; ++i) labels.push_back(rng.uniform_int(0, c - 1));

        for (float s : {1.0f, 30.0f}) {
            ArcFaceParams params{s, 0.0f, weights};
            const double loss = iris3d::arcface_loss(emb, labels, params).item();

            // independent double-precision cross-entropy over the same logits
            double expected = 0.0;
            for (int i = 0; i < n; ++i) {
                std::vector<double> logits(c);
                for (int j = 0; j < c; ++j) {
                    double dot = 0.0, wn = 0.0;
                    for (int k = 0; k < d; ++k) {
                        dot += static_cast<double>(emb.data()[i * d + k]) * weights.data()[j * d + k];
                        wn += static_cast<double>(weights.data()[j * d + k]) *
                              weights.data()[j * d + k];
                    }
                    logits[static_cast<std::size_t>(j)] = s * dot / std::sqrt(wn);
                }
                double denom = 0.0;
                for (double l : logits) denom += std::exp(l);
                expected -= std::log(std::exp(logits[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]) / denom);
            }
            expected /= n;
            CHECK(loss == doctest::Approx(expected).epsilon(1e-6));
        }
    }
}

TEST_CASE("arcface over a single class is exactly zero") {
    Tensor emb = unit_rows(3, 4, 31);
    Tensor weights = unit_rows(1, 4, 32);
    ArcFaceParams params{30.0f, 0.2f, weights};
    CHECK(iris3d::arcface_loss(emb, {0, 0, 0}, params).item() == 0.0f);
}

TEST_CASE("arcface matches a direct two-sample evaluation") {
    Tensor emb = Tensor::from_vector({2, 2}, {1.0f, 0.0f, 0.6f, 0.8f});
    Tensor weights = Tensor::from_vector({2, 2}, {0.8f, 0.6f, -0.6f, 0.8f});
    const std::vector<int> labels = {0, 1};
    const double s = 4.0, m = 0.3;
    ArcFaceParams params{static_cast<float>(s), static_cast<float>(m), weights};
    const double loss = iris3d::arcface_loss(emb, labels, params).item();

    // scalar evaluation straight from the margin-softmax definition
    const double cos00 = 0.8, cos01 = -0.6;
    const double cos10 = 0.6 * 0.8 + 0.8 * 0.6, cos11 = 0.6 * -0.6 + 0.8 * 0.8;
    const double phi0 = std::cos(std::acos(cos00) + m);
    const double phi1 = std::cos(std::acos(cos11) + m);
    const double l0 = -std::log(std::exp(s * phi0) / (std::exp(s * phi0) + std::exp(s * cos01)));
    const double l1 = -std::log(std::exp(s * phi1) / (std::exp(s * phi1) + std::exp(s * cos10)));
    CHECK(loss == doctest::Approx(0.5 * (l0 + l1)).epsilon(1e-5));
}

TEST_CASE("arcface is monotone in the margin away from saturation") {
    for (std::uint64_t seed : {41u, 42u, 43u}) {
        Tensor emb = unit_rows(4, 8, seed);
        Tensor weights = unit_rows(3, 8, seed + 10);
        const std::vector<int> labels = {0, 1, 2, 1};
        double prev = -1.0;
        for (float m : {0.0f, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f}) {
            ArcFaceParams params{8.0f, m, weights};
            const double loss = iris3d::arcface_loss(emb, labels, params).item();
            CHECK(loss >= prev - 1e-6);
            prev = loss;
        }
    }
}

TEST_CASE("arcface rejects out-of-range labels and bad params") {
    Tensor emb = unit_rows(2, 4, 51);
    Tensor weights = unit_rows(3, 4, 52);
    ArcFaceParams params{30.0f, 0.2f, weights};
    CHECK_THROWS_AS(iris3d::arcface_loss(emb, {0, 3}, params), LabelError);
    ArcFaceParams bad_scale{-1.0f, 0.2f, weights};
    CHECK_THROWS_AS(iris3d::arcface_loss(emb, {0, 1}, bad_scale), iris3d::ConfigError);
}

TEST_CASE("arcface gradients match finite differences") {
    for (std::uint64_t seed : {61u, 62u, 63u, 64u, 65u}) {
        const int n = 4, d = 6, c = 3;
        Tensor emb = unit_rows(n, d, seed, /*requires_grad=*/true);
        Tensor weights = unit_rows(c, d, seed + 10, /*requires_grad=*/true);
        const std::vector<int> labels = {0, 1, 2, 0};
        const auto make_loss = [&] {
            ArcFaceParams params{6.0f, 0.25f, weights};
            return iris3d::arcface_loss(emb, labels, params);
        };
        CHECK(oracle::grad_check({emb, weights}, make_loss, {1e-3, 0, seed}) <= 1e-3);
    }
}

TEST_CASE("curriculum phase sequence") {
    const CurriculumSchedule s = CurriculumSchedule::uniform(5, 3);
    CHECK(s.next_phase(0) == Phase::Triplet);
    CHECK(s.next_phase(4) == Phase::Triplet);
    CHECK(s.next_phase(5) == Phase::ArcFace);
    CHECK(s.next_phase(10) == Phase::Triplet);
    CHECK(s.next_phase(29) == Phase::ArcFace);
    CHECK(s.next_phase(30) == Phase::Done);
    CHECK(s.total_epochs() == 30);

    // expanded phase labels are exactly T,A,T,A,T,A
    std::vector<Phase> seq;
    Phase last = Phase::Done;
    for (int e = 0; e < s.total_epochs(); ++e) {
        const Phase p = s.next_phase(e);
        if (p != last) {
            seq.push_back(p);
            last = p;
        }
    }
    REQUIRE(seq.size() == 6);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        CHECK(seq[i] == (i % 2 == 0 ? Phase::Triplet : Phase::ArcFace));
    }
}
