#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "iris3d/error.hpp"
#include "iris3d/eval.hpp"
#include "iris3d/runtime.hpp"
#include "oracles.hpp"

using iris3d::DegenerateInputError;
using iris3d::InputError;
using iris3d::LookupError;
using iris3d::Rng;
namespace ev = iris3d::eval;

namespace {

// quantized scores make the 1e-5 grid oracle land inside every plateau and
// exercise tie handling
ev::ScoreSet random_scores(std::uint64_t seed, int n_genuine, int n_impostor) {
    Rng rng(seed);
    ev::ScoreSet s;
    for (int i = 0; i < n_genuine; ++i) {
        s.genuine.push_back(std::round(rng.uniform(0.3, 1.0) * 1000.0) / 1000.0);
    }
    for (int i = 0; i < n_impostor; ++i) {
        s.impostor.push_back(std::round(rng.uniform(0.0, 0.7) * 1000.0) / 1000.0);
    }
    return s;
}

ev::Protocol tiny_protocol() {
    ev::Protocol p;
    p.gallery["a"] = {{"a/g0", {1.0f, 0.0f}}, {"a/g1", {0.9f, 0.1f}}};
    p.gallery["b"] = {{"b/g0", {0.0f, 1.0f}}, {"b/g1", {0.1f, 0.9f}}};
    p.probe["a"] = {{"a/p0", {0.95f, 0.05f}}, {"a/p1", {1.0f, 0.02f}}};
    p.probe["b"] = {{"b/p0", {0.05f, 0.95f}}, {"b/p1", {0.0f, 1.0f}}};
    return p;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
    CHECK(ev::cosine_similarity({0.3f, -0.7f, 2.0f}, {0.3f, -0.7f, 2.0f}) ==
          doctest::Approx(1.0));
    CHECK(ev::cosine_similarity({1.0f, 0.0f}, {0.0f, 1.0f}) == doctest::Approx(0.0));
    CHECK(ev::cosine_similarity({1.0f, 1.0f}, {1.0f, 0.0f}) ==
          doctest::Approx(0.7071).epsilon(1e-4));
    CHECK_THROWS_AS(ev::cosine_similarity({0.0f, 0.0f}, {1.0f, 0.0f}), DegenerateInputError);
}

TEST_CASE("pair enumeration reproduces the closed-set arithmetic") {
    ev::Protocol p;
    for (int s = 0; s < 783; ++s) {
        const std::string id = "s" + std::to_string(s);
        p.gallery[id].resize(10);
        p.probe[id].resize(10);
    }
    const ev::PairCounts counts = ev::enumerate_pairs(p);
    CHECK(counts.genuine == 78300);
    CHECK(counts.impostor == 61230600);
}

TEST_CASE("pair enumeration small cases") {
    ev::Protocol single;
    single.gallery["a"].resize(3);
    single.probe["a"].resize(2);
    const ev::PairCounts c1 = ev::enumerate_pairs(single);
    CHECK(c1.genuine == 6);
    CHECK(c1.impostor == 0);

    ev::Protocol three;
    for (const char* s : {"a", "b", "c"}) {
        three.gallery[s].resize(2);
        three.probe[s].resize(2);
    }
    const ev::PairCounts c3 = ev::enumerate_pairs(three);
    // exhaustive listing: 6 probes x 6 gallery = 36 pairs, 4 genuine per subject
    std::int64_t genuine = 0, impostor = 0;
    for (int ps = 0; ps < 3; ++ps) {
        for (int p = 0; p < 2; ++p) {
            for (int gs = 0; gs < 3; ++gs) {
                for (int g = 0; g < 2; ++g) {
                    (ps == gs ? genuine : impostor) += 1;
                }
            }
        }
    }
    CHECK(c3.genuine == genuine);
    CHECK(c3.impostor == impostor);
    CHECK(c3.genuine == 12);
    CHECK(c3.impostor == 24);

    ev::Protocol empty;
    CHECK_THROWS_AS(ev::enumerate_pairs(empty), InputError);
}

TEST_CASE("score_all labels and counts match enumeration") {
    const ev::Protocol p = tiny_protocol();
    std::vector<ev::ScoredPair> pairs;
    const ev::ScoreSet scores = ev::score_all(p, &pairs);
    const ev::PairCounts counts = ev::enumerate_pairs(p);
    CHECK(static_cast<std::int64_t>(scores.genuine.size()) == counts.genuine);
    CHECK(static_cast<std::int64_t>(scores.impostor.size()) == counts.impostor);

    // brute-force double loop over the same pairs
    for (const ev::ScoredPair& pair : pairs) {
        const std::string ps = pair.probe_id.substr(0, 1);
        const std::string gs = pair.gallery_id.substr(0, 1);
        CHECK(pair.genuine == (ps == gs));
    }
    // rows ordered by probe id then gallery id
    for (std::size_t i = 1; i < pairs.size(); ++i) {
        const auto key = [](const ev::ScoredPair& x) {
            return std::pair<std::string, std::string>{x.probe_id, x.gallery_id};
        };
        CHECK(key(pairs[i - 1]) < key(pairs[i]));
    }
}

TEST_CASE("score_all identical embeddings give unit scores") {
    ev::Protocol p;
    p.gallery["a"] = {{"a/g", {0.6f, 0.8f}}};
    p.probe["a"] = {{"a/p", {0.6f, 0.8f}}};
    p.probe["b"] = {{"b/p", {0.6f, 0.8f}}};
    const ev::ScoreSet s = ev::score_all(p);
    for (double v : s.genuine) CHECK(v == doctest::Approx(1.0));
    for (double v : s.impostor) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("score_all reports missing embeddings by id") {
    ev::Protocol p = tiny_protocol();
    p.probe["b"][1].embedding.clear();
    try {
        ev::score_all(p);
        FAIL("expected LookupError");
    } catch (const LookupError& e) {
        CHECK(std::string(e.what()).find("b/p1") != std::string::npos);
    }
}

TEST_CASE("eer on separated and exchangeable score sets") {
    ev::ScoreSet perfect;
    perfect.genuine = {1.0, 1.0, 1.0};
    perfect.impostor = {0.0, 0.0};
    const ev::EerResult r = ev::eer(perfect);
    CHECK(r.eer == doctest::Approx(0.0));

    ev::ScoreSet chance;
    chance.genuine = {0.1, 0.4, 0.5, 0.9};
    chance.impostor = {0.1, 0.4, 0.5, 0.9};
    CHECK(ev::eer(chance).eer == doctest::Approx(0.5));
}

TEST_CASE("eer matches the frozen sweep example") {
    ev::ScoreSet s;
    s.genuine = {0.9, 0.8, 0.4};
    s.impostor = {0.6, 0.3, 0.2};
    const ev::EerResult r = ev::eer(s);
    // FMR(0.6) = 1/3 and FNMR(0.6) = 1/3 meet exactly
    CHECK(r.eer == doctest::Approx(1.0 / 3.0));
    const double grid = oracle::eer_grid(s.genuine, s.impostor);
    CHECK(grid == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("eer agrees with the dense-grid oracle on random sets") {
    for (std::uint64_t seed = 400; seed < 420; ++seed) {
        const ev::ScoreSet s = random_scores(seed, 40, 120);
        const double impl = ev::eer(s).eer;
        const double grid = oracle::eer_grid(s.genuine, s.impostor);
        const double bound = 1.0 / static_cast<double>(s.genuine.size()) +
                             1.0 / static_cast<double>(s.impostor.size());
        CHECK(std::abs(impl - grid) <= bound);
    }
}

TEST_CASE("eer is symmetric under label swap with negated scores") {
    for (std::uint64_t seed = 430; seed < 436; ++seed) {
        const ev::ScoreSet s = random_scores(seed, 30, 80);
        ev::ScoreSet swapped;
        for (double v : s.impostor) swapped.genuine.push_back(-v);
        for (double v : s.genuine) swapped.impostor.push_back(-v);
        CHECK(ev::eer(s).eer == doctest::Approx(ev::eer(swapped).eer).epsilon(1e-9));
    }
}

TEST_CASE("tmr at fmr basics and oracle agreement") {
    ev::ScoreSet perfect;
    perfect.genuine = {0.9, 0.95, 1.0};
    perfect.impostor = {0.0, 0.1};
    const ev::TmrResult r = ev::tmr_at_fmr(perfect);
    CHECK(r.tmr[0] == doctest::Approx(1.0));
    CHECK(r.tmr[1] == doctest::Approx(1.0));
    CHECK(r.low_impostor_warning);  // 2 impostors cannot resolve 1e-4

    for (std::uint64_t seed = 440; seed < 452; ++seed) {
        const ev::ScoreSet s = random_scores(seed, 50, 5000);
        const ev::TmrResult impl = ev::tmr_at_fmr(s, {0.01, 0.001});
        CHECK(impl.tmr[0] ==
              doctest::Approx(oracle::tmr_grid(s.genuine, s.impostor, 0.01)).epsilon(1e-12));
        CHECK(impl.tmr[1] ==
              doctest::Approx(oracle::tmr_grid(s.genuine, s.impostor, 0.001)).epsilon(1e-12));
    }
}

TEST_CASE("tmr approximates the target under exchangeability") {
    Rng rng(7);
    ev::ScoreSet s;
    for (int i = 0; i < 4000; ++i) {
        const double v = std::round(rng.uniform(0.0, 1.0) * 1000.0) / 1000.0;
        if (i < 2000) {
            s.genuine.push_back(v);
        } else {
            s.impostor.push_back(v);
        }
    }
    const ev::TmrResult r = ev::tmr_at_fmr(s, {0.01});
    CHECK(r.tmr[0] == doctest::Approx(0.01).epsilon(1.0));  // same order of magnitude
    CHECK(r.tmr[0] < 0.05);
}

TEST_CASE("crr identifies by rank 1 with deterministic ties") {
    ev::Protocol single;
    single.gallery["a"] = {{"a/g", {1.0f, 0.0f}}};
    single.probe["a"] = {{"a/p", {0.7f, 0.3f}}};
    CHECK(ev::crr(single) == doctest::Approx(1.0));

    CHECK(ev::crr(tiny_protocol()) == doctest::Approx(1.0));  // per-subject orthogonal

    // hand-built 3-subject set where one probe lands nearer a wrong subject
    ev::Protocol adv;
    adv.gallery["a"] = {{"a/g", {1.0f, 0.0f}}};
    adv.gallery["b"] = {{"b/g", {0.0f, 1.0f}}};
    adv.gallery["c"] = {{"c/g", {0.7071f, 0.7071f}}};
    adv.probe["a"] = {{"a/p", {0.99f, 0.14f}}};   // closest to a/g
    adv.probe["b"] = {{"b/p", {0.6f, 0.8f}}};     // closest to c/g: wrong
    adv.probe["c"] = {{"c/p", {0.6f, 0.75f}}};    // closest to c/g
    CHECK(ev::crr(adv) == doctest::Approx(2.0 / 3.0));

    ev::Protocol no_gallery;
    no_gallery.probe["a"] = {{"a/p", {1.0f, 0.0f}}};
    CHECK_THROWS_AS(ev::crr(no_gallery), InputError);
}

TEST_CASE("crr matches an exhaustive argmax oracle on random embeddings") {
    Rng rng(91);
    ev::Protocol p;
    for (int s = 0; s < 5; ++s) {
        const std::string sid = "s" + std::to_string(s);
        for (int g = 0; g < 3; ++g) {
            std::vector<float> v(6);
            for (float& x : v) x = rng.uniform_f(-1.0f, 1.0f);
            p.gallery[sid].push_back({sid + "/g" + std::to_string(g), v});
        }
        for (int q = 0; q < 2; ++q) {
            std::vector<float> v(6);
            for (float& x : v) x = rng.uniform_f(-1.0f, 1.0f);
            p.probe[sid].push_back({sid + "/p" + std::to_string(q), v});
        }
    }
    // oracle: explicit loops over every probe and gallery entry
    int correct = 0, total = 0;
    for (const auto& [ps, probes] : p.probe) {
        for (const auto& probe : probes) {
            double best = -2.0;
            std::string best_subject, best_id;
            for (const auto& [gs, gallery] : p.gallery) {
                for (const auto& g : gallery) {
                    const double score = ev::cosine_similarity(probe.embedding, g.embedding);
                    if (score > best || (score == best && g.sample_id < best_id)) {
                        best = score;
                        best_subject = gs;
                        best_id = g.sample_id;
                    }
                }
            }
            ++total;
            if (best_subject == ps) ++correct;
        }
    }
    CHECK(ev::crr(p) == doctest::Approx(static_cast<double>(correct) / total));
}

TEST_CASE("decidability closed forms and independent statistics") {
    ev::ScoreSet equal_means;
    equal_means.genuine = {0.4, 0.6};
    equal_means.impostor = {0.3, 0.7};
    CHECK(ev::decidability(equal_means) == doctest::Approx(0.0));

    // mu_g=2, mu_i=0, unbiased variances 1 -> d' = 2
    ev::ScoreSet shifted;
    shifted.genuine = {1.0, 3.0, 2.0, 2.0};
    shifted.impostor = {-1.0, 1.0, 0.0, 0.0};
    const double vg = (1.0 + 1.0) / 3.0;  // unbiased variance of {1,3,2,2}
    const double expected = 2.0 / std::sqrt(vg);
    CHECK(ev::decidability(shifted) == doctest::Approx(expected));

    for (std::uint64_t seed = 460; seed < 466; ++seed) {
        const ev::ScoreSet s = random_scores(seed, 60, 80);
        double mg = 0.0, mi = 0.0;
        for (double v : s.genuine) mg += v;
        for (double v : s.impostor) mi += v;
        mg /= static_cast<double>(s.genuine.size());
        mi /= static_cast<double>(s.impostor.size());
        double vg2 = 0.0, vi2 = 0.0;
        for (double v : s.genuine) vg2 += (v - mg) * (v - mg);
        for (double v : s.impostor) vi2 += (v - mi) * (v - mi);
        vg2 /= static_cast<double>(s.genuine.size() - 1);
        vi2 /= static_cast<double>(s.impostor.size() - 1);
        const double want = std::abs(mg - mi) / std::sqrt((vg2 + vi2) / 2.0);
        CHECK(ev::decidability(s) == doctest::Approx(want).epsilon(1e-12));
    }

    ev::ScoreSet degenerate;
    degenerate.genuine = {0.5, 0.5};
    degenerate.impostor = {0.2, 0.2};
    CHECK_THROWS_AS(ev::decidability(degenerate), DegenerateInputError);
}

TEST_CASE("det curve hits the corners and matches counting") {
    ev::ScoreSet perfect;
    perfect.genuine = {0.8, 0.9};
    perfect.impostor = {0.1, 0.2};
    const ev::DetCurve c = ev::det_curve(perfect);
    bool touches_origin = false;
    for (const ev::DetPoint& pt : c.points) {
        if (pt.fmr == 0.0 && pt.fnmr == 0.0) touches_origin = true;
    }
    CHECK(touches_origin);

    ev::ScoreSet chance;
    chance.genuine = {0.1, 0.2, 0.8, 0.9};
    chance.impostor = {0.1, 0.2, 0.8, 0.9};
    bool has_half = false;
    for (const ev::DetPoint& pt : ev::det_curve(chance).points) {
        if (pt.fmr == 0.5 && pt.fnmr == 0.5) has_half = true;
    }
    CHECK(has_half);

    for (std::uint64_t seed = 470; seed < 476; ++seed) {
        const ev::ScoreSet s = random_scores(seed, 25, 60);
        const ev::DetCurve curve = ev::det_curve(s);
        double prev_fmr = 2.0, prev_fnmr = -1.0;
        for (const ev::DetPoint& pt : curve.points) {
            const auto [fmr, fnmr] = oracle::rates_at(s.genuine, s.impostor, pt.threshold);
            CHECK(pt.fmr == fmr);
            CHECK(pt.fnmr == fnmr);
            CHECK(pt.fmr <= prev_fmr);    // non-increasing
            CHECK(pt.fnmr >= prev_fnmr);  // non-decreasing
            prev_fmr = pt.fmr;
            prev_fnmr = pt.fnmr;
        }
    }
}

TEST_CASE("rank metrics are invariant under strictly increasing transforms") {
    const auto transform = [](double x) { return x * x * x; };  // strictly increasing on [-1,1]
    for (std::uint64_t seed = 480; seed < 488; ++seed) {
        const ev::ScoreSet s = random_scores(seed, 30, 90);
        ev::ScoreSet t;
        for (double v : s.genuine) t.genuine.push_back(transform(v));
        for (double v : s.impostor) t.impostor.push_back(transform(v));

        CHECK(ev::eer(s).eer == doctest::Approx(ev::eer(t).eer).epsilon(1e-12));
        const ev::TmrResult tmr_s = ev::tmr_at_fmr(s), tmr_t = ev::tmr_at_fmr(t);
        CHECK(tmr_s.tmr[0] == doctest::Approx(tmr_t.tmr[0]).epsilon(1e-12));
        CHECK(tmr_s.tmr[1] == doctest::Approx(tmr_t.tmr[1]).epsilon(1e-12));

        // DET point multiset (fmr, fnmr) unchanged
        auto points = [](const ev::DetCurve& c) {
            std::vector<std::pair<double, double>> v;
            for (const auto& p : c.points) v.emplace_back(p.fmr, p.fnmr);
            std::sort(v.begin(), v.end());
            return v;
        };
        CHECK(points(ev::det_curve(s)) == points(ev::det_curve(t)));
    }
}

TEST_CASE("empty score sets are rejected") {
    ev::ScoreSet s;
    s.genuine = {0.5};
    CHECK_THROWS_AS(ev::eer(s), InputError);
    CHECK_THROWS_AS(ev::tmr_at_fmr(s), InputError);
    CHECK_THROWS_AS(ev::det_curve(s), InputError);
}
