#pragma once

// Reference implementations used only by tests. Each one recomputes the
// quantity it checks through an independent code path (plain counting loops,
// dense grids, exhaustive enumeration) rather than calling the library.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "iris3d/preproc.hpp"
#include "iris3d/tensor.hpp"

namespace oracle {

// --- gradients ------------------------------------------------------------

struct GradCheckOptions {
    double eps = 1e-3;
    int max_entries_per_tensor = 0;  // 0 = every entry
    std::uint64_t seed = 7;
};

// Central finite differences against the analytic gradients produced by one
// backward() pass. `make_loss` must rebuild the forward graph from the given
// parameters on every call. Returns the worst relative error
// |fd - analytic| / max(1, |fd|, |analytic|).
double grad_check(const std::vector<iris3d::Tensor>& params,
                  const std::function<iris3d::Tensor()>& make_loss,
                  const GradCheckOptions& opts = {});

// Fixed pseudo-random unit-scale probe: loss = sum(y * w) with w seeded and
// scaled by 1/sqrt(numel). Keeps gradients O(1) for FD stability.
iris3d::Tensor probe_loss(const iris3d::Tensor& y, std::uint64_t seed);

// --- score metrics ----------------------------------------------------------

// (FMR, FNMR) at a threshold by raw counting loops.
std::pair<double, double> rates_at(const std::vector<double>& genuine,
                                   const std::vector<double>& impostor, double threshold);

// Dense-grid sweep at the given resolution; reports (FMR+FNMR)/2 at the grid
// point with the smallest |FMR-FNMR|.
double eer_grid(const std::vector<double>& genuine, const std::vector<double>& impostor,
                double resolution = 1e-5);

// Dense-grid sweep: TMR at the smallest grid threshold whose FMR is within
// the target.
double tmr_grid(const std::vector<double>& genuine, const std::vector<double>& impostor,
                double fmr_target, double resolution = 1e-5);

// --- triplet mining ---------------------------------------------------------

struct TripletOracleResult {
    double loss = 0.0;
    int semi_hard_count = 0;
    int anchor_positive_pairs = 0;
};

// Exhaustive enumeration over every ordered anchor-positive pair with the
// same mining rule as the engine, on raw float rows.
TripletOracleResult triplet_brute_force(const std::vector<float>& embeddings, int n, int d,
                                        const std::vector<int>& labels, float margin);

// --- geometry ---------------------------------------------------------------

// Per-pixel polar sampler mirroring the rubber-sheet definition in doubles.
iris3d::NormalizedIris rubber_sheet_reference(const iris3d::IrisSample& sample, int out_height,
                                              int out_width);

// All window offsets o with o + patch <= width, stepping by stride.
std::vector<int> window_offsets(int width, int patch, int stride);

}  // namespace oracle
