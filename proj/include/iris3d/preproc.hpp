#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iris3d/tensor.hpp"

namespace iris3d {

struct Circle {
    double cx = 0.0, cy = 0.0, r = 0.0;
};

// One eye image with its segmentation geometry. x = column, y = row.
struct IrisSample {
    int width = 0, height = 0;
    std::vector<std::uint8_t> image;  // row-major grayscale
    std::vector<std::uint8_t> mask;   // same extents, 0 or 255
    Circle pupil, iris;
    std::string subject_id, sample_id;

    // pupil strictly inside the iris circle, matching extents
    void validate() const;
};

// Polar unwrap of the annulus between the pupil and iris boundaries.
struct NormalizedIris {
    int height = 0, width = 0;
    std::vector<float> iris_channel;    // [0,1]
    std::vector<float> mask_channel;    // {0,1}
    std::vector<float> masked_channel;  // iris * mask
};

// interleaved [height, width, 3]: iris, mask, masked
struct ComposedStrip {
    int height = 0, width = 0;
    std::vector<float> data;
};

// [count, patch, patch, 3], window k covering columns [stride*k, stride*k+patch)
struct PatchStack {
    int count = 0, patch = 0, channels = 3;
    std::vector<float> data;
    float at(int k, int r, int c, int ch) const {
        return data[((static_cast<std::size_t>(k) * patch + r) * patch + c) * channels + ch];
    }
};

// Row r interpolates linearly between the pupil boundary (r=0) and the iris
// boundary (r=out_height-1) along angle theta = 2*pi*c/out_width. Intensities
// are sampled bilinearly and scaled to [0,1]; the mask is sampled nearest-
// neighbor and thresholded at 0.5. Sampling points outside the image produce
// zero in both the iris and mask channels.
NormalizedIris rubber_sheet_normalize(const IrisSample& sample, int out_height = 112,
                                      int out_width = 512);

ComposedStrip compose_channels(const NormalizedIris& normalized);

PatchStack make_patch_stack(const ComposedStrip& composed, int patch = 112, int stride = 5,
                            int count = 80);

// Stacks [count,patch,patch,3] samples into the network layout
// [N, 3, count, patch, patch].
Tensor patch_stacks_to_batch(const std::vector<PatchStack>& stacks);

}  // namespace iris3d
