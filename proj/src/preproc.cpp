#include "iris3d/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iris3d/error.hpp"

namespace iris3d {

void IrisSample::validate() const {
    const std::string where = subject_id + "/" + sample_id;
    if (width <= 0 || height <= 0 ||
        image.size() != static_cast<std::size_t>(width) * height) {
        throw DatasetError(where + ": image extents do not match pixel count");
    }
    if (mask.size() != image.size()) {
        throw DatasetError(where + ": mask extents differ from image extents");
    }
    if (!(pupil.r > 0.0) || !(iris.r > 0.0)) {
        throw DatasetError(where + ": circle radii must be positive");
    }
    if (!(pupil.r < iris.r)) {
        throw DatasetError(where + ": pupil radius must be smaller than iris radius");
    }
    const double dx = pupil.cx - iris.cx, dy = pupil.cy - iris.cy;
    if (std::sqrt(dx * dx + dy * dy) >= iris.r) {
        throw DatasetError(where + ": pupil center lies outside the iris circle");
    }
}

NormalizedIris rubber_sheet_normalize(const IrisSample& sample, int out_height, int out_width) {
    sample.validate();
    if (out_height < 2 || out_width < 1) {
        throw GeometryError("rubber_sheet_normalize: output extents must be >= 2x1");
    }
    NormalizedIris out;
    out.height = out_height;
    out.width = out_width;
    const std::size_t cells = static_cast<std::size_t>(out_height) * out_width;
    out.iris_channel.assign(cells, 0.0f);
    out.mask_channel.assign(cells, 0.0f);
    out.masked_channel.assign(cells, 0.0f);

    const int w = sample.width, h = sample.height;
    const double two_pi = 6.283185307179586476925287;
    for (int r = 0; r < out_height; ++r) {
        const double t = static_cast<double>(r) / (out_height - 1);
        for (int c = 0; c < out_width; ++c) {
            const double theta = two_pi * c / out_width;
            const double cs = std::cos(theta), sn = std::sin(theta);
            const double px = (1.0 - t) * (sample.pupil.cx + sample.pupil.r * cs) +
                              t * (sample.iris.cx + sample.iris.r * cs);
            const double py = (1.0 - t) * (sample.pupil.cy + sample.pupil.r * sn) +
                              t * (sample.iris.cy + sample.iris.r * sn);
            const std::size_t o = static_cast<std::size_t>(r) * out_width + c;
            if (px < 0.0 || px > w - 1 || py < 0.0 || py > h - 1) {
                continue;  // occluded: both channels stay 0
            }
            const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
            const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx = px - x0, fy = py - y0;
            const auto at = [&](int yy, int xx) {
                return static_cast<double>(sample.image[static_cast<std::size_t>(yy) * w + xx]);
            };
            const double v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                             fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
            out.iris_channel[o] = static_cast<float>(v / 255.0);

            const int mx = static_cast<int>(std::lround(px));
            const int my = static_cast<int>(std::lround(py));
            const std::uint8_t mv = sample.mask[static_cast<std::size_t>(my) * w + mx];
            out.mask_channel[o] = (mv / 255.0f) >= 0.5f ? 1.0f : 0.0f;
            out.masked_channel[o] = out.iris_channel[o] * out.mask_channel[o];
        }
    }
    return out;
}

ComposedStrip compose_channels(const NormalizedIris& normalized) {
    ComposedStrip out;
    out.height = normalized.height;
    out.width = normalized.width;
    const std::size_t cells = static_cast<std::size_t>(out.height) * out.width;
    if (normalized.iris_channel.size() != cells || normalized.mask_channel.size() != cells ||
        normalized.masked_channel.size() != cells) {
        throw DimensionError("compose_channels: channel extents disagree");
    }
    out.data.resize(cells * 3);
    for (std::size_t i = 0; i < cells; ++i) {
        out.data[i * 3 + 0] = normalized.iris_channel[i];
        out.data[i * 3 + 1] = normalized.mask_channel[i];
        out.data[i * 3 + 2] = normalized.masked_channel[i];
    }
    return out;
}

PatchStack make_patch_stack(const ComposedStrip& composed, int patch, int stride, int count) {
    if (patch < 1 || stride < 1 || count < 1) {
        throw GeometryError("make_patch_stack: patch, stride and count must be >= 1");
    }
    if (composed.height != patch) {
        throw GeometryError("make_patch_stack: strip height " + std::to_string(composed.height) +
                            " != patch size " + std::to_string(patch));
    }
    if (patch + stride * (count - 1) > composed.width) {
        const int max_count =
            composed.width >= patch ? (composed.width - patch) / stride + 1 : 0;
        throw GeometryError("make_patch_stack: " + std::to_string(count) +
                            " windows of size " + std::to_string(patch) + " at stride " +
                            std::to_string(stride) + " exceed width " +
                            std::to_string(composed.width) + "; max feasible count is " +
                            std::to_string(max_count));
    }
    PatchStack out;
    out.count = count;
    out.patch = patch;
    out.channels = 3;
    out.data.resize(static_cast<std::size_t>(count) * patch * patch * 3);
    const int W = composed.width;
    for (int k = 0; k < count; ++k) {
        const int col0 = stride * k;
        for (int r = 0; r < patch; ++r) {
            const float* src = composed.data.data() + (static_cast<std::size_t>(r) * W + col0) * 3;
            float* dst =
                out.data.data() + ((static_cast<std::size_t>(k) * patch + r) * patch) * 3;
            std::copy(src, src + static_cast<std::size_t>(patch) * 3, dst);
        }
    }
    return out;
}

Tensor patch_stacks_to_batch(const std::vector<PatchStack>& stacks) {
    if (stacks.empty()) throw InputError("patch_stacks_to_batch: empty batch");
    const int K = stacks[0].count, P = stacks[0].patch, C = stacks[0].channels;
    for (const PatchStack& s : stacks) {
        if (s.count != K || s.patch != P || s.channels != C) {
            throw DimensionError("patch_stacks_to_batch: mixed patch-stack shapes");
        }
    }
    const int N = static_cast<int>(stacks.size());
    Tensor batch = Tensor::zeros({N, C, K, P, P});
    float* out = batch.data();
    const std::int64_t plane = static_cast<std::int64_t>(K) * P * P;
    for (int n = 0; n < N; ++n) {
        const float* src = stacks[static_cast<std::size_t>(n)].data.data();
        float* dst = out + static_cast<std::int64_t>(n) * C * plane;
        for (int k = 0; k < K; ++k) {
            for (int r = 0; r < P; ++r) {
                const float* row = src + ((static_cast<std::size_t>(k) * P + r) * P) * C;
                const std::int64_t cell = (static_cast<std::int64_t>(k) * P + r) * P;
                for (int c = 0; c < P; ++c) {
                    for (int ch = 0; ch < C; ++ch) {
                        dst[ch * plane + cell + c] = row[static_cast<std::size_t>(c) * C + ch];
                    }
                }
            }
        }
    }
    return batch;
}

}  // namespace iris3d
