#pragma once

#include <optional>
#include <vector>

#include "iris3d/tensor.hpp"

namespace iris3d::nn {

enum class Padding { Same, Valid };
enum class Mode { Train, Infer };

struct Dim3 {
    int d = 1, h = 1, w = 1;
};

// 3D convolution, NCDHW input [N,C,D,H,W] against kernel [F,C,kd,kh,kw].
// Same padding pads asymmetrically with the extra cell on the high side.
// Differentiable w.r.t. input and kernel.
Tensor conv3d(const Tensor& input, const Tensor& kernel, Dim3 stride, Padding padding);

// Output extent along one axis for the given padding rule.
int conv_output_extent(int in, int kernel, int stride, Padding padding);

// Valid-region max pooling; gradient routes to the argmax cell, ties broken
// toward the lowest flat index.
Tensor maxpool3d(const Tensor& input, Dim3 window, Dim3 stride);

struct BatchNormState {
    std::vector<float> running_mean, running_var;
    void init(int channels);
};

// Per-channel batch normalization over axis 1. Train mode normalizes by the
// batch statistics and updates the running moments in `state`; infer mode
// reads them.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, float eps, Mode mode, float momentum = 0.1f);

// [N,C,D,H,W] -> [N,C], mean over the spatio-temporal cells.
Tensor global_avg_pool3d(const Tensor& input);

// y = x W^T + b with x [N,din], W [dout,din], b [dout].
Tensor dense(const Tensor& input, const Tensor& weight,
             const std::optional<Tensor>& bias = std::nullopt);

Tensor relu(const Tensor& input);

// Joins rank-equal tensors along axis 1.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Unit Euclidean norm per row ([N,d]) or for a single vector ([d]).
// Rows with norm below 1e-12 are rejected.
Tensor l2_normalize(const Tensor& input);

// a [N,d] x b [C,d]^T -> [N,C]; cosine logits when both sides are unit-norm.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise / reduction utilities. Shapes must match exactly; the only
// broadcasts in this engine are the bias/affine paths inside dense and
// batchnorm.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor sum(const Tensor& a);  // -> scalar

}  // namespace iris3d::nn
