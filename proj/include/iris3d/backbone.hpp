#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "iris3d/checkpoint.hpp"
#include "iris3d/nn_ops.hpp"
#include "iris3d/tensor.hpp"

namespace iris3d {

// Four parallel branches with fixed kernel shapes (1x3x7), (7x7x3), (1x1x1),
// (3x3x3); only the per-branch output channel counts vary.
struct InceptionBlockSpec {
    int ch_1x3x7 = 16;
    int ch_7x7x3 = 16;
    int ch_1x1x1 = 8;
    int ch_3x3x3 = 8;
    int total() const { return ch_1x3x7 + ch_7x7x3 + ch_1x1x1 + ch_3x3x3; }
};

struct BackboneConfig {
    std::array<int, 3> stem_kernel = {7, 7, 7};
    int stem_stride = 2;
    int stem_channels = 16;
    int in_channels = 3;
    std::vector<InceptionBlockSpec> blocks;
    int embedding_dim = 128;
    int num_classes = 2;

    static BackboneConfig desk(int num_classes);
    static BackboneConfig paperish(int num_classes);

    void validate() const;
    std::string to_json_string() const;
    static BackboneConfig from_json_string(const std::string& text);
};

// Modified inflated-3D inception network: stride-2 stem conv + BN + ReLU +
// max-pool (1,3,3)/(1,2,2), inception blocks with (2,2,2)/(2,2,2) max-pool
// between them, 3D global average pooling, embedding head, unit-norm output,
// cosine logits against the class-weight matrix.
class Model {
public:
    Model(BackboneConfig config, std::uint64_t seed);

    struct Output {
        Tensor embeddings;  // [N, embedding_dim], unit-norm rows
        Tensor logits;      // [N, num_classes], cosine logits
    };
    Output forward(const Tensor& batch, nn::Mode mode);

    const BackboneConfig& config() const { return config_; }
    Tensor& class_weights() { return class_weights_; }

    // trainable tensors in construction order
    std::vector<std::pair<std::string, Tensor>> parameters();
    std::int64_t parameter_count() const;

    // per-stage output shapes for a given input, computed arithmetically
    std::vector<std::pair<std::string, Shape>> shape_trace(const Shape& input) const;

    // parameters plus batch-norm running moments, checkpoint-ready
    std::vector<NamedArray> state_arrays() const;
    void load_state_arrays(const std::vector<NamedArray>& arrays);

    // writes <path> plus a <path>.json config block for shape-safe reload
    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

private:
    struct ConvBn {
        Tensor kernel;
        nn::Dim3 stride{1, 1, 1};
        nn::Padding padding = nn::Padding::Same;
        Tensor gamma, beta;
        nn::BatchNormState bn_state;
    };

    Tensor run_conv_bn_relu(ConvBn& layer, const Tensor& x, nn::Mode mode);
    template <typename Fn>
    void visit_state(Fn&& fn) const;

    BackboneConfig config_;
    ConvBn stem_;
    std::vector<std::array<ConvBn, 4>> blocks_;
    Tensor embed_weight_, embed_bias_;
    Tensor class_weights_;
};

}  // namespace iris3d
