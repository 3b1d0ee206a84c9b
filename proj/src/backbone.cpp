#include "iris3d/backbone.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "iris3d/error.hpp"
#include "iris3d/runtime.hpp"

namespace iris3d {

using json = nlohmann::ordered_json;

BackboneConfig BackboneConfig::desk(int num_classes) {
    BackboneConfig c;
    c.stem_channels = 16;
    c.blocks = {InceptionBlockSpec{16, 16, 8, 8}, InceptionBlockSpec{16, 16, 8, 8}};
    c.embedding_dim = 128;
    c.num_classes = num_classes;
    return c;
}

BackboneConfig BackboneConfig::paperish(int num_classes) {
    BackboneConfig c;
    c.stem_channels = 32;
    c.blocks = {InceptionBlockSpec{32, 32, 16, 16}, InceptionBlockSpec{32, 32, 16, 16},
                InceptionBlockSpec{64, 64, 32, 32}, InceptionBlockSpec{64, 64, 32, 32}};
    c.embedding_dim = 128;
    c.num_classes = num_classes;
    return c;
}

void BackboneConfig::validate() const {
    if (stem_kernel[0] < 1 || stem_kernel[1] < 1 || stem_kernel[2] < 1) {
        throw ConfigError("backbone config: stem_kernel extents must be >= 1");
    }
    if (stem_stride < 1) throw ConfigError("backbone config: stem_stride must be >= 1");
    if (stem_channels < 1) throw ConfigError("backbone config: stem_channels must be >= 1");
    if (in_channels < 1) throw ConfigError("backbone config: in_channels must be >= 1");
    if (blocks.empty()) throw ConfigError("backbone config: blocks must not be empty");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const InceptionBlockSpec& b = blocks[i];
        if (b.ch_1x3x7 < 1 || b.ch_7x7x3 < 1 || b.ch_1x1x1 < 1 || b.ch_3x3x3 < 1) {
            throw ConfigError("backbone config: blocks[" + std::to_string(i) +
                              "] branch channels must be >= 1");
        }
    }
    if (embedding_dim < 8) throw ConfigError("backbone config: embedding_dim must be >= 8");
    if (num_classes < 2) throw ConfigError("backbone config: num_classes must be >= 2");
}

std::string BackboneConfig::to_json_string() const {
    json j;
    j["stem_kernel"] = stem_kernel;
    j["stem_stride"] = stem_stride;
    j["stem_channels"] = stem_channels;
    j["in_channels"] = in_channels;
    j["blocks"] = json::array();
    for (const InceptionBlockSpec& b : blocks) {
        j["blocks"].push_back({{"ch_1x3x7", b.ch_1x3x7},
                               {"ch_7x7x3", b.ch_7x7x3},
                               {"ch_1x1x1", b.ch_1x1x1},
                               {"ch_3x3x3", b.ch_3x3x3}});
    }
    j["embedding_dim"] = embedding_dim;
    j["num_classes"] = num_classes;
    return j.dump(2);
}

BackboneConfig BackboneConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("backbone config: invalid JSON: ") + e.what());
    }
    BackboneConfig c;
    try {
        if (j.contains("stem_kernel")) {
            c.stem_kernel = {j["stem_kernel"][0].get<int>(), j["stem_kernel"][1].get<int>(),
                             j["stem_kernel"][2].get<int>()};
        }
        c.stem_stride = j.value("stem_stride", c.stem_stride);
        c.stem_channels = j.value("stem_channels", c.stem_channels);
        c.in_channels = j.value("in_channels", c.in_channels);
        if (j.contains("blocks")) {
            c.blocks.clear();
            for (const auto& jb : j["blocks"]) {
                InceptionBlockSpec b;
                b.ch_1x3x7 = jb.value("ch_1x3x7", b.ch_1x3x7);
                b.ch_7x7x3 = jb.value("ch_7x7x3", b.ch_7x7x3);
                b.ch_1x1x1 = jb.value("ch_1x1x1", b.ch_1x1x1);
                b.ch_3x3x3 = jb.value("ch_3x3x3", b.ch_3x3x3);
                c.blocks.push_back(b);
            }
        }
        c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
        c.num_classes = j.value("num_classes", c.num_classes);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("backbone config: ") + e.what());
    }
    c.validate();
    return c;
}

namespace {

Tensor he_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::vector<float> values(static_cast<std::size_t>(shape_numel(shape)));
    for (float& v : values) v = rng.uniform_f(-bound, bound);
    return Tensor::from_vector(shape, std::move(values), /*requires_grad=*/true);
}

constexpr std::array<std::array<int, 3>, 4> kBranchKernels = {
    {{1, 3, 7}, {7, 7, 3}, {1, 1, 1}, {3, 3, 3}}};

}  // namespace

Model::Model(BackboneConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cull));

    auto init_conv_bn = [&rng](ConvBn& layer, int out_ch, int in_ch, std::array<int, 3> k) {
        const Shape kshape = {out_ch, in_ch, k[0], k[1], k[2]};
        const std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * k[0] * k[1] * k[2];
        layer.kernel = he_uniform(kshape, fan_in, rng);
        layer.gamma = Tensor::full({out_ch}, 1.0f, /*requires_grad=*/true);
        layer.beta = Tensor::zeros({out_ch}, /*requires_grad=*/true);
        layer.bn_state.init(out_ch);
    };

    init_conv_bn(stem_, config_.stem_channels, config_.in_channels, config_.stem_kernel);
    stem_.stride = {config_.stem_stride, config_.stem_stride, config_.stem_stride};
    stem_.padding = nn::Padding::Same;

    int in_ch = config_.stem_channels;
    for (const InceptionBlockSpec& spec : config_.blocks) {
        std::array<ConvBn, 4> block;
        const int widths[4] = {spec.ch_1x3x7, spec.ch_7x7x3, spec.ch_1x1x1, spec.ch_3x3x3};
        for (int b = 0; b < 4; ++b) {
            init_conv_bn(block[static_cast<std::size_t>(b)], widths[b], in_ch,
                         kBranchKernels[static_cast<std::size_t>(b)]);
        }
        blocks_.push_back(std::move(block));
        in_ch = spec.total();
    }

    embed_weight_ = he_uniform({config_.embedding_dim, in_ch}, in_ch, rng);
    embed_bias_ = Tensor::zeros({config_.embedding_dim}, /*requires_grad=*/true);
    class_weights_ = he_uniform({config_.num_classes, config_.embedding_dim},
                                config_.embedding_dim, rng);
}

Tensor Model::run_conv_bn_relu(ConvBn& layer, const Tensor& x, nn::Mode mode) {
    Tensor y = nn::conv3d(x, layer.kernel, layer.stride, layer.padding);
    y = nn::batchnorm(y, layer.gamma, layer.beta, layer.bn_state, 1e-5f, mode);
    return nn::relu(y);
}

Model::Output Model::forward(const Tensor& batch, nn::Mode mode) {
    if (!batch.defined() || batch.rank() != 5) {
        throw DimensionError("backbone forward: input must be [N,C,D,H,W]");
    }
    if (batch.dim(1) != config_.in_channels) {
        throw DimensionError("backbone forward: channel axis 1 is " +
                             std::to_string(batch.dim(1)) + ", expected " +
                             std::to_string(config_.in_channels));
    }
    Tensor x = run_conv_bn_relu(stem_, batch, mode);
    x = nn::maxpool3d(x, {1, 3, 3}, {1, 2, 2});
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        std::vector<Tensor> branches;
        branches.reserve(4);
        for (ConvBn& branch : blocks_[bi]) {
            branches.push_back(run_conv_bn_relu(branch, x, mode));
        }
        x = nn::concat_channels(branches);
        if (bi + 1 < blocks_.size()) {
            x = nn::maxpool3d(x, {2, 2, 2}, {2, 2, 2});
        }
    }
    x = nn::global_avg_pool3d(x);
    x = nn::dense(x, embed_weight_, embed_bias_);
    Output out;
    out.embeddings = nn::l2_normalize(x);
    out.logits = nn::matmul_nt(out.embeddings, nn::l2_normalize(class_weights_));
    return out;
}

std::vector<std::pair<std::string, Tensor>> Model::parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push_conv_bn = [&out](const std::string& prefix, ConvBn& layer) {
        out.emplace_back(prefix + ".kernel", layer.kernel);
        out.emplace_back(prefix + ".gamma", layer.gamma);
        out.emplace_back(prefix + ".beta", layer.beta);
    };
    push_conv_bn("stem", stem_);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        for (int b = 0; b < 4; ++b) {
            push_conv_bn("block" + std::to_string(bi) + ".branch" + std::to_string(b),
                         blocks_[bi][static_cast<std::size_t>(b)]);
        }
    }
    out.emplace_back("embed.weight", embed_weight_);
    out.emplace_back("embed.bias", embed_bias_);
    out.emplace_back("head.class_weights", class_weights_);
    return out;
}

std::int64_t Model::parameter_count() const {
    std::int64_t total = 0;
    auto self = const_cast<Model*>(this);
    for (auto& [name, t] : self->parameters()) total += t.numel();
    return total;
}

std::vector<std::pair<std::string, Shape>> Model::shape_trace(const Shape& input) const {
    if (input.size() != 5) throw DimensionError("shape_trace: input must be rank 5");
    std::vector<std::pair<std::string, Shape>> trace;
    const int n = input[0];
    auto conv_shape = [](const Shape& in, int out_ch, std::array<int, 3> k, nn::Dim3 stride,
                         nn::Padding pad) {
        return Shape{in[0], out_ch,
                     nn::conv_output_extent(in[2], k[0], stride.d, pad),
                     nn::conv_output_extent(in[3], k[1], stride.h, pad),
                     nn::conv_output_extent(in[4], k[2], stride.w, pad)};
    };
    auto pool_shape = [](const Shape& in, nn::Dim3 w, nn::Dim3 s) {
        return Shape{in[0], in[1], (in[2] - w.d) / s.d + 1, (in[3] - w.h) / s.h + 1,
                     (in[4] - w.w) / s.w + 1};
    };
    Shape cur = conv_shape(input, config_.stem_channels, config_.stem_kernel,
                           {config_.stem_stride, config_.stem_stride, config_.stem_stride},
                           nn::Padding::Same);
    trace.emplace_back("stem", cur);
    cur = pool_shape(cur, {1, 3, 3}, {1, 2, 2});
    trace.emplace_back("stem_pool", cur);
    for (std::size_t bi = 0; bi < config_.blocks.size(); ++bi) {
        cur[1] = config_.blocks[bi].total();  // same-padded stride-1 branches, concatenated
        trace.emplace_back("block" + std::to_string(bi), cur);
        if (bi + 1 < config_.blocks.size()) {
            cur = pool_shape(cur, {2, 2, 2}, {2, 2, 2});
            trace.emplace_back("block" + std::to_string(bi) + "_pool", cur);
        }
    }
    trace.emplace_back("gap", Shape{n, cur[1]});
    trace.emplace_back("embedding", Shape{n, config_.embedding_dim});
    trace.emplace_back("logits", Shape{n, config_.num_classes});
    return trace;
}

template <typename Fn>
void Model::visit_state(Fn&& fn) const {
    auto self = const_cast<Model*>(this);
    for (auto& [name, t] : self->parameters()) {
        fn(name, t.shape(), t.vec());
    }
    auto push_bn_state = [&fn](const std::string& prefix, const ConvBn& layer) {
        const int c = layer.kernel.dim(0);
        fn(prefix + ".running_mean", Shape{c}, layer.bn_state.running_mean);
        fn(prefix + ".running_var", Shape{c}, layer.bn_state.running_var);
    };
    push_bn_state("stem", stem_);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        for (int b = 0; b < 4; ++b) {
            push_bn_state("block" + std::to_string(bi) + ".branch" + std::to_string(b),
                          blocks_[bi][static_cast<std::size_t>(b)]);
        }
    }
}

std::vector<NamedArray> Model::state_arrays() const {
    std::vector<NamedArray> arrays;
    visit_state([&arrays](const std::string& name, const Shape& shape,
                          const std::vector<float>& values) {
        arrays.push_back({name, shape, values});
    });
    return arrays;
}

void Model::load_state_arrays(const std::vector<NamedArray>& arrays) {
    std::map<std::string, const NamedArray*> by_name;
    for (const NamedArray& a : arrays) by_name[a.name] = &a;

    auto fill = [&by_name](const std::string& name, const Shape& shape, std::vector<float>& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw ConfigError("checkpoint is missing array '" + name + "'");
        }
        if (it->second->shape != shape) {
            throw ConfigError("checkpoint array '" + name + "' has shape " +
                              shape_str(it->second->shape) + ", model expects " + shape_str(shape));
        }
        dst = it->second->data;
    };
    for (auto& [name, t] : parameters()) fill(name, t.shape(), t.vec());
    auto fill_bn = [&fill](const std::string& prefix, ConvBn& layer) {
        const int c = layer.kernel.dim(0);
        fill(prefix + ".running_mean", Shape{c}, layer.bn_state.running_mean);
        fill(prefix + ".running_var", Shape{c}, layer.bn_state.running_var);
    };
    fill_bn("stem", stem_);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        for (int b = 0; b < 4; ++b) {
            fill_bn("block" + std::to_string(bi) + ".branch" + std::to_string(b),
                    blocks_[bi][static_cast<std::size_t>(b)]);
        }
    }
}

void Model::save(const std::filesystem::path& path) const {
    save_checkpoint(path, state_arrays());
    std::ofstream cfg(path.string() + ".json");
    if (!cfg) throw DatasetError("cannot write " + path.string() + ".json");
    cfg << config_.to_json_string() << "\n";
}

Model Model::load(const std::filesystem::path& path) {
    const std::filesystem::path cfg_path = path.string() + ".json";
    std::ifstream cfg(cfg_path);
    if (!cfg) throw DatasetError("cannot open " + cfg_path.string());
    std::string text((std::istreambuf_iterator<char>(cfg)), std::istreambuf_iterator<char>());
    Model model(BackboneConfig::from_json_string(text), /*seed=*/0);
    model.load_state_arrays(load_checkpoint(path));
    return model;
}

}  // namespace iris3d
