#include "iris3d/optimizer.hpp"

#include <cmath>

#include "iris3d/error.hpp"

namespace iris3d {

void Optimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        update(i, params_[i]);
    }
}

void Optimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float eps)
    : Optimizer(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    lr_ = lr;
    m_.resize(params_.size());
    v_.resize(params_.size());
    steps_.assign(params_.size(), 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
        v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
    }
}

void Adam::update(std::size_t i, Tensor& p) {
    const std::vector<float>& g = p.grad();
    float* w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    const std::int64_t t = ++steps_[i];
    const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t));
    for (std::size_t k = 0; k < g.size(); ++k) {
        m[k] = beta1_ * m[k] + (1.0f - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0f - beta2_) * g[k] * g[k];
        const float mhat = m[k] / bc1;
        const float vhat = v[k] / bc2;
        w[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, float lr, float momentum)
    : Optimizer(std::move(params)), momentum_(momentum) {
    lr_ = lr;
    velocity_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        velocity_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
    }
}

void SgdMomentum::update(std::size_t i, Tensor& p) {
    const std::vector<float>& g = p.grad();
    float* w = p.data();
    auto& vel = velocity_[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
        vel[k] = momentum_ * vel[k] + g[k];
        w[k] -= lr_ * vel[k];
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, std::vector<Tensor> params,
                                          float lr, float momentum) {
    if (kind == "adam") return std::make_unique<Adam>(std::move(params), lr);
    if (kind == "sgd-momentum") return std::make_unique<SgdMomentum>(std::move(params), lr, momentum);
    throw ConfigError("optimizer kind must be 'adam' or 'sgd-momentum', got '" + kind + "'");
}

}  // namespace iris3d
