#pragma once

#include <memory>
#include <string>
#include <vector>

#include "iris3d/tensor.hpp"

namespace iris3d {

// In-place parameter updates from accumulated gradients. Parameters that
// carry no gradient this step are left untouched (and their moment state
// does not advance), which keeps frozen heads frozen.
class Optimizer {
public:
    explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
    virtual ~Optimizer() = default;

    void step();
    void zero_grad();
    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }

protected:
    virtual void update(std::size_t i, Tensor& p) = 0;
    std::vector<Tensor> params_;
    float lr_ = 0.0f;
};

class Adam : public Optimizer {
public:
    Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
         float eps = 1e-8f);

protected:
    void update(std::size_t i, Tensor& p) override;

private:
    float beta1_, beta2_, eps_;
    std::vector<std::vector<float>> m_, v_;
    std::vector<std::int64_t> steps_;
};

class SgdMomentum : public Optimizer {
public:
    SgdMomentum(std::vector<Tensor> params, float lr, float momentum = 0.9f);

protected:
    void update(std::size_t i, Tensor& p) override;

private:
    float momentum_;
    std::vector<std::vector<float>> velocity_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, std::vector<Tensor> params,
                                          float lr, float momentum);

}  // namespace iris3d
