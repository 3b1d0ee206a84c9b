#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace iris3d {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation

    // graph record: inputs of the op that produced this value plus the
    // closure that pushes this->grad into their grads
    std::vector<TensorImplPtr> parents;
    std::function<void()> backward_fn;
    const char* op = "leaf";
    bool released = false;

    bool is_leaf() const { return parents.empty() && !backward_fn; }
    std::vector<float>& ensure_grad();
    void accumulate_grad(const std::vector<float>& g);
};

// Dense row-major float32 tensor handle. Copies share storage; values are
// treated as immutable once an op has written them.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from_vector(const Shape& shape, std::vector<float> values,
                              bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int axis) const;
    std::int64_t numel() const;

    float* data();
    const float* data() const;
    std::vector<float>& vec();
    const std::vector<float>& vec() const;

    float item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool v);
    bool has_grad() const;
    const std::vector<float>& grad() const;
    std::vector<float>& grad();
    void zero_grad();

    bool all_finite() const;

    TensorImplPtr impl() const { return impl_; }
    TensorImpl* node() const { return impl_.get(); }

private:
    TensorImplPtr impl_;
};

// Reverse-mode pass from a scalar loss. Records the reachable graph in
// topological order (the tape) and replays it backward, visiting each node
// exactly once. Interior gradients are scratch and are dropped as soon as
// they have been consumed; leaf gradients accumulate across calls.
// With release_graph, interior activations are freed as the walk passes
// them — the graph cannot be replayed afterwards.
void backward(const Tensor& loss, bool release_graph = false);

// While alive, ops do not record graph edges (pure inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

}  // namespace iris3d
