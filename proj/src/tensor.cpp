#include "iris3d/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "iris3d/error.hpp"

namespace iris3d {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<float>& TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
}

void TensorImpl::accumulate_grad(const std::vector<float>& g) {
    auto& dst = ensure_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

namespace {

TensorImplPtr make_impl(const Shape& shape, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extent must be positive, got shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->requires_grad = requires_grad;
    return impl;
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto impl = make_impl(shape, requires_grad);
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    auto impl = make_impl(shape, requires_grad);
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<float> values, bool requires_grad) {
    auto impl = make_impl(shape, requires_grad);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    impl->data = std::move(values);
    return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

int Tensor::dim(int axis) const {
    if (axis < 0 || axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(impl_->shape));
    }
    return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

float* Tensor::data() { return impl_->data.data(); }
const float* Tensor::data() const { return impl_->data.data(); }
std::vector<float>& Tensor::vec() { return impl_->data; }
const std::vector<float>& Tensor::vec() const { return impl_->data; }

float Tensor::item() const {
    if (numel() != 1) {
        throw UsageError("item() requires a scalar tensor, got shape " + shape_str(impl_->shape));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

const std::vector<float>& Tensor::grad() const {
    if (impl_->grad.empty()) throw UsageError("tensor has no gradient");
    return impl_->grad;
}

std::vector<float>& Tensor::grad() {
    if (impl_->grad.empty()) throw UsageError("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

bool Tensor::all_finite() const {
    for (float v : impl_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

// post-order DFS: every node appears after all of its parents; the order
// holds shared ownership so releasing graph edges mid-walk cannot free a
// node that is still pending
std::vector<TensorImplPtr> topo_order(const TensorImplPtr& root) {
    std::vector<TensorImplPtr> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImplPtr node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack{{root, 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorImplPtr p = f.node->parents[f.next_parent++];
            if (visited.insert(p.get()).second) stack.push_back({std::move(p), 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void backward(const Tensor& loss, bool release_graph) {
    if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
    if (loss.numel() != 1) {
        throw UsageError("backward() requires a scalar loss, got shape " +
                         shape_str(loss.shape()));
    }
    TensorImpl* root = loss.node();
    if (!root->requires_grad) {
        throw UsageError("backward() loss is not connected to any differentiable input");
    }
    if (root->released) throw UsageError("backward() on a released graph");

    auto order = topo_order(loss.impl());
    root->ensure_grad()[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = it->get();
        if (node->released) throw UsageError("backward() on a released graph");
        if (node->backward_fn && !node->grad.empty()) node->backward_fn();
        if (!node->is_leaf()) {
            node->grad = {};
            if (release_graph) {
                node->data = {};
                node->backward_fn = nullptr;
                node->parents.clear();
                node->released = true;
            }
        }
    }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace iris3d
