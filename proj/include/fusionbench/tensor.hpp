#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fusionbench/errors.hpp"

namespace fusion {

template <class T>
class BasicTensor;

namespace detail {

// One recorded value in the computation graph. Parents plus backward_fn form
// the reverse-mode record; seq is the creation order, which is a topological
// order because tensors are immutable once created.
template <class T>
struct Node {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;  // leaf flag set by the user
    bool on_graph = false;       // produced by a recorded op
    std::vector<T> grad;         // lazily allocated, same length as data
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t seq = 0;

    bool needs_grad() const { return requires_grad || on_graph; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

inline std::uint64_t next_seq() {
    thread_local std::uint64_t counter = 0;
    return ++counter;
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII guard disabling graph recording, for analysis / evaluation paths.
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// N-dimensional row-major array with an optional gradient slot. Value type
// with shared storage; treat as immutable once it has entered a graph.
// T is float for the production path, double for oracle checks.
template <class T>
class BasicTensor {
public:
    using Node = detail::Node<T>;

    BasicTensor() : n_(std::make_shared<Node>()) { n_->seq = detail::next_seq(); }

    static BasicTensor zeros(std::vector<int> shape) {
        return filled(std::move(shape), T(0));
    }

    static BasicTensor filled(std::vector<int> shape, T value) {
        BasicTensor t;
        t.n_->shape = std::move(shape);
        t.n_->data.assign(count(t.n_->shape), value);
        return t;
    }

    static BasicTensor from_data(std::vector<int> shape, std::vector<T> data) {
        if (count(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        BasicTensor t;
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(data);
        return t;
    }

    static BasicTensor scalar(T value) { return from_data({}, {value}); }

    const std::vector<int>& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int size(int dim) const { return n_->shape[static_cast<std::size_t>(dim)]; }
    std::size_t numel() const { return n_->data.size(); }

    std::span<T> data() { return n_->data; }
    std::span<const T> data() const { return n_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    BasicTensor& set_requires_grad(bool v) {
        n_->requires_grad = v;
        return *this;
    }
    bool needs_grad() const { return n_->needs_grad(); }

    // Gradient accumulated by the last backward pass; zeros if untouched.
    BasicTensor grad() const {
        BasicTensor g = zeros(n_->shape);
        if (n_->grad.size() == n_->data.size())
            std::copy(n_->grad.begin(), n_->grad.end(), g.data().begin());
        return g;
    }

    void zero_grad() { n_->grad.clear(); }

    std::shared_ptr<Node> node() const { return n_; }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

// Attach graph edges to `out` if recording is on and any input needs grad.
// `fn` reads out.grad and accumulates into the parents' grads.
template <class T>
void record(BasicTensor<T>& out, std::initializer_list<BasicTensor<T>> inputs,
            std::function<void(Node<T>&)> fn) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& in : inputs) any = any || in.needs_grad();
    if (!any) return;
    auto n = out.node();
    n->on_graph = true;
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(fn);
}

template <class T>
void accumulate(Node<T>& target, std::size_t idx, T value) {
    target.ensure_grad();
    target.grad[idx] += value;
}

#ifndef NDEBUG
template <class T>
void check_finite(const BasicTensor<T>& t, const char* op) {
    for (T v : t.data())
        assert(std::isfinite(static_cast<double>(v)) && "non-finite forward output" && op);
}
#else
template <class T>
void check_finite(const BasicTensor<T>&, const char*) {}
#endif

}  // namespace detail

// Topologically ordered record of the ops reachable from a root tensor.
// Built on demand from the graph edges; creation order (seq) is already
// topological, so ordering reduces to a sort of the reachable set.
template <class T>
class Tape {
public:
    using Node = detail::Node<T>;

    static Tape build(const BasicTensor<T>& root) {
        Tape tape;
        tape.root_ = root.node();
        std::unordered_set<const Node*> seen;
        std::vector<std::shared_ptr<Node>> stack{tape.root_};
        seen.insert(tape.root_.get());
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            tape.order_.push_back(n);
            for (const auto& p : n->parents)
                if (seen.insert(p.get()).second) stack.push_back(p);
        }
        std::sort(tape.order_.begin(), tape.order_.end(),
                  [](const auto& a, const auto& b) { return a->seq < b->seq; });
        return tape;
    }

    std::size_t size() const { return order_.size(); }

    // Reverse sweep: seeds d(root)/d(root) = 1, then visits each recorded
    // node exactly once in reverse topological order.
    void backward() {
        root_->ensure_grad();
        root_->grad[0] += T(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Node& n = **it;
            if (!n.backward_fn) continue;
            n.ensure_grad();
            n.backward_fn(n);
        }
    }

private:
    std::vector<std::shared_ptr<Node>> order_;
    std::shared_ptr<Node> root_;
};

// Reverse-mode pass from a scalar loss. Gradients accumulate additively
// across fan-out; tensors not reachable from the loss keep zero grad.
template <class T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    Tape<T>::build(loss).backward();
}

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace fusion
