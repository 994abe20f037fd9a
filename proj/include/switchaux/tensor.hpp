#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace swaux {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Thrown for any extent/rank disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

// One vertex of the differentiation graph. Interior nodes own a closure that
// pushes their accumulated grad into the parents' grads.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// A Tensor is a cheap handle onto a shared graph node: copies alias the
/// same storage. Use clone() for an independent copy. Graphs are built by
/// the free functions in ops.hpp and released when the last handle drops.
/// A graph must not be shared mutably between threads.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

    static Tensor full(Shape shape, double fill) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        auto node = std::make_shared<detail::Node>();
        node->value.assign(shape_numel(shape), fill);
        node->shape = std::move(shape);
        return Tensor(std::move(node));
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        if (values.size() != shape_numel(shape))
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node().shape; }
    std::size_t dim(std::size_t i) const { return node().shape.at(i); }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t numel() const { return node().value.size(); }

    std::span<const double> values() const { return node().value; }
    std::span<double> mutable_values() { return node().value; }
    double operator[](std::size_t i) const { return node().value[i]; }
    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node().value[0];
    }

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node().requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node().grad.size() == node().value.size(); }
    /// Gradient view; empty when no gradient has reached this tensor.
    std::span<const double> grad() const { return node().grad; }
    std::span<double> mutable_grad() { return node().grad_buffer(); }
    std::vector<double> grad_or_zero() const {
        return has_grad() ? node().grad : std::vector<double>(numel(), 0.0);
    }
    void zero_grad() { node().grad.assign(node().value.size(), 0.0); }

    const char* op() const { return node().op; }

    /// Same values, cut from the graph.
    Tensor detach() const { return from(shape(), node().value); }
    Tensor clone() const {
        Tensor t = detach();
        t.node().requires_grad = requires_grad();
        return t;
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    /// Reverse-mode sweep from a single-element tensor. Leaf gradients
    /// accumulate across calls; each interior node is visited once.
    void backward() const;

    // Internal: construct an interior node. Used by ops.hpp.
    static Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                              std::vector<Tensor> parents, std::function<void(detail::Node&)> fn) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->op = op;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node_);
            node->backward_fn = std::move(fn);
        }
        return Tensor(std::move(node));
    }

    detail::Node& node() const {
        if (!node_) throw std::logic_error("use of undefined Tensor");
        return *node_;
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
    if (numel() != 1)
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    if (!requires_grad()) return;

    // Iterative post-order DFS gives a topological order without recursion depth issues.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace swaux
