#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crl/common.hpp"

namespace crl {

// Dense rank-4 array (batch, channels, height, width) with reverse-mode
// autodiff. Value semantics on the handle; the node (data + graph edges) is
// shared. A graph is single-writer: build and run backward from one thread.
template <typename S>
class TensorT {
public:
    using Scalar = S;
    using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

    struct Node {
        Shape4 shape;
        Array value;
        Array grad;  // sized lazily at backward time
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;  // pull from node.grad, push into parents
        const char* op = "leaf";

        bool has_grad() const { return grad.size() == value.size(); }
        void ensure_grad() {
            if (!has_grad()) grad = Array::Zero(value.size());
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    TensorT() = default;

    static TensorT zeros(Shape4 shape, bool requires_grad = false) {
        return from_array(shape, Array::Zero(shape.numel()), requires_grad);
    }
    static TensorT constant(Shape4 shape, S v, bool requires_grad = false) {
        return from_array(shape, Array::Constant(shape.numel(), v), requires_grad);
    }
    static TensorT from_array(Shape4 shape, Array data, bool requires_grad = false) {
        if (data.size() != shape.numel())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape.str());
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = shape;
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }
    static TensorT from_vector(Shape4 shape, const std::vector<S>& data,
                               bool requires_grad = false) {
        Array a(data.size());
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = data[std::size_t(i)];
        return from_array(shape, std::move(a), requires_grad);
    }
    static TensorT uniform(Shape4 shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
        Array a(shape.numel());
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = S(rng.uniform(double(lo), double(hi)));
        return from_array(shape, std::move(a), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape4& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->shape.numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    Array& data() { return node_->value; }
    const Array& data() const { return node_->value; }
    S* raw() { return node_->value.data(); }
    const S* raw() const { return node_->value.data(); }

    // Gradient of the last backward() pass; zeros if this leaf was not reached.
    Array grad() const {
        if (node_->has_grad()) return node_->grad;
        return Array::Zero(node_->value.size());
    }
    void zero_grad() {
        if (node_->has_grad()) node_->grad.setZero();
    }

    S& at(int n, int c, int y, int x) { return node_->value[flat(n, c, y, x)]; }
    S at(int n, int c, int y, int x) const { return node_->value[flat(n, c, y, x)]; }

    S item() const {
        if (numel() != 1) throw UsageError("item() requires a one-element tensor");
        return node_->value[0];
    }

    bool all_finite() const {
        return node_->value.isFinite().all();
    }

    // Same values, no history; keeps requires_grad off.
    TensorT detach() const {
        return from_array(shape(), node_->value, false);
    }

    NodePtr node() const { return node_; }

    // Graph construction helper used by every primitive.
    static TensorT make_op(Shape4 shape, Array value, const char* op,
                           std::vector<TensorT> parents,
                           std::function<void(Node&)> backward) {
        TensorT out = from_array(shape, std::move(value), false);
        out.node_->op = op;
        bool track = false;
        for (const auto& p : parents) track = track || p.node_->requires_grad;
        if (track) {
            out.node_->requires_grad = true;
            out.node_->parents.reserve(parents.size());
            for (auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

    // Reverse-mode sweep from a scalar root. Visits each node exactly once in
    // reverse topological order; leaves not on a path to the root keep zero grad.
    void backward() const {
        if (numel() != 1) throw UsageError("backward() requires a scalar root");
        std::vector<Node*> order;
        topo_sort(node_.get(), order);
        for (Node* n : order) {
            if (n->requires_grad) {
                n->ensure_grad();
                n->grad.setZero();
            }
        }
        node_->ensure_grad();
        node_->grad.setZero();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward) n->backward(*n);
        }
    }

private:
    std::int64_t flat(int n, int c, int y, int x) const {
        const Shape4& s = node_->shape;
        return ((std::int64_t(n) * s.c + c) * s.h + y) * s.w + x;
    }

    static void topo_sort(Node* root, std::vector<Node*>& order) {
        // Iterative DFS; the graph is a DAG by construction.
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* parent = node->parents[idx++].get();
                if (visited.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    NodePtr node_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

}  // namespace crl
