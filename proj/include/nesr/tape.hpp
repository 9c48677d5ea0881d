#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "nesr/tensor.hpp"

namespace nesr {

// Record of one training step's computation. Nodes are appended in execution
// order, so the list is topologically sorted by construction: every node's
// inputs were recorded before the node itself. backward() replays the list
// once in reverse, accumulating gradients additively across fan-out.
//
// A tape has a single writer: one step owns one tape. Tensors handed to ops
// while tracked must not be mutated until the tape is dropped.
template <class T>
class Tape {
public:
    using BackFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf (trainable input). Returns a tracked alias; the
    // original handle keeps no tape affiliation.
    Tensor<T> leaf(const Tensor<T>& t) {
        Tensor<T> alias = t.detached();
        alias.attach(this, add_node({}, nullptr));
        nodes_.back().shape = alias.shape();
        return alias;
    }

    // Records an interior node. `back` receives the accumulated output
    // gradient and pushes contributions to parents via accumulate().
    int add_node(std::vector<int> parents, BackFn back) {
        nodes_.push_back(Node{std::move(parents), std::move(back), {}});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor<T> emit(Tensor<T> value, std::vector<int> parents, BackFn back) {
        int id = add_node(std::move(parents), std::move(back));
        nodes_[id].shape = value.shape();
        value.attach(this, id);
        return value;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // Adds a contribution to a node's gradient. The first contribution is
    // stored as an alias; a second contribution clones before adding so no
    // caller-visible buffer is ever mutated.
    void accumulate(int node, const Tensor<T>& g) {
        Slot& s = grads_[node];
        if (!s.value.defined()) {
            s.value = g.detached();
            s.owned = false;
            return;
        }
        if (!s.owned) {
            s.value = s.value.clone();
            s.owned = true;
        }
        T* dst = s.value.data();
        const T* src = g.data();
        const std::size_t n = s.value.size();
        if (g.size() != n) {
            throw DimensionError("gradient accumulation shape mismatch: " + shape_str(s.value.shape()) +
                                 " vs " + shape_str(g.shape()));
        }
        for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
    }

    // Reverse sweep from a scalar root. Each node is visited exactly once;
    // leaves not reached by the sweep report zero gradients.
    void backward(const Tensor<T>& root) {
        if (root.tape() != this) {
            throw UsageError("backward: root tensor was not produced on this tape");
        }
        if (root.size() != 1) {
            throw UsageError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
        }
        grads_.assign(nodes_.size(), Slot{});
        accumulate(root.node(), Tensor<T>::ones({1}));
        for (int i = root.node(); i >= 0; --i) {
            Slot& s = grads_[i];
            if (!s.value.defined()) continue;
            if (nodes_[i].back) {
                nodes_[i].back(*this, s.value);
                s.value = Tensor<T>();  // interior grads are dead after replay
            }
        }
        swept_ = true;
    }

    // Gradient of a tracked leaf after backward(); zero if the sweep never
    // reached it.
    Tensor<T> grad(const Tensor<T>& leaf) const {
        if (leaf.tape() != this) {
            throw UsageError("grad: tensor is not tracked on this tape");
        }
        if (!swept_) {
            throw UsageError("grad: call backward() first");
        }
        const Slot& s = grads_[leaf.node()];
        if (!s.value.defined()) return Tensor<T>::zeros(leaf.shape());
        return s.value.detached();
    }

private:
    struct Node {
        std::vector<int> parents;
        BackFn back;
        std::vector<std::size_t> shape;
    };
    struct Slot {
        Tensor<T> value;
        bool owned = false;
    };

    std::vector<Node> nodes_;
    std::vector<Slot> grads_;
    bool swept_ = false;
};

}  // namespace nesr
