// SPDX-License-Identifier: Apache-2.0
#include "numerics/autograd.hpp"

#include "common/error.hpp"

namespace m2a::num {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros(value.shape())) {}

void Parameter::zero_grad() {
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
    has_grad = false;
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::push(Node node) {
    if (finite_checks_enabled()) {
        const Tensor& v = node.borrowed ? *node.borrowed : node.value;
        if (!v.all_finite()) {
            throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
        }
    }
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.borrowed = &p.value;
    n.requires_grad = p.trainable;
    n.param = p.trainable ? &p : nullptr;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (int in : inputs) {
        if (nodes_[static_cast<std::size_t>(in)].requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

const Tensor& Tape::value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.borrowed ? *n.borrowed : n.value;
}

void Tape::accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
        return;
    }
    if (n.grad.shape() != g.shape()) {
        throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match " + to_string(n.grad.shape()));
    }
    auto dst = n.grad.data();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw StateError("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1) {
        throw ShapeError("backward needs a scalar loss, got shape " + to_string(value(loss.id).shape()));
    }
    if (!requires_grad(loss.id)) return;
    accumulate(loss.id, Tensor::filled(value(loss.id).shape(), 1.0));
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.has_grad) continue;
        // Callbacks only accumulate into earlier nodes, so `n` stays put.
        if (n.backward) n.backward(*this, n.grad);
        if (n.param != nullptr) {
            auto dst = n.param->grad.data();
            auto src = n.grad.values();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            n.param->has_grad = true;
        }
    }
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.has_grad) return n.grad;
    return Tensor::zeros(value(v.id).shape());
}

}  // namespace m2a::num
