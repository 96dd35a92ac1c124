// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "numerics/tensor.hpp"

namespace m2a::num {

/// A named trainable tensor. `value` is mutated only by the optimizer;
/// `grad` accumulates across backward sweeps until `zero_grad`.
struct Parameter {
    Parameter(std::string name, Tensor value);

    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    /// Set when a backward sweep wrote into `grad` since the last zero_grad.
    bool has_grad = false;

    void zero_grad();
};

using ParamPtr = std::shared_ptr<Parameter>;

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Explicit computation record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is always a
/// valid topological order. `backward` sweeps it in reverse and deposits
/// parameter gradients into `Parameter::grad`.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Non-differentiable input.
    Var constant(Tensor value);
    /// Differentiable leaf whose gradient is readable via `grad()`.
    Var variable(Tensor value);
    /// Leaf bound to a parameter. Reuses the node if the parameter is
    /// already on this tape. Frozen parameters become constants.
    Var param(Parameter& p);

    /// Appends an op output. `backward` is dropped when no input needs grad.
    Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

    const Tensor& value(int id) const;
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }

    /// Adds `g` into the gradient slot of node `id` (no-op for constants).
    void accumulate(int id, const Tensor& g);

    /// Reverse sweep from a scalar loss.
    void backward(Var loss);

    /// Gradient of a node after backward; zeros if none reached it.
    Tensor grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* borrowed = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Parameter* param = nullptr;
        BackwardFn backward;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
};

}  // namespace m2a::num
