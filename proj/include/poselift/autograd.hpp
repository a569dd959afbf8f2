#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "poselift/tensor.hpp"

// Tape-free reverse-mode differentiation: every recorded value keeps
// references to the values it was computed from, and `backward` walks that
// DAG once in reverse topological order.
namespace poselift::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Reads `self.grad` and accumulates into the grads of `self.inputs`.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    std::vector<NodePtr> inputs;
    BackwardFn backward;
    bool requires_grad = false;

    // Zero-initialized on first use.
    Tensor& grad_buffer();
    void accumulate(const Tensor& g);
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool defined() const { return node_ != nullptr; }

    // Gradient after `backward`; a zero tensor if nothing reached this value.
    Tensor grad() const;
    void zero_grad() { node_->grad = Tensor(); }

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Records an op result. When gradients are disabled, or no input requires
// them, the result is a detached constant and `fn` is dropped.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn);

// Populates grads of every value reachable from `loss`. Grads accumulate
// across calls until zeroed.
void backward(const Var& loss);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace poselift::ag

namespace poselift {

// A named trainable leaf.
struct Parameter {
    std::string name;
    ag::Var var;

    Parameter(std::string n, Tensor value) : name(std::move(n)), var(std::move(value), true) {}

    Tensor& value() { return var.mutable_value(); }
    const Tensor& value() const { return var.value(); }
    Tensor grad() const { return var.grad(); }
    void zero_grad() { var.zero_grad(); }
};

}  // namespace poselift
