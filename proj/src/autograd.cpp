#include "poselift/autograd.hpp"

#include <unordered_set>

#include "poselift/errors.hpp"

namespace poselift::ag {
namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
    if (grad.size() == 0) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    if (g.shape() != value.shape())
        throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match value " + to_string(value.shape()));
    Tensor& buf = grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->grad.size() == 0) return Tensor(node_->value.shape());
    return node_->grad;
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Var& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (Var& in : inputs) node->inputs.push_back(in.node());
            node->backward = std::move(fn);
        }
    }
    return Var(std::move(node));
}

void backward(const Var& loss) {
    if (loss.value().size() != 1)
        throw ShapeError("backward expects a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->accumulate(Tensor(loss.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->grad.size() != 0) node->backward(*node);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace poselift::ag
