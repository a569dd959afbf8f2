#pragma once

#include <cstdint>
#include <vector>

#include "poselift/autograd.hpp"

namespace poselift::ag {

Var constant(Tensor value);

// Matrix product over the last two axes. Either operand may carry leading
// batch axes; a 2D operand is shared across the other's batch.
Var matmul(const Var& a, const Var& b);

// Elementwise with numpy-style broadcasting. Inputs are never modified.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var relu(const Var& a);
Var concat_last(const std::vector<Var>& parts);
Var reshape(const Var& a, Shape shape);

Var sum(const Var& a);                    // all elements, shape [1]
Var sum(const Var& a, std::size_t axis);  // axis removed
Var mean(const Var& a);
Var mean(const Var& a, std::size_t axis);

Var mse_loss(const Var& pred, const Var& target);

Shape broadcast_shape(const Shape& a, const Shape& b);

// Multiply-accumulates performed by forward matmuls since the last reset.
std::uint64_t mac_count();
void reset_mac_count();

}  // namespace poselift::ag
