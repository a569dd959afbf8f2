#pragma once

#include "poselift/autograd.hpp"

namespace poselift {

enum class Mode { kTrain, kEval };

// Running statistics of one batch-norm layer. Not a Parameter: they are
// updated by the forward pass, not by the optimizer.
struct BatchNormState {
    explicit BatchNormState(std::size_t features, double momentum = 0.1, double eps = 1e-5);

    std::size_t features;
    double momentum;
    double eps;
    Tensor running_mean;
    Tensor running_var;
};

// Normalizes each feature (last axis) over all remaining axes. Train mode
// uses the batch statistics and folds them into `state`; eval mode uses the
// running statistics only. The running variance tracks the biased batch
// variance, the same quantity train mode normalizes with.
ag::Var batch_norm(const ag::Var& z, const ag::Var& gamma, const ag::Var& beta, BatchNormState& state, Mode mode);

}  // namespace poselift
