#pragma once

#include <vector>

#include "poselift/autograd.hpp"

namespace poselift {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment estimates plus the shared step count.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;
};

// One bias-corrected Adam update of every parameter from its current grad.
void adam_step(const std::vector<Parameter*>& params, const AdamConfig& config, AdamState& state);

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {}

    void step() { adam_step(params_, config_, state_); }
    void zero_grad();
    const AdamState& state() const { return state_; }
    void set_lr(double lr) { config_.lr = lr; }

private:
    std::vector<Parameter*> params_;
    AdamConfig config_;
    AdamState state_;
};

}  // namespace poselift
