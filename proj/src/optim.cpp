#include "poselift/optim.hpp"

#include <cmath>

#include "poselift/errors.hpp"

namespace poselift {

void adam_step(const std::vector<Parameter*>& params, const AdamConfig& c, AdamState& state) {
    if (state.m.empty()) {
        for (const Parameter* p : params) {
            state.m.emplace_back(p->value().shape());
            state.v.emplace_back(p->value().shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter list");
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k]->value();
        const Tensor g = params[k]->grad();
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        if (m.shape() != w.shape()) throw ShapeError("adam_step: state shape mismatch for " + params[k]->name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace poselift
