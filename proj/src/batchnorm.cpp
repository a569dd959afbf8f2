#include "poselift/batchnorm.hpp"

#include <cmath>
#include <memory>

#include "poselift/errors.hpp"

namespace poselift {

BatchNormState::BatchNormState(std::size_t f, double m, double e)
    : features(f), momentum(m), eps(e), running_mean({f}, 0.0), running_var({f}, 1.0) {}

ag::Var batch_norm(const ag::Var& z, const ag::Var& gamma, const ag::Var& beta, BatchNormState& state, Mode mode) {
    const std::size_t d = state.features;
    if (z.shape().empty() || z.shape().back() != d)
        throw ShapeError("batch_norm: input " + to_string(z.shape()) + " does not end in feature width " +
                         std::to_string(d));
    if (gamma.value().size() != d || beta.value().size() != d)
        throw ShapeError("batch_norm: scale/shift must have " + std::to_string(d) + " entries");
    const std::size_t rows = z.value().size() / d;
    if (mode == Mode::kTrain && rows < 2)
        throw ShapeError("batch_norm: train mode needs at least 2 rows per feature, got " + std::to_string(rows));

    const Tensor& x = z.value();
    std::vector<double> mu(d, 0.0), var(d, 0.0);
    if (mode == Mode::kTrain) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < d; ++f) mu[f] += x[r * d + f];
        for (double& m : mu) m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < d; ++f) {
                const double c = x[r * d + f] - mu[f];
                var[f] += c * c;
            }
        for (std::size_t f = 0; f < d; ++f) {
            var[f] /= static_cast<double>(rows);
            state.running_mean[f] = (1.0 - state.momentum) * state.running_mean[f] + state.momentum * mu[f];
            state.running_var[f] = (1.0 - state.momentum) * state.running_var[f] + state.momentum * var[f];
        }
    } else {
        for (std::size_t f = 0; f < d; ++f) {
            mu[f] = state.running_mean[f];
            var[f] = state.running_var[f];
        }
    }

    auto inv_std = std::make_shared<std::vector<double>>(d);
    for (std::size_t f = 0; f < d; ++f) (*inv_std)[f] = 1.0 / std::sqrt(var[f] + state.eps);
    auto xhat = std::make_shared<Tensor>(x.shape());
    Tensor out(x.shape());
    const Tensor& g = gamma.value();
    const Tensor& b = beta.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t f = 0; f < d; ++f) {
            const std::size_t i = r * d + f;
            (*xhat)[i] = (x[i] - mu[f]) * (*inv_std)[f];
            out[i] = g[f] * (*xhat)[i] + b[f];
        }

    const bool train = mode == Mode::kTrain;
    return ag::make_result(std::move(out), {z, gamma, beta}, [=](ag::Node& self) {
        ag::Node& nz = *self.inputs[0];
        ag::Node& ng = *self.inputs[1];
        ag::Node& nb = *self.inputs[2];
        const Tensor& dy = self.grad;
        std::vector<double> sum_dy(d, 0.0), sum_dy_xhat(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < d; ++f) {
                const std::size_t i = r * d + f;
                sum_dy[f] += dy[i];
                sum_dy_xhat[f] += dy[i] * (*xhat)[i];
            }
        if (ng.requires_grad) {
            Tensor& gg = ng.grad_buffer();
            for (std::size_t f = 0; f < d; ++f) gg[f] += sum_dy_xhat[f];
        }
        if (nb.requires_grad) {
            Tensor& gb = nb.grad_buffer();
            for (std::size_t f = 0; f < d; ++f) gb[f] += sum_dy[f];
        }
        if (nz.requires_grad) {
            Tensor& gz = nz.grad_buffer();
            const Tensor& gam = ng.value;
            const double n = static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < d; ++f) {
                    const std::size_t i = r * d + f;
                    const double scale = gam[f] * (*inv_std)[f];
                    if (train)
                        gz[i] += scale * (dy[i] - sum_dy[f] / n - (*xhat)[i] * sum_dy_xhat[f] / n);
                    else
                        gz[i] += scale * dy[i];
                }
        }
    });
}

}  // namespace poselift
