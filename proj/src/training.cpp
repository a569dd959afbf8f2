#include "poselift/training.hpp"

#include <algorithm>
#include <cmath>

#include "poselift/errors.hpp"
#include "poselift/ops.hpp"
#include "poselift/rng.hpp"

namespace poselift {

Tensor stack_targets(const std::vector<const PoseRecord*>& batch, const PoseScaling& scaling) {
    const std::size_t J = batch.front()->x.dim(0);
    Tensor out({batch.size(), J, 3});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (!batch[b]->y) throw ValidationError("record '" + batch[b]->id + "' has no 3D ground truth");
        const Tensor& y = *batch[b]->y;
        for (std::size_t i = 0; i < J * 3; ++i) out[b * J * 3 + i] = y[i] / scaling.pose_mm;
    }
    return out;
}

Tensor stack_inputs(const std::vector<const PoseRecord*>& batch, const PoseScaling& scaling) {
    const std::size_t J = batch.front()->x.dim(0);
    Tensor out({batch.size(), J, 2});
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t i = 0; i < J * 2; ++i) out[b * J * 2 + i] = batch[b]->x[i] / scaling.input;
    return out;
}

ag::Var diffusion_loss(Denoiser& model, const Tensor& y0, const Tensor& x, std::span<const int> t, const Tensor& eps,
                       const DiffusionSchedule& sched, Mode mode) {
    const Tensor y_t = q_sample(y0, t, eps, sched);
    return ag::mse_loss(model.forward(y_t, x, t, mode), ag::constant(y0));
}

std::vector<double> train(Denoiser& model, const std::vector<PoseRecord>& records, const TrainConfig& config,
                          const DiffusionSchedule& sched, const std::function<void(std::size_t, double)>& on_epoch) {
    if (records.empty()) throw ValidationError("training set is empty");
    for (const auto& r : records)
        if (!r.y) throw ValidationError("training record '" + r.id + "' has no 3D ground truth");
    if (config.batch_size < 1) throw ConfigError("batch size must be positive");
    if (config.noise_draws < 1) throw ConfigError("noise_draws must be positive");
    if (!(config.lr_decay_start >= 0.0 && config.lr_decay_start <= 1.0))
        throw ConfigError("lr_decay_start must lie in [0, 1]");
    if (sched.T > model.config().max_timestep)
        throw ConfigError("schedule length exceeds the model's max_timestep");

    Rng rng(config.seed, 0x7a1);
    Adam adam(model.parameters(), config.adam);
    std::vector<std::size_t> order(records.size() * config.noise_draws);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i % records.size();
    std::vector<double> epoch_losses;
    const std::size_t steps_per_epoch = (order.size() + config.batch_size - 1) / config.batch_size;
    const double total_steps = static_cast<double>(steps_per_epoch * config.epochs);
    std::size_t global_step = 0;
    auto lr_at = [&](std::size_t step) {
        const double f = static_cast<double>(step) / total_steps;
        if (f < config.lr_decay_start) return config.adam.lr;
        return config.adam.lr * std::max(config.lr_floor, (1.0 - f) / (1.0 - config.lr_decay_start));
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<const PoseRecord*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&records[order[i]]);
            const Tensor y0 = stack_targets(batch, config.scaling);
            const Tensor x = stack_inputs(batch, config.scaling);
            std::vector<int> t(batch.size());
            for (int& ti : t) ti = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
            const Tensor eps = rng.normal_tensor(y0.shape());

            adam.zero_grad();
            ag::Var loss = diffusion_loss(model, y0, x, t, eps, sched, Mode::kTrain);
            const double value = loss.value().item();
            if (!std::isfinite(value))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(steps) + " (first timestep " + std::to_string(t.front()) + ")");
            ag::backward(loss);
            adam.set_lr(lr_at(global_step++));
            adam.step();
            total += value;
            ++steps;
        }
        epoch_losses.push_back(total / static_cast<double>(steps));
        if (on_epoch) on_epoch(epoch, epoch_losses.back());
    }
    return epoch_losses;
}

std::vector<Tensor> predict(Denoiser& model, const std::vector<PoseRecord>& records, const SamplerConfig& config,
                            const DiffusionSchedule& sched, const PoseScaling& scaling, std::size_t chunk) {
    const DenoiseFn denoiser = model_denoiser(model);
    std::vector<Tensor> out;
    out.reserve(records.size());
    for (std::size_t start = 0; start < records.size(); start += chunk) {
        const std::size_t end = std::min(records.size(), start + chunk);
        std::vector<const PoseRecord*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&records[i]);
        const auto sets = sample(denoiser, stack_inputs(batch, scaling), config, sched, start);
        for (const auto& s : sets) {
            Tensor mm = s.poses;
            for (double& v : mm.data()) v *= scaling.pose_mm;
            out.push_back(std::move(mm));
        }
    }
    return out;
}

}  // namespace poselift
