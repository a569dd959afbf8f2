#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "poselift/denoiser.hpp"
#include "poselift/diffusion.hpp"
#include "poselift/evaluation.hpp"
#include "poselift/optim.hpp"

namespace poselift {

// Records are stored in millimeters (3D) and pixels or normalized units
// (2D); the network sees both divided by these factors.
struct PoseScaling {
    double pose_mm = 100.0;
    double input = 100.0;
};

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    // Each epoch visits every record this many times, each visit with its
    // own (t, eps) draw. Small sets overfit faster with several draws per
    // step than with one.
    std::size_t noise_draws = 1;
    AdamConfig adam;
    // The learning rate stays at adam.lr for this fraction of all steps,
    // then falls linearly toward lr_floor * adam.lr at the last step.
    // 1 keeps it constant.
    double lr_decay_start = 1.0;
    double lr_floor = 0.02;
    std::uint64_t seed = 0;
    PoseScaling scaling;
};

// Stacks record fields into [B, J, 3] / [B, J, 2] model-unit tensors.
Tensor stack_targets(const std::vector<const PoseRecord*>& batch, const PoseScaling& scaling);
Tensor stack_inputs(const std::vector<const PoseRecord*>& batch, const PoseScaling& scaling);

// MSE between y0 and D(q_sample(y0, t, eps), x, t).
ag::Var diffusion_loss(Denoiser& model, const Tensor& y0, const Tensor& x, std::span<const int> t, const Tensor& eps,
                       const DiffusionSchedule& sched, Mode mode = Mode::kTrain);

// Per step: t ~ U{1..T}, eps ~ N(0, I), one Adam update on the batch loss.
// Returns the mean loss of every epoch. Throws NumericError on a
// non-finite loss.
std::vector<double> train(Denoiser& model, const std::vector<PoseRecord>& records, const TrainConfig& config,
                          const DiffusionSchedule& sched,
                          const std::function<void(std::size_t, double)>& on_epoch = {});

// Multi-hypothesis predictions in millimeters, one [H, J, 3] per record.
std::vector<Tensor> predict(Denoiser& model, const std::vector<PoseRecord>& records, const SamplerConfig& config,
                            const DiffusionSchedule& sched, const PoseScaling& scaling, std::size_t chunk = 256);

}  // namespace poselift
