#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "poselift/denoiser.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

// Tables indexed by timestep 0..T. Index 0 is the clean sample:
// alpha_bar[0] = 1, beta[0] = 0.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int t) const;
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2); betas
// are clipped at kMaxBeta and alpha_bar is the cumulative product of the
// clipped alphas.
DiffusionSchedule cosine_schedule(int T);

// y_t = sqrt(abar_t) y_0 + sqrt(1 - abar_t) eps. The per-row overload takes
// one timestep per leading-axis entry.
Tensor q_sample(const Tensor& y0, int t, const Tensor& eps, const DiffusionSchedule& sched);
Tensor q_sample(const Tensor& y0, std::span<const int> t, const Tensor& eps, const DiffusionSchedule& sched);

// Noise implied by a clean-sample estimate: (y_t - sqrt(abar_t) y0_hat) / sqrt(1 - abar_t).
Tensor epsilon_hat(const Tensor& y_t, const Tensor& y0_hat, int t, const DiffusionSchedule& sched);

// sqrt((1 - abar_t')/(1 - abar_t)) * sqrt(1 - abar_t/abar_t'), for 0 <= t' <= t.
double sigma(int t, int t_next, const DiffusionSchedule& sched);

enum class Radicand {
    kStandard,  // 1 - abar_t' - sigma^2 (variance preserving)
    kPrinted,   // 1 + abar_t - sigma^2, kept for comparison only
};

struct StepOptions {
    Radicand radicand = Radicand::kStandard;
    // When set, incremented every time the radicand was negative and clamped.
    std::size_t* clamped = nullptr;
};

// y_t' = sqrt(abar_t') y0_hat + eps_t sqrt(max(0, radicand)) + sigma_t eps_draw.
Tensor ddim_step(const Tensor& y_t, const Tensor& y0_hat, int t, int t_next, const Tensor& eps_draw,
                 const DiffusionSchedule& sched, StepOptions options = {});

// (t, t') pairs with t_k = round(T (1 - k/K)); the last pair has t' = 0,
// which means "emit the clean estimate".
struct TimestepPair {
    int t;
    int t_next;
    bool operator==(const TimestepPair&) const = default;
};
std::vector<TimestepPair> iteration_schedule(int T, int K);

struct SamplerConfig {
    int hypotheses = 1;
    int iterations = 1;
    std::uint64_t seed = 0;
    StepOptions step;

    void validate(int T) const;
};

struct HypothesisSet {
    Tensor poses;  // [H, J, 3]
};

// (y_t [N,J,3], x [N,J,2], t [N]) -> y0_hat [N,J,3]
using DenoiseFn = std::function<Tensor(const Tensor&, const Tensor&, std::span<const int>)>;

// Eval-mode, gradient-free adapter around a trained model.
DenoiseFn model_denoiser(Denoiser& model);

// Draws H independent y_T ~ N(0, I) per input and runs the K-step reverse
// process. Row (b, h) uses RNG stream (seed, index_offset + b, h), so results
// do not depend on how inputs are batched.
std::vector<HypothesisSet> sample(const DenoiseFn& denoiser, const Tensor& x, const SamplerConfig& config,
                                  const DiffusionSchedule& sched, std::uint64_t index_offset = 0);

}  // namespace poselift
