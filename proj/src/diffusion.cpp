#include "poselift/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "poselift/errors.hpp"
#include "poselift/rng.hpp"

namespace poselift {

double DiffusionSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    return alpha_bar[static_cast<std::size_t>(t)];
}

DiffusionSchedule cosine_schedule(int T) {
    if (T < 1) throw ConfigError("diffusion needs at least one timestep");
    auto f = [T](int t) {
        const double c = std::cos(((static_cast<double>(t) / T + kCosineOffset) / (1.0 + kCosineOffset)) *
                                  std::numbers::pi / 2.0);
        return c * c;
    };
    DiffusionSchedule s;
    s.T = T;
    const std::size_t n = static_cast<std::size_t>(T) + 1;
    s.beta.assign(n, 0.0);
    s.alpha.assign(n, 1.0);
    s.alpha_bar.assign(n, 1.0);
    const double f0 = f(0);
    for (int t = 1; t <= T; ++t) {
        const double beta = 1.0 - (f(t) / f0) / (f(t - 1) / f0);
        s.beta[t] = std::min(beta, kMaxBeta);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

Tensor q_sample(const Tensor& y0, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    std::vector<int> ts(y0.rank() ? y0.dim(0) : 1, t);
    return q_sample(y0, ts, eps, sched);
}

Tensor q_sample(const Tensor& y0, std::span<const int> t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (y0.shape() != eps.shape())
        throw ShapeError("q_sample: y0 " + to_string(y0.shape()) + " and noise " + to_string(eps.shape()) + " differ");
    if (t.size() != y0.dim(0)) throw ShapeError("q_sample: one timestep per row required");
    const std::size_t row = y0.size() / y0.dim(0);
    Tensor out(y0.shape());
    for (std::size_t b = 0; b < t.size(); ++b) {
        if (t[b] < 1 || t[b] > sched.T)
            throw ConfigError("q_sample: timestep " + std::to_string(t[b]) + " outside [1, " + std::to_string(sched.T) + "]");
        const double ab = sched.alpha_bar[t[b]];
        const double a = std::sqrt(ab), c = std::sqrt(1.0 - ab);
        for (std::size_t i = b * row; i < (b + 1) * row; ++i) out[i] = a * y0[i] + eps[i] * c;
    }
    return out;
}

Tensor epsilon_hat(const Tensor& y_t, const Tensor& y0_hat, int t, const DiffusionSchedule& sched) {
    if (t < 1 || t > sched.T)
        throw ConfigError("epsilon_hat: timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
    if (y_t.shape() != y0_hat.shape()) throw ShapeError("epsilon_hat: shape mismatch");
    const double ab = sched.alpha_bar[t];
    const double a = std::sqrt(ab), c = std::sqrt(1.0 - ab);
    Tensor out(y_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (y_t[i] - a * y0_hat[i]) / c;
    return out;
}

double sigma(int t, int t_next, const DiffusionSchedule& sched) {
    if (t < 1 || t > sched.T) throw ConfigError("sigma: timestep " + std::to_string(t) + " outside [1, T]");
    if (t_next < 0 || t_next > t) throw ConfigError("sigma: next timestep must lie in [0, t]");
    const double ab = sched.alpha_bar[t];
    const double ab_next = sched.alpha_bar[t_next];
    return std::sqrt((1.0 - ab_next) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_next));
}

Tensor ddim_step(const Tensor& y_t, const Tensor& y0_hat, int t, int t_next, const Tensor& eps_draw,
                 const DiffusionSchedule& sched, StepOptions options) {
    if (t_next >= t) throw ConfigError("ddim_step: next timestep must be below the current one");
    if (eps_draw.shape() != y_t.shape()) throw ShapeError("ddim_step: noise shape mismatch");
    const Tensor eps_t = epsilon_hat(y_t, y0_hat, t, sched);
    const double sig = sigma(t, t_next, sched);
    const double ab_next = sched.alpha_bar_at(t_next);
    double radicand = options.radicand == Radicand::kStandard ? 1.0 - ab_next - sig * sig
                                                              : 1.0 + sched.alpha_bar[t] - sig * sig;
    if (radicand < 0.0) {
        if (options.clamped) ++*options.clamped;
        radicand = 0.0;
    }
    const double a = std::sqrt(ab_next), c = std::sqrt(radicand);
    Tensor out(y_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * y0_hat[i] + eps_t[i] * c + sig * eps_draw[i];
    return out;
}

std::vector<TimestepPair> iteration_schedule(int T, int K) {
    if (K < 1 || K > T)
        throw ConfigError("iteration count " + std::to_string(K) + " must lie in [1, T=" + std::to_string(T) + "]");
    // round(T (K - k) / K), half away from zero, in exact integer arithmetic
    auto step_t = [T, K](int k) {
        const long long num = 2LL * T * (K - k) + K;
        return static_cast<int>(num / (2LL * K));
    };
    std::vector<TimestepPair> pairs;
    for (int k = 0; k < K; ++k) {
        const int t = step_t(k);
        const int next = k + 1 < K ? step_t(k + 1) : 0;
        if (next >= t) throw ConfigError("iteration schedule has duplicate timestep " + std::to_string(t));
        pairs.push_back({t, next});
    }
    return pairs;
}

void SamplerConfig::validate(int T) const {
    if (hypotheses < 1) throw ConfigError("hypothesis count must be at least 1");
    iteration_schedule(T, iterations);
}

DenoiseFn model_denoiser(Denoiser& model) {
    return [&model](const Tensor& y_t, const Tensor& x, std::span<const int> t) {
        ag::NoGradGuard no_grad;
        return model.forward(y_t, x, t, Mode::kEval).value();
    };
}

std::vector<HypothesisSet> sample(const DenoiseFn& denoiser, const Tensor& x, const SamplerConfig& config,
                                  const DiffusionSchedule& sched, std::uint64_t index_offset) {
    config.validate(sched.T);
    if (x.rank() != 3 || x.dim(2) != 2) throw ShapeError("sample: x must be [B, J, 2], got " + to_string(x.shape()));
    const std::size_t B = x.dim(0), J = x.dim(1);
    const std::size_t H = static_cast<std::size_t>(config.hypotheses);
    const std::size_t rows = B * H;
    const std::size_t row_size = J * 3;

    Tensor x_rep({rows, J, 2});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            std::copy_n(x.data().data() + b * J * 2, J * 2, x_rep.data().data() + (b * H + h) * J * 2);

    std::vector<Rng> streams;
    streams.reserve(rows);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) streams.emplace_back(config.seed, index_offset + b, h);
    auto draw = [&]() {
        Tensor eps({rows, J, 3});
        const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static)
        for (long r = 0; r < n; ++r)
            for (std::size_t i = 0; i < row_size; ++i) eps[r * row_size + i] = streams[r].normal();
        return eps;
    };

    Tensor y = draw();
    Tensor y0_hat;
    for (const TimestepPair& step : iteration_schedule(sched.T, config.iterations)) {
        const std::vector<int> ts(rows, step.t);
        y0_hat = denoiser(y, x_rep, ts);
        if (y0_hat.shape() != y.shape()) throw ShapeError("sample: denoiser returned " + to_string(y0_hat.shape()));
        if (step.t_next == 0) break;
        y = ddim_step(y, y0_hat, step.t, step.t_next, draw(), sched, config.step);
    }

    std::vector<HypothesisSet> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        out[b].poses = Tensor({H, J, 3});
        std::copy_n(y0_hat.data().data() + b * H * row_size, H * row_size, out[b].poses.data().data());
    }
    return out;
}

}  // namespace poselift
