#pragma once

#include <cstdint>
#include <random>

#include "poselift/tensor.hpp"

namespace poselift {

// Seedable generator with independent named streams. Stream (seed, a, b) is
// a fixed function of its three keys, so per-hypothesis streams can be
// derived without any shared state.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0);

    std::uint64_t next_u64() { return engine_(); }
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // Box-Muller, standard normal
    std::uint64_t below(std::uint64_t n);   // uniform integer in [0, n)

    Tensor normal_tensor(const Shape& shape);

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace poselift
