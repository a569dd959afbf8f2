#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poselift/denoiser.hpp"
#include "poselift/optim.hpp"
#include "poselift/training.hpp"

namespace poselift::cli {

// Everything a command may need. Loaded from --config (JSON), then
// overridden by flags; the resolved form is echoed to <out>/config.json.
struct RunConfig {
    std::string skeleton = "default";
    DenoiserConfig model;
    int timesteps = 1000;
    int hypotheses = 1;
    int iterations = 1;
    std::optional<std::uint64_t> seed;
    AdamConfig adam;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    std::size_t noise_draws = 1;
    double lr_decay_start = 1.0;
    std::string data;
    std::string checkpoint;
    std::string predictions;
    std::string out = ".";
    PoseScaling scaling;
    std::size_t count = 16;
    double noise_2d = 0.0;
    double bench_seconds = 3.0;
    std::size_t bench_batch = 16;
    bool printed_radicand = false;

    nlohmann::json to_json() const;
    // Only keys present in `j` are applied.
    void merge_json(const nlohmann::json& j);
};

// Runs one command line (argv[0] is the program name). Returns the process
// exit code; failures write a JSON error record to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace poselift::cli
