#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poselift/autograd.hpp"
#include "poselift/batchnorm.hpp"
#include "poselift/checkpoint.hpp"
#include "poselift/skeleton.hpp"

namespace poselift {

enum class Fusion { kWeighted, kConcat, kProduct };
enum class GraphScale { kJoint, kPart, kBody };

Fusion parse_fusion(std::string_view s);
std::string_view to_string(Fusion f);
GraphScale parse_graph_scale(std::string_view s);
std::string_view to_string(GraphScale s);
// Comma-separated list, e.g. "joint,part,body". Result is in canonical order.
std::vector<GraphScale> parse_scales(std::string_view csv);
std::string scales_to_string(const std::vector<GraphScale>& scales);

struct DenoiserConfig {
    std::size_t d_model = 128;
    std::size_t blocks = 3;
    Fusion fusion = Fusion::kWeighted;
    std::vector<GraphScale> scales = {GraphScale::kJoint, GraphScale::kPart, GraphScale::kBody};
    int max_timestep = 1000;

    void validate() const;
    bool has_scale(GraphScale s) const;
    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
    bool operator==(const DenoiserConfig&) const = default;
};

// Closed-form size and cost of the network described by `config`.
std::size_t analytic_parameter_count(const DenoiserConfig& config, const Skeleton& skeleton);
// Multiply-accumulates of one single-pose forward pass, counting matmuls
// only: input/time embeddings, branch kernels and weights, concat
// projection, residual linear and head.
std::uint64_t analytic_forward_macs(const DenoiserConfig& config, const Skeleton& skeleton);

// [B, dim] sin/cos timestep encoding.
Tensor sinusoidal_embedding(std::span<const int> timesteps, std::size_t dim);

// Per-scale convolution kernels of one forward pass. Scales that are not
// configured stay undefined.
struct ScaleKernels {
    ag::Var joint, part, body;
};

// weighted: sum_s alpha_s Z_s; product: elementwise prod_s Z_s;
// concat: [Z_1 | ... | Z_s] * projection (bias-free).
ag::Var fuse(const std::vector<ag::Var>& branches, const std::vector<ag::Var>& alphas, Fusion strategy,
             const ag::Var& projection = {});

// Hypergraph-GCN denoiser mapping (y_t, x, t) to a clean 3D pose estimate.
class Denoiser {
public:
    struct Block {
        Parameter* w_joint = nullptr;
        Parameter* w_part = nullptr;
        Parameter* w_body = nullptr;
        Parameter* alpha_joint = nullptr;
        Parameter* alpha_part = nullptr;
        Parameter* alpha_body = nullptr;
        Parameter* w_fuse = nullptr;
        Parameter* w_res = nullptr;
        Parameter* b_res = nullptr;
        Parameter* bn_gamma = nullptr;
        Parameter* bn_beta = nullptr;
        std::unique_ptr<BatchNormState> bn;
    };

    Denoiser(DenoiserConfig config, Skeleton skeleton, std::uint64_t seed);
    Denoiser(const Denoiser&) = delete;
    Denoiser& operator=(const Denoiser&) = delete;
    Denoiser(Denoiser&&) = default;

    // y_t: [B, J, 3], x: [B, J, 2], t: B timesteps in [1, max_timestep].
    ag::Var forward(const Tensor& y_t, const Tensor& x, std::span<const int> t, Mode mode);

    ScaleKernels build_kernels() const;
    ag::Var block_forward(std::size_t index, const ag::Var& z, const ScaleKernels& kernels, Mode mode);

    const DenoiserConfig& config() const { return config_; }
    const Skeleton& skeleton() const { return skeleton_; }
    std::vector<Parameter*> parameters() const;
    Parameter& param(const std::string& name) const;
    bool has_param(const std::string& name) const { return by_name_.count(name) != 0; }
    std::size_t parameter_count() const;
    Block& block(std::size_t i) { return blocks_.at(i); }
    const Tensor& joint_kernel() const { return joint_kernel_.value(); }

    Checkpoint to_checkpoint() const;
    static Denoiser from_checkpoint(const Checkpoint& ckpt);

private:
    Parameter* add_param(const std::string& name, Tensor value);

    DenoiserConfig config_;
    Skeleton skeleton_;
    std::vector<std::string> joint_names_;
    Tensor incidence_part_, incidence_body_;
    ag::Var joint_kernel_;

    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, Parameter*> by_name_;
    Parameter* embed_w_ = nullptr;
    Parameter* embed_b_ = nullptr;
    Parameter* spatial_ = nullptr;
    Parameter* time_w1_ = nullptr;
    Parameter* time_b1_ = nullptr;
    Parameter* time_w2_ = nullptr;
    Parameter* time_b2_ = nullptr;
    Parameter* log_m_part_ = nullptr;
    Parameter* log_m_body_ = nullptr;
    Parameter* head_w_ = nullptr;
    Parameter* head_b_ = nullptr;
    std::vector<Block> blocks_;
};

}  // namespace poselift
