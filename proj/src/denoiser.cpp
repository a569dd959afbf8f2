#include "poselift/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "poselift/errors.hpp"
#include "poselift/kernels.hpp"
#include "poselift/ops.hpp"
#include "poselift/rng.hpp"

namespace poselift {

using nlohmann::json;

Fusion parse_fusion(std::string_view s) {
    if (s == "weighted") return Fusion::kWeighted;
    if (s == "concat") return Fusion::kConcat;
    if (s == "product") return Fusion::kProduct;
    throw ConfigError("unknown fusion '" + std::string(s) + "' (expected weighted, concat or product)");
}

std::string_view to_string(Fusion f) {
    switch (f) {
        case Fusion::kWeighted: return "weighted";
        case Fusion::kConcat: return "concat";
        case Fusion::kProduct: return "product";
    }
    return "?";
}

GraphScale parse_graph_scale(std::string_view s) {
    if (s == "joint") return GraphScale::kJoint;
    if (s == "part") return GraphScale::kPart;
    if (s == "body") return GraphScale::kBody;
    throw ConfigError("unknown scale '" + std::string(s) + "' (expected joint, part or body)");
}

std::string_view to_string(GraphScale s) {
    switch (s) {
        case GraphScale::kJoint: return "joint";
        case GraphScale::kPart: return "part";
        case GraphScale::kBody: return "body";
    }
    return "?";
}

std::vector<GraphScale> parse_scales(std::string_view csv) {
    std::vector<GraphScale> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t comma = std::min(csv.find(',', start), csv.size());
        const auto token = csv.substr(start, comma - start);
        if (!token.empty()) {
            const GraphScale s = parse_graph_scale(token);
            if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        }
        start = comma + 1;
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ConfigError("scale list is empty");
    return out;
}

std::string scales_to_string(const std::vector<GraphScale>& scales) {
    std::string out;
    for (GraphScale s : scales) {
        if (!out.empty()) out += ',';
        out += to_string(s);
    }
    return out;
}

void DenoiserConfig::validate() const {
    if (d_model < 8) throw ConfigError("d_model must be at least 8, got " + std::to_string(d_model));
    if (blocks < 1) throw ConfigError("at least one block is required");
    if (scales.empty()) throw ConfigError("at least one graph scale is required");
    if (max_timestep < 1) throw ConfigError("max_timestep must be positive");
}

bool DenoiserConfig::has_scale(GraphScale s) const {
    return std::find(scales.begin(), scales.end(), s) != scales.end();
}

json DenoiserConfig::to_json() const {
    return json{{"d_model", d_model},
                {"blocks", blocks},
                {"fusion", std::string(to_string(fusion))},
                {"scales", scales_to_string(scales)},
                {"max_timestep", max_timestep}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    DenoiserConfig c;
    try {
        c.d_model = j.at("d_model").get<std::size_t>();
        c.blocks = j.at("blocks").get<std::size_t>();
        c.fusion = parse_fusion(j.at("fusion").get<std::string>());
        c.scales = parse_scales(j.at("scales").get<std::string>());
        c.max_timestep = j.at("max_timestep").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("denoiser config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t analytic_parameter_count(const DenoiserConfig& c, const Skeleton& skeleton) {
    const std::size_t d = c.d_model;
    const std::size_t J = skeleton.num_joints();
    const std::size_t s = c.scales.size();
    std::size_t n = 5 * d + d;        // input embedding
    n += J * d;                       // spatial embedding
    n += 2 * (d * d + d);             // time projection
    if (c.has_scale(GraphScale::kPart)) n += skeleton.part_hyperedges().size();
    if (c.has_scale(GraphScale::kBody)) n += skeleton.body_hyperedges().size();
    std::size_t per_block = s * d * d + d * d + d + 2 * d;
    if (c.fusion == Fusion::kWeighted) per_block += s;
    if (c.fusion == Fusion::kConcat) per_block += s * d * d;
    n += c.blocks * per_block;
    n += 3 * d + 3;                   // head
    return n;
}

std::uint64_t analytic_forward_macs(const DenoiserConfig& c, const Skeleton& skeleton) {
    const std::uint64_t d = c.d_model;
    const std::uint64_t J = skeleton.num_joints();
    const std::uint64_t s = c.scales.size();
    std::uint64_t macs = J * 5 * d + 2 * d * d;
    std::uint64_t per_block = s * (J * J * d + J * d * d) + J * d * d;
    if (c.fusion == Fusion::kConcat) per_block += J * (s * d) * d;
    macs += c.blocks * per_block;
    macs += J * d * 3;
    return macs;
}

Tensor sinusoidal_embedding(std::span<const int> timesteps, std::size_t dim) {
    Tensor out({timesteps.size(), dim});
    const std::size_t half = dim / 2;
    for (std::size_t b = 0; b < timesteps.size(); ++b)
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(timesteps[b]) * freq;
            out.at(b, 2 * i) = std::sin(arg);
            out.at(b, 2 * i + 1) = std::cos(arg);
        }
    return out;
}

ag::Var fuse(const std::vector<ag::Var>& branches, const std::vector<ag::Var>& alphas, Fusion strategy,
             const ag::Var& projection) {
    if (branches.empty()) throw ShapeError("fuse: no branches");
    switch (strategy) {
        case Fusion::kWeighted: {
            if (alphas.size() != branches.size()) throw ShapeError("fuse: one weight per branch required");
            ag::Var acc = ag::mul(branches[0], alphas[0]);
            for (std::size_t i = 1; i < branches.size(); ++i) acc = ag::add(acc, ag::mul(branches[i], alphas[i]));
            return acc;
        }
        case Fusion::kProduct: {
            ag::Var acc = branches[0];
            for (std::size_t i = 1; i < branches.size(); ++i) acc = ag::mul(acc, branches[i]);
            return acc;
        }
        case Fusion::kConcat: {
            if (!projection.defined()) throw ShapeError("fuse: concat fusion needs a projection");
            return ag::matmul(ag::concat_last(branches), projection);
        }
    }
    throw ConfigError("fuse: unknown strategy");
}

Parameter* Denoiser::add_param(const std::string& name, Tensor value) {
    params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    Parameter* p = params_.back().get();
    by_name_[name] = p;
    return p;
}

Denoiser::Denoiser(DenoiserConfig config, Skeleton skeleton, std::uint64_t seed)
    : config_(std::move(config)), skeleton_(std::move(skeleton)) {
    config_.validate();
    for (const auto& j : skeleton_.joints()) joint_names_.push_back(j.name);
    const std::size_t d = config_.d_model;
    const std::size_t J = skeleton_.num_joints();
    const std::size_t s = config_.scales.size();

    joint_kernel_ = ag::constant(graph_kernel(adjacency(skeleton_)).matrix);

    Rng rng(seed, 0x1417);
    auto uniform = [&](Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor t(std::move(shape));
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
        return t;
    };

    embed_w_ = add_param("embed.W", uniform({5, d}, 5));
    embed_b_ = add_param("embed.b", uniform({d}, 5));
    spatial_ = add_param("spatial", uniform({J, d}, d));
    time_w1_ = add_param("time.W1", uniform({d, d}, d));
    time_b1_ = add_param("time.b1", uniform({d}, d));
    time_w2_ = add_param("time.W2", uniform({d, d}, d));
    time_b2_ = add_param("time.b2", uniform({d}, d));
    if (config_.has_scale(GraphScale::kPart)) {
        incidence_part_ = incidence(skeleton_, HyperScale::kPart);
        log_m_part_ = add_param("kernels.log_M_part", Tensor({incidence_part_.dim(1)}, 0.0));
    }
    if (config_.has_scale(GraphScale::kBody)) {
        incidence_body_ = incidence(skeleton_, HyperScale::kBody);
        log_m_body_ = add_param("kernels.log_M_body", Tensor({incidence_body_.dim(1)}, 0.0));
    }

    for (std::size_t l = 0; l < config_.blocks; ++l) {
        const std::string prefix = "block" + std::to_string(l) + ".";
        Block blk;
        if (config_.has_scale(GraphScale::kJoint)) blk.w_joint = add_param(prefix + "W_joint", uniform({d, d}, d));
        if (config_.has_scale(GraphScale::kPart)) blk.w_part = add_param(prefix + "W_part", uniform({d, d}, d));
        if (config_.has_scale(GraphScale::kBody)) blk.w_body = add_param(prefix + "W_body", uniform({d, d}, d));
        if (config_.fusion == Fusion::kWeighted) {
            if (blk.w_joint) blk.alpha_joint = add_param(prefix + "alpha_joint", Tensor::scalar(1.0));
            if (blk.w_part) blk.alpha_part = add_param(prefix + "alpha_part", Tensor::scalar(1.0));
            if (blk.w_body) blk.alpha_body = add_param(prefix + "alpha_body", Tensor::scalar(1.0));
        }
        if (config_.fusion == Fusion::kConcat) blk.w_fuse = add_param(prefix + "W_fuse", uniform({s * d, d}, s * d));
        blk.w_res = add_param(prefix + "W_res", uniform({d, d}, d));
        blk.b_res = add_param(prefix + "b_res", uniform({d}, d));
        blk.bn_gamma = add_param(prefix + "bn_gamma", Tensor({d}, 1.0));
        blk.bn_beta = add_param(prefix + "bn_beta", Tensor({d}, 0.0));
        blk.bn = std::make_unique<BatchNormState>(d);
        blocks_.push_back(std::move(blk));
    }

    head_w_ = add_param("head.W", uniform({d, 3}, d));
    head_b_ = add_param("head.b", uniform({3}, d));
}

std::vector<Parameter*> Denoiser::parameters() const {
    std::vector<Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

Parameter& Denoiser::param(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("model has no parameter '" + name + "'");
    return *it->second;
}

std::size_t Denoiser::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value().size();
    return n;
}

ScaleKernels Denoiser::build_kernels() const {
    ScaleKernels k;
    if (config_.has_scale(GraphScale::kJoint)) k.joint = joint_kernel_;
    if (log_m_part_) k.part = hypergraph_kernel_var(incidence_part_, log_m_part_->var, joint_names_);
    if (log_m_body_) k.body = hypergraph_kernel_var(incidence_body_, log_m_body_->var, joint_names_);
    return k;
}

ag::Var Denoiser::block_forward(std::size_t index, const ag::Var& z, const ScaleKernels& kernels, Mode mode) {
    Block& blk = blocks_.at(index);
    std::vector<ag::Var> branches, alphas;
    auto branch = [&](GraphScale scale, const ag::Var& kernel, Parameter* w, Parameter* alpha) {
        if (!config_.has_scale(scale)) return;
        if (!kernel.defined())
            throw ConfigError("scale '" + std::string(to_string(scale)) + "' is configured but its kernel is missing");
        branches.push_back(ag::relu(ag::matmul(ag::matmul(kernel, z), w->var)));
        if (alpha) alphas.push_back(alpha->var);
    };
    branch(GraphScale::kJoint, kernels.joint, blk.w_joint, blk.alpha_joint);
    branch(GraphScale::kPart, kernels.part, blk.w_part, blk.alpha_part);
    branch(GraphScale::kBody, kernels.body, blk.w_body, blk.alpha_body);

    ag::Var fused = fuse(branches, alphas, config_.fusion, blk.w_fuse ? blk.w_fuse->var : ag::Var());
    ag::Var residual = ag::add(ag::matmul(z, blk.w_res->var), blk.b_res->var);
    ag::Var normed = batch_norm(ag::add(fused, residual), blk.bn_gamma->var, blk.bn_beta->var, *blk.bn, mode);
    return ag::relu(ag::add(z, normed));
}

ag::Var Denoiser::forward(const Tensor& y_t, const Tensor& x, std::span<const int> t, Mode mode) {
    const std::size_t J = skeleton_.num_joints();
    if (y_t.rank() != 3 || y_t.dim(1) != J || y_t.dim(2) != 3)
        throw ShapeError("forward: y_t must be [B, " + std::to_string(J) + ", 3], got " + to_string(y_t.shape()));
    const std::size_t B = y_t.dim(0);
    if (x.shape() != Shape{B, J, 2})
        throw ShapeError("forward: x must be [" + std::to_string(B) + ", " + std::to_string(J) + ", 2], got " +
                         to_string(x.shape()));
    if (t.size() != B) throw ShapeError("forward: expected " + std::to_string(B) + " timesteps, got " + std::to_string(t.size()));
    for (int ti : t)
        if (ti < 1 || ti > config_.max_timestep)
            throw ConfigError("forward: timestep " + std::to_string(ti) + " outside [1, " +
                              std::to_string(config_.max_timestep) + "]");

    const std::size_t d = config_.d_model;
    ag::Var input = ag::concat_last({ag::constant(y_t), ag::constant(x)});
    ag::Var z = ag::add(ag::matmul(input, embed_w_->var), embed_b_->var);
    z = ag::add(z, spatial_->var);

    ag::Var temb = ag::constant(sinusoidal_embedding(t, d));
    temb = ag::relu(ag::add(ag::matmul(temb, time_w1_->var), time_b1_->var));
    temb = ag::add(ag::matmul(temb, time_w2_->var), time_b2_->var);
    z = ag::add(z, ag::reshape(temb, {B, 1, d}));

    const ScaleKernels kernels = build_kernels();
    for (std::size_t l = 0; l < blocks_.size(); ++l) z = block_forward(l, z, kernels, mode);
    return ag::add(ag::matmul(z, head_w_->var), head_b_->var);
}

Checkpoint Denoiser::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.meta["config"] = config_.to_json();
    ckpt.meta["skeleton"] = skeleton_to_json(skeleton_);
    for (const auto& p : params_) ckpt.tensors.emplace_back(p->name, p->value());
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string prefix = "block" + std::to_string(l) + ".";
        ckpt.tensors.emplace_back(prefix + "bn_running_mean", blocks_[l].bn->running_mean);
        ckpt.tensors.emplace_back(prefix + "bn_running_var", blocks_[l].bn->running_var);
    }
    return ckpt;
}

Denoiser Denoiser::from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("config") || !ckpt.meta.contains("skeleton"))
        throw ValidationError("checkpoint is missing the model config or skeleton");
    Denoiser model(DenoiserConfig::from_json(ckpt.meta["config"]), skeleton_from_json(ckpt.meta["skeleton"], "checkpoint"),
                   0);
    auto restore = [](Tensor& dst, const Tensor& src, const std::string& name) {
        if (dst.shape() != src.shape())
            throw ValidationError("checkpoint tensor '" + name + "' has shape " + to_string(src.shape()) + ", expected " +
                                  to_string(dst.shape()));
        dst = src;
    };
    for (auto& p : model.params_) restore(p->value(), ckpt.get(p->name), p->name);
    for (std::size_t l = 0; l < model.blocks_.size(); ++l) {
        const std::string prefix = "block" + std::to_string(l) + ".";
        restore(model.blocks_[l].bn->running_mean, ckpt.get(prefix + "bn_running_mean"), prefix + "bn_running_mean");
        restore(model.blocks_[l].bn->running_var, ckpt.get(prefix + "bn_running_var"), prefix + "bn_running_var");
    }
    return model;
}

}  // namespace poselift
