#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poselift/tensor.hpp"

namespace poselift {

enum class HyperScale { kPart, kBody };

HyperScale parse_hyper_scale(std::string_view tag);
std::string_view to_string(HyperScale scale);

struct JointId {
    std::size_t index;
    std::string name;
    bool operator==(const JointId&) const = default;
};

using Hyperedge = std::vector<std::size_t>;

// Joint vocabulary, kinematic tree and the two hyperedge sets. Immutable once
// constructed; the constructor enforces every structural invariant.
class Skeleton {
public:
    Skeleton(std::vector<std::string> joint_names, std::vector<std::pair<std::size_t, std::size_t>> edges,
             std::vector<Hyperedge> part_hyperedges, std::vector<Hyperedge> body_hyperedges);

    std::size_t num_joints() const { return joints_.size(); }
    const std::vector<JointId>& joints() const { return joints_; }
    const std::string& name(std::size_t index) const { return joints_.at(index).name; }
    std::size_t index_of(std::string_view name) const;

    const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
    const std::vector<Hyperedge>& part_hyperedges() const { return part_; }
    const std::vector<Hyperedge>& body_hyperedges() const { return body_; }
    const std::vector<Hyperedge>& hyperedges(HyperScale scale) const;

    // Tree root (joint 0) and each joint's parent on the path to it; the
    // root's parent is itself. `topological_order` lists parents first.
    std::size_t root() const { return 0; }
    const std::vector<std::size_t>& parents() const { return parents_; }
    const std::vector<std::size_t>& topological_order() const { return order_; }

    bool operator==(const Skeleton& other) const;

private:
    std::vector<JointId> joints_;
    std::vector<std::pair<std::size_t, std::size_t>> edges_;
    std::vector<Hyperedge> part_;
    std::vector<Hyperedge> body_;
    std::vector<std::size_t> parents_;
    std::vector<std::size_t> order_;
};

// 17-joint H36M-style skeleton with the part (p1..p10) and body (b1..b5)
// hyperedge sets, tree rooted at hip.
Skeleton default_skeleton();

// J x E binary matrix; columns follow hyperedge declaration order.
Tensor incidence(const Skeleton& skeleton, HyperScale scale);

// Symmetric 0/1 J x J matrix of kinematic edges with zero diagonal.
Tensor adjacency(const Skeleton& skeleton);

nlohmann::json skeleton_to_json(const Skeleton& skeleton);
Skeleton skeleton_from_json(const nlohmann::json& j, const std::string& source = "skeleton");

Skeleton load_skeleton(const std::filesystem::path& path);
void save_skeleton(const Skeleton& skeleton, const std::filesystem::path& path);

}  // namespace poselift
