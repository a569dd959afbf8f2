#include "poselift/skeleton.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "poselift/errors.hpp"

namespace poselift {

using nlohmann::json;

HyperScale parse_hyper_scale(std::string_view tag) {
    if (tag == "part") return HyperScale::kPart;
    if (tag == "body") return HyperScale::kBody;
    throw ConfigError("unknown hypergraph scale '" + std::string(tag) + "' (expected part or body)");
}

std::string_view to_string(HyperScale scale) { return scale == HyperScale::kPart ? "part" : "body"; }

Skeleton::Skeleton(std::vector<std::string> names, std::vector<std::pair<std::size_t, std::size_t>> edges,
                   std::vector<Hyperedge> part, std::vector<Hyperedge> body)
    : edges_(std::move(edges)), part_(std::move(part)), body_(std::move(body)) {
    const std::size_t J = names.size();
    if (J == 0) throw ValidationError("skeleton has no joints");
    std::set<std::string> unique;
    for (std::size_t i = 0; i < J; ++i) {
        if (names[i].empty()) throw ValidationError("joint " + std::to_string(i) + " has an empty name");
        if (!unique.insert(names[i]).second) throw ValidationError("duplicate joint name '" + names[i] + "'");
        joints_.push_back({i, std::move(names[i])});
    }

    if (edges_.size() != J - 1)
        throw ValidationError("kinematic edges must form a tree: expected " + std::to_string(J - 1) + " edges, got " +
                              std::to_string(edges_.size()));
    std::vector<std::vector<std::size_t>> nbrs(J);
    for (const auto& [a, b] : edges_) {
        if (a >= J || b >= J) throw ValidationError("edge references joint index outside [0, " + std::to_string(J) + ")");
        if (a == b) throw ValidationError("edge '" + joints_[a].name + "'-'" + joints_[a].name + "' is a self-loop");
        nbrs[a].push_back(b);
        nbrs[b].push_back(a);
    }

    // BFS from the root: with J-1 edges, reaching every joint proves a tree.
    parents_.assign(J, J);
    parents_[0] = 0;
    order_ = {0};
    for (std::size_t head = 0; head < order_.size(); ++head) {
        const std::size_t u = order_[head];
        for (std::size_t v : nbrs[u])
            if (parents_[v] == J) {
                parents_[v] = u;
                order_.push_back(v);
            }
    }
    if (order_.size() != J) {
        for (std::size_t i = 0; i < J; ++i)
            if (parents_[i] == J)
                throw ValidationError("kinematic edges are not connected: joint '" + joints_[i].name +
                                      "' is unreachable from '" + joints_[0].name + "'");
    }

    // A single-joint skeleton may only carry the trivial self-hyperedge.
    const std::size_t min_members = J == 1 ? 1 : 2;
    auto check = [&](const std::vector<Hyperedge>& set, const char* label) {
        for (std::size_t e = 0; e < set.size(); ++e) {
            const std::string tag = std::string(label) + std::to_string(e + 1);
            if (set[e].size() < min_members)
                throw ValidationError("hyperedge " + tag + " has " + std::to_string(set[e].size()) +
                                      " member(s); at least " + std::to_string(min_members) + " required");
            std::set<std::size_t> members;
            for (std::size_t j : set[e]) {
                if (j >= J) throw ValidationError("hyperedge " + tag + " references joint index " + std::to_string(j));
                if (!members.insert(j).second)
                    throw ValidationError("hyperedge " + tag + " lists '" + joints_[j].name + "' twice");
            }
        }
    };
    check(part_, "p");
    check(body_, "b");
}

std::size_t Skeleton::index_of(std::string_view name) const {
    for (const auto& j : joints_)
        if (j.name == name) return j.index;
    throw ValidationError("unknown joint '" + std::string(name) + "'");
}

const std::vector<Hyperedge>& Skeleton::hyperedges(HyperScale scale) const {
    return scale == HyperScale::kPart ? part_ : body_;
}

bool Skeleton::operator==(const Skeleton& o) const {
    return joints_ == o.joints_ && edges_ == o.edges_ && part_ == o.part_ && body_ == o.body_;
}

Skeleton default_skeleton() {
    const std::vector<std::string> names = {"hip",   "rhip",   "rknee",     "rfoot",  "lhip",      "lknee",
                                            "lfoot", "spine",  "thorax",    "neck",   "head",      "lshoulder",
                                            "lelbow", "lwrist", "rshoulder", "relbow", "rwrist"};
    auto idx = [&](std::string_view n) {
        return static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
    };
    auto set = [&](std::initializer_list<std::string_view> members) {
        Hyperedge e;
        for (auto m : members) e.push_back(idx(m));
        return e;
    };
    std::vector<std::pair<std::size_t, std::size_t>> edges = {
        {idx("hip"), idx("rhip")},           {idx("rhip"), idx("rknee")},      {idx("rknee"), idx("rfoot")},
        {idx("hip"), idx("lhip")},           {idx("lhip"), idx("lknee")},      {idx("lknee"), idx("lfoot")},
        {idx("hip"), idx("spine")},          {idx("spine"), idx("thorax")},    {idx("thorax"), idx("neck")},
        {idx("neck"), idx("head")},          {idx("thorax"), idx("lshoulder")}, {idx("lshoulder"), idx("lelbow")},
        {idx("lelbow"), idx("lwrist")},      {idx("thorax"), idx("rshoulder")}, {idx("rshoulder"), idx("relbow")},
        {idx("relbow"), idx("rwrist")},
    };
    std::vector<Hyperedge> part = {
        set({"hip", "spine", "thorax"}),       // p1
        set({"thorax", "neck", "head"}),       // p2
        set({"hip", "rhip", "rknee"}),         // p3
        set({"rknee", "rfoot"}),               // p4
        set({"hip", "lhip", "lknee"}),         // p5
        set({"lknee", "lfoot"}),               // p6
        set({"relbow", "rwrist"}),             // p7
        set({"lelbow", "lwrist"}),             // p8
        set({"thorax", "rshoulder", "relbow"}),  // p9
        set({"thorax", "lshoulder", "lelbow"}),  // p10
    };
    std::vector<Hyperedge> body = {
        set({"hip", "rhip", "lhip", "spine", "thorax", "neck", "head", "lshoulder", "rshoulder"}),  // b1
        set({"rhip", "rknee", "rfoot"}),                                                          // b2
        set({"lhip", "lknee", "lfoot"}),                                                          // b3
        set({"rshoulder", "relbow", "rwrist"}),                                                   // b4
        set({"lshoulder", "lelbow", "lwrist"}),                                                   // b5
    };
    return Skeleton(names, std::move(edges), std::move(part), std::move(body));
}

Tensor incidence(const Skeleton& skeleton, HyperScale scale) {
    const auto& set = skeleton.hyperedges(scale);
    if (set.empty()) throw ValidationError(std::string("skeleton has no ") + std::string(to_string(scale)) + " hyperedges");
    Tensor h({skeleton.num_joints(), set.size()});
    for (std::size_t e = 0; e < set.size(); ++e)
        for (std::size_t j : set[e]) h.at(j, e) = 1.0;
    return h;
}

Tensor adjacency(const Skeleton& skeleton) {
    const std::size_t J = skeleton.num_joints();
    Tensor a({J, J});
    for (const auto& [u, v] : skeleton.edges()) {
        a.at(u, v) = 1.0;
        a.at(v, u) = 1.0;
    }
    return a;
}

json skeleton_to_json(const Skeleton& s) {
    json joints = json::array();
    for (const auto& j : s.joints()) joints.push_back(j.name);
    json edges = json::array();
    for (const auto& [a, b] : s.edges()) edges.push_back({s.name(a), s.name(b)});
    auto sets = [&](const std::vector<Hyperedge>& hs) {
        json out = json::array();
        for (const auto& e : hs) {
            json members = json::array();
            for (std::size_t j : e) members.push_back(s.name(j));
            out.push_back(std::move(members));
        }
        return out;
    };
    return json{{"joints", joints},
                {"edges", edges},
                {"part_hyperedges", sets(s.part_hyperedges())},
                {"body_hyperedges", sets(s.body_hyperedges())}};
}

Skeleton skeleton_from_json(const json& j, const std::string& source) {
    auto field_error = [&](const std::string& field, const std::string& msg) {
        return ParseError(source + ": field '" + field + "': " + msg);
    };
    if (!j.is_object()) throw ParseError(source + ": expected a JSON object at top level");
    for (const char* key : {"joints", "edges", "part_hyperedges", "body_hyperedges"})
        if (!j.contains(key) || !j.at(key).is_array()) throw field_error(key, "missing or not an array");

    std::vector<std::string> names;
    for (std::size_t i = 0; i < j["joints"].size(); ++i) {
        const json& n = j["joints"][i];
        if (!n.is_string()) throw field_error("joints[" + std::to_string(i) + "]", "expected a string");
        names.push_back(n.get<std::string>());
    }
    auto lookup = [&](const json& n, const std::string& field) -> std::size_t {
        if (!n.is_string()) throw field_error(field, "expected a joint name");
        const auto it = std::find(names.begin(), names.end(), n.get<std::string>());
        if (it == names.end()) throw ValidationError(source + ": field '" + field + "' references unknown joint '" +
                                                     n.get<std::string>() + "'");
        return static_cast<std::size_t>(it - names.begin());
    };

    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < j["edges"].size(); ++i) {
        const std::string field = "edges[" + std::to_string(i) + "]";
        const json& e = j["edges"][i];
        if (!e.is_array() || e.size() != 2) throw field_error(field, "expected a pair of joint names");
        edges.emplace_back(lookup(e[0], field), lookup(e[1], field));
    }
    auto read_sets = [&](const char* key) {
        std::vector<Hyperedge> out;
        for (std::size_t i = 0; i < j[key].size(); ++i) {
            const std::string field = std::string(key) + "[" + std::to_string(i) + "]";
            const json& members = j[key][i];
            if (!members.is_array()) throw field_error(field, "expected a list of joint names");
            Hyperedge e;
            for (const json& m : members) e.push_back(lookup(m, field));
            out.push_back(std::move(e));
        }
        return out;
    };
    auto part = read_sets("part_hyperedges");
    auto body = read_sets("body_hyperedges");
    try {
        return Skeleton(std::move(names), std::move(edges), std::move(part), std::move(body));
    } catch (const ValidationError& e) {
        throw ValidationError(source + ": " + e.what());
    }
}

Skeleton load_skeleton(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open skeleton file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return skeleton_from_json(j, path.string());
}

void save_skeleton(const Skeleton& skeleton, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write skeleton file " + path.string());
    out << skeleton_to_json(skeleton).dump(2) << '\n';
}

}  // namespace poselift
