#include "poselift/checkpoint.hpp"

#include <fstream>
#include <set>

#include "poselift/errors.hpp"

namespace poselift {

using nlohmann::json;

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw ValidationError("checkpoint has no tensor named '" + name + "'");
}

json tensor_to_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const json& j, const std::string& context) {
    try {
        auto shape = j.at("shape").get<Shape>();
        auto data = j.at("data").get<std::vector<double>>();
        return Tensor(std::move(shape), std::move(data));
    } catch (const json::exception& e) {
        throw ParseError(context + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ValidationError(context + ": " + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json tensors = json::array();
    for (const auto& [name, t] : ckpt.tensors) {
        json entry = tensor_to_json(t);
        entry["name"] = name;
        tensors.push_back(std::move(entry));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out << json{{"format", "poselift-checkpoint-v1"}, {"meta", ckpt.meta}, {"tensors", tensors}}.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "poselift-checkpoint-v1")
        throw ValidationError(path.string() + ": not a poselift checkpoint");
    Checkpoint ckpt;
    ckpt.meta = j.value("meta", json::object());
    std::set<std::string> names;
    for (const json& entry : j.at("tensors")) {
        const std::string name = entry.value("name", "");
        if (!names.insert(name).second) throw ValidationError(path.string() + ": duplicate tensor '" + name + "'");
        ckpt.tensors.emplace_back(name, tensor_from_json(entry, path.string() + ": tensor '" + name + "'"));
    }
    return ckpt;
}

}  // namespace poselift
