#pragma once

// JSON helpers shared by the checkpoint writers. Values are serialized as
// doubles; nlohmann emits shortest round-trip representations, so reloading
// reproduces bit-identical parameters.

#include <fstream>
#include <string>

#include <json.hpp>

#include "protomap/error.hpp"
#include "protomap/layers.hpp"

namespace protomap::detail {

inline nlohmann::json layer_to_json(const DenseLayer& layer) {
    return {
        {"in", layer.in_dim()},
        {"out", layer.out_dim()},
        {"activation", activation_name(layer.activation)},
        {"weights", layer.weights.value().values()},
        {"bias", layer.bias.value().values()},
    };
}

inline DenseLayer layer_from_json(const nlohmann::json& j) {
    const auto in = j.at("in").get<std::size_t>();
    const auto out = j.at("out").get<std::size_t>();
    auto weights = j.at("weights").get<std::vector<double>>();
    auto bias = j.at("bias").get<std::vector<double>>();
    if (weights.size() != in * out || bias.size() != out) {
        raise(ErrorKind::parse, "layer weights do not match declared dimensions");
    }
    DenseLayer layer;
    layer.activation = activation_from_string(j.at("activation").get<std::string>());
    layer.weights = Var::parameter(Tensor({out, in}, std::move(weights)));
    layer.bias = Var::parameter(Tensor({out}, std::move(bias)));
    return layer;
}

inline nlohmann::json mlp_to_json(const Mlp& mlp) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& layer : mlp.layers) arr.push_back(layer_to_json(layer));
    return arr;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    Mlp mlp;
    for (const auto& item : j) mlp.layers.push_back(layer_from_json(item));
    return mlp;
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::io, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::parse, path + ": " + e.what());
    }
    return j;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorKind::io, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) raise(ErrorKind::io, "failed writing " + path);
}

}  // namespace protomap::detail
