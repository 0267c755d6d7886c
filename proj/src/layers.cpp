#include "protomap/layers.hpp"

#include <cmath>

namespace protomap {

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "softmax") return Activation::softmax;
    raise(ErrorKind::parse, "unknown activation: " + name);
}

const char* activation_name(Activation act) {
    switch (act) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax: return "softmax";
    }
    return "identity";
}

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act, Rng& rng)
    : activation(act) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    Tensor w({out_dim, in_dim});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    weights = Var::parameter(std::move(w));
    bias = Var::parameter(Tensor::zeros({out_dim}));
}

Var DenseLayer::forward(const Var& x) const {
    if (x.value().ndim() != 2 || x.value().cols() != in_dim()) {
        raise(ErrorKind::dimension, "dense layer expects [batch x " + std::to_string(in_dim()) +
                                        "], got " + x.value().shape_string());
    }
    Var y = linear(x, weights, bias);
    switch (activation) {
        case Activation::identity: return y;
        case Activation::relu: return relu(y);
        case Activation::sigmoid: return sigmoid(y);
        case Activation::softmax: return row_softmax(y);
    }
    return y;
}

Mlp::Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation last, Rng& rng) {
    if (widths.size() < 2) raise(ErrorKind::invalid_argument, "mlp needs at least two widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool is_last = (i + 2 == widths.size());
        layers.emplace_back(widths[i], widths[i + 1], is_last ? last : hidden, rng);
    }
}

Var Mlp::forward(const Var& x) const {
    Var y = x;
    for (const auto& layer : layers) y = layer.forward(y);
    return y;
}

void collect_params(const DenseLayer& layer, const std::string& prefix,
                    std::vector<NamedParam>& out) {
    out.push_back({layer.weights, prefix + ".weights"});
    out.push_back({layer.bias, prefix + ".bias"});
}

void collect_params(const Mlp& mlp, const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        collect_params(mlp.layers[i], prefix + ".layer" + std::to_string(i), out);
    }
}

}  // namespace protomap
