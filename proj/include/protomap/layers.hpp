#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "protomap/autodiff.hpp"
#include "protomap/rng.hpp"

namespace protomap {

enum class Activation { identity, relu, sigmoid, softmax };

Activation activation_from_string(const std::string& name);
const char* activation_name(Activation act);

// Fully connected layer, weights [out x in], bias [out]. Initialized
// uniform in +-sqrt(6 / (fan_in + fan_out)).
struct DenseLayer {
    Var weights;
    Var bias;
    Activation activation = Activation::identity;

    DenseLayer() = default;
    DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act, Rng& rng);

    std::size_t in_dim() const { return weights.value().cols(); }
    std::size_t out_dim() const { return weights.value().rows(); }

    // activation(x W^T + b), x is [batch x in]
    Var forward(const Var& x) const;
};

// Stack of dense layers applied in order.
struct Mlp {
    std::vector<DenseLayer> layers;

    Mlp() = default;
    // widths = {in, h1, ..., out}; hidden activations `hidden`, last layer `last`
    Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation last, Rng& rng);

    Var forward(const Var& x) const;
    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
};

struct NamedParam {
    Var var;
    std::string name;
};

void collect_params(const DenseLayer& layer, const std::string& prefix,
                    std::vector<NamedParam>& out);
void collect_params(const Mlp& mlp, const std::string& prefix, std::vector<NamedParam>& out);

}  // namespace protomap
