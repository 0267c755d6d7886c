#pragma once

// Central finite-difference oracle for gradient verification. Independent of
// the reverse pass: it only re-runs the forward builder at perturbed
// parameter values.

#include <cmath>
#include <functional>
#include <vector>

#include "protomap/autodiff.hpp"

namespace gradcheck {

struct Result {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// params: leaf Vars the loss depends on; build: reconstructs the scalar loss
// from current parameter values. Relative error uses max(|fd|, |analytic|, 1).
inline Result compare(std::vector<protomap::Var>& params,
                      const std::function<protomap::Var()>& build, double eps = 1e-5) {
    using protomap::backward;
    using protomap::zero_grad;

    zero_grad(params);
    protomap::Var loss = build();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad().values());

    Result result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& values = params[pi].mutable_value().values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = build().value().item();
            values[i] = saved - eps;
            const double down = build().value().item();
            values[i] = saved;

            const double fd = (up - down) / (2.0 * eps);
            const double an = analytic[pi][i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
            result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - an) / denom);
            ++result.checked;
        }
    }
    return result;
}

}  // namespace gradcheck
