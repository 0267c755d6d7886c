#include "protomap/optim.hpp"

#include <cmath>

namespace protomap {

void Adam::step(std::vector<NamedParam>& params, double lr) {
    if (slots_.empty()) {
        slots_.reserve(params.size());
        for (const auto& p : params) {
            slots_.push_back({Tensor::zeros(p.var.value().shape()),
                              Tensor::zeros(p.var.value().shape())});
        }
    }
    if (slots_.size() != params.size()) {
        raise(ErrorKind::usage, "adam: parameter list changed between steps");
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& g = params[i].var.node()->grad;
        if (g.size() != params[i].var.value().size()) {
            raise(ErrorKind::usage, "adam: missing gradient for " + params[i].name +
                                        " (backward not run?)");
        }
        if (!g.all_finite()) {
            raise(ErrorKind::training, "non-finite gradient in " + params[i].name);
        }
    }

    if (config_.clip_enabled) {
        double sq = 0.0;
        for (const auto& p : params) {
            for (double g : p.var.node()->grad.values()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > config_.clip_norm) {
            const double scale = config_.clip_norm / norm;
            for (auto& p : params) {
                for (double& g : p.var.node()->grad.values()) g *= scale;
            }
        }
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& x = params[i].var.mutable_value();
        const Tensor& g = params[i].var.node()->grad;
        Tensor& m = slots_[i].m;
        Tensor& v = slots_[i].v;
        for (std::size_t j = 0; j < x.size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            x[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

void Adam::restore(std::vector<Slot> slots, std::int64_t t) {
    slots_ = std::move(slots);
    t_ = t;
}

double LrSchedule::at(int epoch) const {
    if (epoch < 0) raise(ErrorKind::invalid_argument, "lr schedule: negative epoch");
    if (decay_factor <= 0.0 || decay_factor > 1.0) {
        raise(ErrorKind::validation, "lr schedule: decay factor must be in (0, 1]");
    }
    if (decay_interval < 1) raise(ErrorKind::validation, "lr schedule: interval must be >= 1");
    return base_rate * std::pow(decay_factor, static_cast<double>(epoch / decay_interval));
}

}  // namespace protomap
