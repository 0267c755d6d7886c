#pragma once

#include <cstdint>
#include <vector>

#include "protomap/layers.hpp"
#include "protomap/tensor.hpp"

namespace protomap {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool clip_enabled = false;  // global-norm gradient clipping
    double clip_norm = 5.0;
};

// Adam with bias correction. Moment slots are bound to the parameter list on
// the first step; the list must stay identical afterwards.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(std::vector<NamedParam>& params, double lr);

    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return config_; }

    // moment access for checkpointing
    struct Slot {
        Tensor m;
        Tensor v;
    };
    std::vector<Slot>& slots() { return slots_; }
    void restore(std::vector<Slot> slots, std::int64_t t);

private:
    AdamConfig config_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

// rate(e) = base * factor^floor(e / interval)
struct LrSchedule {
    double base_rate = 1e-3;
    double decay_factor = 1.0;  // in (0, 1]
    int decay_interval = 10;    // epochs

    double at(int epoch) const;
};

}  // namespace protomap
