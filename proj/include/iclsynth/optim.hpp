#pragma once

#include <cstddef>
#include <vector>

#include "iclsynth/tensor.hpp"

namespace icls {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;
};

// Standard bias-corrected Adam update applied in place. `params` and `grads`
// must be parallel; state is created on first use and its shapes must match
// afterwards.
void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg);

// Linear warmup to `base_lr` over warmup_ratio * total_steps, then cosine
// decay to zero. `step` is 0-based.
double cosine_warmup_lr(double base_lr, std::size_t step, std::size_t total_steps,
                        double warmup_ratio);

}  // namespace icls
