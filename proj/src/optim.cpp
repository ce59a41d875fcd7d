#include "iclsynth/optim.hpp"

#include <cmath>

#include "iclsynth/errors.hpp"

namespace icls {

void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw DataError("adam_step: params/grads count mismatch");
    }
    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw DataError("adam_step: state size mismatch");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g) || !p.same_shape(state.m[i])) {
            throw DataError("adam_step: shape mismatch at parameter " + std::to_string(i));
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double cosine_warmup_lr(double base_lr, std::size_t step, std::size_t total_steps,
                        double warmup_ratio) {
    if (total_steps == 0) return base_lr;
    const double warmup_steps = warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (warmup_steps >= 1.0 && s < warmup_steps) {
        return base_lr * (s + 1.0) / warmup_steps;
    }
    const double span = static_cast<double>(total_steps) - warmup_steps;
    if (span <= 0.0) return base_lr;
    const double progress = (s - warmup_steps) / span;
    constexpr double kPi = 3.14159265358979323846;
    return base_lr * 0.5 * (1.0 + std::cos(kPi * std::min(1.0, std::max(0.0, progress))));
}

}  // namespace icls
