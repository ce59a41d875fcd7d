#include "iclsynth/schedule.hpp"

#include <cmath>

#include "iclsynth/errors.hpp"

namespace icls {

void ScheduleConfig::validate() const {
    if (!(sigma_min > 0.0) || !(sigma_min < sigma_max)) {
        throw DataError("schedule: need 0 < sigma_min < sigma_max");
    }
    if (steps < 1) throw DataError("schedule: steps must be >= 1");
    if (!(sigma_data > 0.0)) throw DataError("schedule: sigma_data must be positive");
    if (!(ln_sigma_std > 0.0)) throw DataError("schedule: ln_sigma_std must be positive");
}

double sample_sigma(Rng& rng, const ScheduleConfig& cfg) {
    return std::exp(cfg.ln_sigma_mean + cfg.ln_sigma_std * rng.gaussian());
}

double loss_weight(double sigma, const ScheduleConfig& cfg) {
    if (!(sigma > 0.0)) throw DataError("loss_weight: sigma must be positive");
    const double sd = cfg.sigma_data;
    const double prod = sigma * sd;
    return (sigma * sigma + sd * sd) / (prod * prod);
}

PreconditionCoeffs precondition(double sigma, const ScheduleConfig& cfg) {
    if (!(sigma > 0.0)) throw DataError("precondition: sigma must be positive");
    const double sd = cfg.sigma_data;
    const double var_sum = sigma * sigma + sd * sd;
    PreconditionCoeffs c;
    c.c_skip = sd * sd / var_sum;
    c.c_out = sigma * sd / std::sqrt(var_sum);
    c.c_in = 1.0 / std::sqrt(var_sum);
    c.c_noise = 0.25 * std::log(sigma);
    return c;
}

std::vector<double> sigma_ladder(const ScheduleConfig& cfg) {
    cfg.validate();
    std::vector<double> ladder;
    ladder.reserve(cfg.steps + 1);
    if (cfg.steps == 1) {
        ladder.push_back(cfg.sigma_max);
        ladder.push_back(0.0);
        return ladder;
    }
    const double inv_rho = 1.0 / cfg.rho;
    const double hi = std::pow(cfg.sigma_max, inv_rho);
    const double lo = std::pow(cfg.sigma_min, inv_rho);
    for (std::size_t i = 0; i < cfg.steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
        ladder.push_back(std::pow(hi + t * (lo - hi), cfg.rho));
    }
    ladder.push_back(0.0);
    return ladder;
}

Tensor add_noise(const Tensor& z, double sigma, Rng& rng) {
    if (sigma < 0.0) throw DataError("add_noise: sigma must be non-negative");
    Tensor out = z;
    if (sigma == 0.0) return out;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sigma * rng.gaussian();
    return out;
}

Tensor heun_step(const DenoiseFn& denoise, const Tensor& z, double sigma_cur,
                 double sigma_next) {
    if (!(sigma_cur > sigma_next) || sigma_next < 0.0) {
        throw DataError("heun_step: need sigma_cur > sigma_next >= 0");
    }
    const double dt = sigma_next - sigma_cur;
    // d_cur = (z - D(z, sigma_cur)) / sigma_cur
    Tensor d_cur = scale(sub(z, denoise(z, sigma_cur)), 1.0 / sigma_cur);
    Tensor z_euler = add_scaled(z, dt, d_cur);
    if (sigma_next == 0.0) return z_euler;
    Tensor d_next = scale(sub(z_euler, denoise(z_euler, sigma_next)), 1.0 / sigma_next);
    return add_scaled(z, 0.5 * dt, add(d_cur, d_next));
}

}  // namespace icls
