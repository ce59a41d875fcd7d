#pragma once

#include <functional>
#include <vector>

#include "iclsynth/rng.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {

// Scalar diffusion mathematics: noise-level sampling, loss weighting,
// preconditioning coefficients, the step ladder, and the reverse-ODE step.
struct ScheduleConfig {
    double sigma_data = 0.5;
    double sigma_max = 80.0;
    double sigma_min = 0.002;
    double rho = 7.0;
    std::size_t steps = 50;
    double ln_sigma_mean = -1.2;
    double ln_sigma_std = 1.2;

    void validate() const;
};

struct PreconditionCoeffs {
    double c_skip;
    double c_out;
    double c_in;
    double c_noise;
};

// Draws sigma with ln(sigma) ~ N(ln_sigma_mean, ln_sigma_std^2).
double sample_sigma(Rng& rng, const ScheduleConfig& cfg);

// lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.
double loss_weight(double sigma, const ScheduleConfig& cfg);

// c_skip = sd^2/(s^2+sd^2), c_out = s*sd/sqrt(s^2+sd^2),
// c_in = 1/sqrt(s^2+sd^2), c_noise = ln(s)/4. Satisfies
// loss_weight(s) * c_out(s)^2 == 1.
PreconditionCoeffs precondition(double sigma, const ScheduleConfig& cfg);

// Decreasing ladder sigma_0 = sigma_max ... sigma_{steps-1} = sigma_min,
// followed by an exact 0 entry.
std::vector<double> sigma_ladder(const ScheduleConfig& cfg);

// z + sigma * eps with i.i.d. standard normal eps per cell.
Tensor add_noise(const Tensor& z, double sigma, Rng& rng);

using DenoiseFn = std::function<Tensor(const Tensor&, double)>;

// One second-order Euler-Heun step of the probability-flow ODE from
// sigma_cur down to sigma_next. The trapezoidal correction is skipped when
// sigma_next == 0, so that branch performs a single denoiser evaluation.
Tensor heun_step(const DenoiseFn& denoise, const Tensor& z, double sigma_cur, double sigma_next);

}  // namespace icls
