#pragma once

#include <cstdint>
#include <vector>

#include "acdit/rng.hpp"
#include "acdit/tensor.hpp"

namespace acdit {

// Discrete-time noising schedule. Coefficients are kept in double; tensor
// payloads stay float32.
struct NoiseSchedule {
    int64_t steps = 0;                    // T
    std::vector<double> beta;             // beta[t-1] for t in [1, T]
    std::vector<double> alpha;            // 1 - beta
    std::vector<double> alpha_bar;        // running product of alpha

    double beta_at(int64_t t) const;
    double alpha_at(int64_t t) const;
    double alpha_bar_at(int64_t t) const;
    // Posterior variance of the t -> t-1 reverse transition; zero at t=1.
    double posterior_variance(int64_t t) const;
    // Signal-to-noise ratio alpha_bar / (1 - alpha_bar).
    double snr(int64_t t) const;

   private:
    void check_t(int64_t t) const;
};

NoiseSchedule make_linear_schedule(int64_t steps, double beta_min = 1e-4, double beta_max = 2e-2);

enum class SamplerMode { kAncestral, kDeterministic };

struct SamplerConfig {
    int64_t steps = 25;                        // T' <= T
    SamplerMode mode = SamplerMode::kDeterministic;
    double guidance_scale = 1.5;
};

// Strictly decreasing timesteps from T down to 1 (T' of them). The reverse
// loop steps t_k -> t_{k+1}, with an implicit final hop to 0.
std::vector<int64_t> step_subsequence(int64_t total_steps, int64_t sampler_steps);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& ns);

// Mean squared error between predicted and true noise (differentiable).
Tensor eps_loss(const Tensor& pred_eps, const Tensor& true_eps);

// One reverse transition from timestep t to t_prev (t_prev=0 emits the final
// clean estimate). Ancestral mode requires adjacent steps (t_prev == t-1) and
// adds posterior noise except at t=1; deterministic mode re-noises the
// predicted x0 to t_prev with the predicted noise and supports arbitrary
// strictly decreasing subsequences.
Tensor reverse_step(const Tensor& x_t, const Tensor& pred_eps, int64_t t, int64_t t_prev,
                    SamplerMode mode, Rng& rng, const NoiseSchedule& ns);

// eps_uncond + s * (eps_cond - eps_uncond)
Tensor guided_eps(const Tensor& eps_cond, const Tensor& eps_uncond, double s);

}  // namespace acdit
