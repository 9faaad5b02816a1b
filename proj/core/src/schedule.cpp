#include "acdit/schedule.hpp"

#include <cmath>
#include <string>

namespace acdit {

void NoiseSchedule::check_t(int64_t t) const {
    if (t < 1 || t > steps) {
        throw ShapeError("schedule: timestep " + std::to_string(t) + " outside [1," +
                         std::to_string(steps) + "]");
    }
}

double NoiseSchedule::beta_at(int64_t t) const {
    check_t(t);
    return beta[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(int64_t t) const {
    check_t(t);
    return alpha[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int64_t t) const {
    check_t(t);
    return alpha_bar[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::posterior_variance(int64_t t) const {
    check_t(t);
    const double abar_prev = t > 1 ? alpha_bar[static_cast<size_t>(t - 2)] : 1.0;
    return (1.0 - abar_prev) / (1.0 - alpha_bar_at(t)) * beta_at(t);
}

double NoiseSchedule::snr(int64_t t) const {
    const double ab = alpha_bar_at(t);
    return ab / (1.0 - ab);
}

NoiseSchedule make_linear_schedule(int64_t steps, double beta_min, double beta_max) {
    if (steps < 1) throw ShapeError("make_linear_schedule: steps must be >= 1");
    if (!(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max)) {
        throw ShapeError("make_linear_schedule: need 0 < beta_min <= beta_max < 1");
    }
    NoiseSchedule ns;
    ns.steps = steps;
    ns.beta.resize(static_cast<size_t>(steps));
    ns.alpha.resize(static_cast<size_t>(steps));
    ns.alpha_bar.resize(static_cast<size_t>(steps));
    double prod = 1.0;
    for (int64_t t = 1; t <= steps; ++t) {
        const double frac = steps > 1 ? static_cast<double>(t - 1) / static_cast<double>(steps - 1) : 0.0;
        const double b = beta_min + (beta_max - beta_min) * frac;
        ns.beta[static_cast<size_t>(t - 1)] = b;
        ns.alpha[static_cast<size_t>(t - 1)] = 1.0 - b;
        prod *= 1.0 - b;
        ns.alpha_bar[static_cast<size_t>(t - 1)] = prod;
    }
    return ns;
}

std::vector<int64_t> step_subsequence(int64_t total_steps, int64_t sampler_steps) {
    if (sampler_steps < 1 || sampler_steps > total_steps) {
        throw ShapeError("step_subsequence: need 1 <= steps <= T");
    }
    if (sampler_steps == 1) return {total_steps};
    std::vector<int64_t> ts(static_cast<size_t>(sampler_steps));
    for (int64_t k = 0; k < sampler_steps; ++k) {
        ts[static_cast<size_t>(k)] =
            1 + (total_steps - 1) * (sampler_steps - 1 - k) / (sampler_steps - 1);
    }
    return ts;
}

Tensor q_sample(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& ns) {
    if (x0.shape() != eps.shape()) {
        throw ShapeError("q_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " +
                         shape_str(x0.shape()));
    }
    const double ab = ns.alpha_bar_at(t);
    const double c0 = std::sqrt(ab);
    const double c1 = std::sqrt(1.0 - ab);
    std::vector<float> out(static_cast<size_t>(x0.size()));
    auto px = x0.data();
    auto pe = eps.data();
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(c0 * px[i] + c1 * pe[i]);
    }
    return Tensor::from_data(x0.shape(), std::move(out));
}

Tensor eps_loss(const Tensor& pred_eps, const Tensor& true_eps) {
    return mse_loss(pred_eps, true_eps);
}

Tensor reverse_step(const Tensor& x_t, const Tensor& pred_eps, int64_t t, int64_t t_prev,
                    SamplerMode mode, Rng& rng, const NoiseSchedule& ns) {
    if (x_t.shape() != pred_eps.shape()) {
        throw ShapeError("reverse_step: pred_eps shape mismatch");
    }
    if (t_prev < 0 || t_prev >= t) {
        throw ShapeError("reverse_step: need 0 <= t_prev < t");
    }
    const double abar_t = ns.alpha_bar_at(t);
    auto px = x_t.data();
    auto pe = pred_eps.data();
    std::vector<float> out(static_cast<size_t>(x_t.size()));

    if (mode == SamplerMode::kAncestral) {
        if (t_prev != t - 1) {
            throw ShapeError("reverse_step: ancestral mode requires adjacent steps");
        }
        const double beta_t = ns.beta_at(t);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(ns.alpha_at(t));
        const double eps_coef = beta_t / std::sqrt(1.0 - abar_t);
        const double sigma = t > 1 ? std::sqrt(ns.posterior_variance(t)) : 0.0;
        for (size_t i = 0; i < out.size(); ++i) {
            double v = inv_sqrt_alpha * (px[i] - eps_coef * pe[i]);
            if (t > 1) v += sigma * rng.normal();
            out[i] = static_cast<float>(v);
        }
    } else {
        // x_prev = sqrt(abar_p) * x0_hat + sqrt(1-abar_p) * eps, folded into
        // a single multiply-add per element: a*x_t + b*eps. Coefficients in
        // double keep the x0_hat cancellation out of float arithmetic.
        const double abar_prev = t_prev >= 1 ? ns.alpha_bar_at(t_prev) : 1.0;
        const double a = std::sqrt(abar_prev / abar_t);
        const double b = std::sqrt(1.0 - abar_prev) - a * std::sqrt(1.0 - abar_t);
        for (size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<float>(a * px[i] + b * pe[i]);
        }
    }
    return Tensor::from_data(x_t.shape(), std::move(out));
}

Tensor guided_eps(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
    if (eps_cond.shape() != eps_uncond.shape()) {
        throw ShapeError("guided_eps: shape mismatch");
    }
    if (s == 1.0) return eps_cond.detach();
    auto pc = eps_cond.data();
    auto pu = eps_uncond.data();
    std::vector<float> out(static_cast<size_t>(eps_cond.size()));
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(pu[i] + s * (static_cast<double>(pc[i]) - pu[i]));
    }
    return Tensor::from_data(eps_cond.shape(), std::move(out));
}

}  // namespace acdit
