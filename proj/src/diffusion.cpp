#include "mbsync/diffusion.hpp"

#include <cmath>
#include <string>

namespace mbsync {

NoiseSchedule::NoiseSchedule(int steps, double beta_min, double beta_max)
    : steps_(steps), beta_min_(beta_min), beta_max_(beta_max) {
    if (steps < 1) throw ConfigError("NoiseSchedule: T must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw ConfigError("NoiseSchedule: need 0 < beta_min <= beta_max < 1");
    }
    const auto T = static_cast<std::size_t>(steps);
    beta_.resize(T);
    alpha_bar_.resize(T);
    sigma_.resize(T);
    double prod = 1.0;
    for (std::size_t k = 0; k < T; ++k) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(T - 1);
        beta_[k] = beta_min + (beta_max - beta_min) * frac;
        const double prev = prod;
        prod *= 1.0 - beta_[k];
        alpha_bar_[k] = prod;
        sigma_[k] = std::sqrt(beta_[k] * (1.0 - prev) / (1.0 - prod));
    }
}

std::size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps_) {
        throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps_) + "]");
    }
    return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bar_[index(t)];
}

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
    return {steps, beta_min, beta_max};
}

Matrix forward_noise(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& sched) {
    require_shape(x0.rows() == eps.rows() && x0.cols() == eps.cols(),
                  "forward_noise: noise shape mismatch");
    if (t < 1 || t > sched.steps()) throw std::out_of_range("forward_noise: step out of range");
    const double ab = sched.alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& sched) {
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double denom = 1.0 - ab;
    return {std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / denom,
            std::sqrt(ab_prev) * sched.beta(t) / denom};
}

Matrix posterior_mean(const Matrix& x_t, const Matrix& x0_hat, int t, const NoiseSchedule& sched) {
    require_shape(x_t.rows() == x0_hat.rows() && x_t.cols() == x0_hat.cols(),
                  "posterior_mean: shape mismatch");
    const auto c = posterior_coefficients(t, sched);
    return c.on_xt * x_t + c.on_x0 * x0_hat;
}

}  // namespace mbsync
