#pragma once

#include <vector>

#include "mbsync/common.hpp"

namespace mbsync {

/// Linear beta schedule for steps t = 1..T. Accessors take the one-based
/// step; alpha_bar(0) is defined as 1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(int steps, double beta_min, double beta_max);

    int steps() const { return steps_; }
    double beta_min() const { return beta_min_; }
    double beta_max() const { return beta_max_; }

    double beta(int t) const { return beta_[index(t)]; }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const;
    /// Posterior std: sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t)).
    double sigma(int t) const { return sigma_[index(t)]; }

private:
    std::size_t index(int t) const;

    int steps_ = 0;
    double beta_min_ = 0.0;
    double beta_max_ = 0.0;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
    std::vector<double> sigma_;
};

/// Throws ConfigError unless 0 < beta_min <= beta_max < 1 and T >= 1.
NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Matrix forward_noise(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& sched);

/// Coefficients (on x_t, on x0_hat) of the reverse-process mean at step t.
struct PosteriorCoefficients {
    double on_xt;
    double on_x0;
};
PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& sched);

Matrix posterior_mean(const Matrix& x_t, const Matrix& x0_hat, int t, const NoiseSchedule& sched);

}  // namespace mbsync
