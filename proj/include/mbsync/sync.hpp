#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/denoiser.hpp"
#include "mbsync/diffusion.hpp"
#include "mbsync/state.hpp"

namespace mbsync {

struct SyncConfig {
    bool enabled = true;
    int interval = 50;  // s
    double lambda_exp = 0.3;
    /// Normalize quaternions of the snapshot before rel/comb.
    bool normalize_quaternions = true;
    /// Flip rel/comb quaternion outputs into the hemisphere of mu_hat before fusing.
    bool align_quaternion_sign = true;

    /// Throws ConfigError on s < 1, negative lambda_exp, no sync step in
    /// [1, T] or a sync step at which sigma is zero.
    void validate(const NoiseSchedule& sched) const;
};

/// t mod s == floor(s / 2)
inline bool is_sync_step(int t, int s) { return t % s == s / 2; }
std::vector<int> sync_steps(int T, int s);

/// (lambda_exp / R) sum over sync steps of 1 / (2 sigma_t^2).
double lambda_bar(const std::function<double(int)>& sigma, int T, const SyncConfig& cfg);
double lambda_bar(const NoiseSchedule& sched, const SyncConfig& cfg);

/// Weights of one sync update: keep * mu_hat + align * target, sigma_prime.
struct SyncCoefficients {
    double keep;
    double align;
    double sigma;
};
SyncCoefficients sync_coefficients(double sigma, double lbar);

/// mu_hat + sigma * noise
Matrix ancestral_step(const Matrix& mu_hat, double sigma, const Matrix& noise);

struct FusionResult {
    Matrix mu;
    double sigma;
};
/// Minimizer of sum_k lam_k |x - f_k|^2 and sigma' = sqrt(1 / (2 sum lam)).
FusionResult fusion_oracle(const std::vector<Matrix>& f, const std::vector<double>& lam);

/// The quadratic terms one block is fused from: mu_hat with weight 1/(2 sigma^2)
/// followed by the rel/comb estimates read from the snapshot x_hat.
void fusion_terms(const Block& blk, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout,
                  double sigma, double lbar, const SyncConfig& cfg, std::vector<Matrix>& f, std::vector<double>& lam);

/// Deterministic part of the synchronized update for one block.
Matrix sync_rigid(int j, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma,
                  double lbar, const SyncConfig& cfg);
Matrix sync_skeleton(int i, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma,
                     double lbar, const SyncConfig& cfg);
Matrix sync_relative(const Block& blk, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout,
                     double sigma, double lbar, const SyncConfig& cfg);

/// Every block from the same snapshot, plus sigma' * noise.
Matrix sync_step(const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma, double lbar,
                 const Matrix& noise, const SyncConfig& cfg);

struct SampleStats {
    int steps = 0;
    int sync_steps = 0;
    double lambda_bar = 0.0;
    std::vector<double> sigma_ratio;  // sigma' / sigma_t per sync step
};

struct SampleRequest {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    const StateLayout* layout = nullptr;  // required when sync is enabled
    std::vector<const ConditionInputs*> cond;
    std::vector<std::uint64_t> seeds;  // one per sequence
    int batch = 0;                     // sequences per denoiser call, 0 = all
};

/// Lockstep ancestral sampling from t = T down to 1 with optional explicit
/// synchronization. Sequence k draws x_T and its step noise from seeds[k].
std::vector<Matrix> sample(const Denoiser& net, const SampleRequest& req, const NoiseSchedule& sched,
                           const SyncConfig& cfg, SampleStats* stats = nullptr);

}  // namespace mbsync
