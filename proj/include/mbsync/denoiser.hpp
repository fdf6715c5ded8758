#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/diffusion.hpp"
#include "mbsync/freq.hpp"
#include "mbsync/geometry_metrics.hpp"
#include "mbsync/losses.hpp"
#include "mbsync/scenes.hpp"
#include "mbsync/state.hpp"

namespace mbsync {

inline constexpr int kLabelWidth = 128;
inline constexpr int kGeometryWidth = 128;

/// 128(2m + 1) + 10n
inline int condition_width(int m, int n) { return kLabelWidth * (2 * m + 1) + kShapeParams * n; }

/// Per-sequence conditioning inputs before embedding.
struct ConditionInputs {
    int action = 0;
    std::vector<int> labels;  // one per rigid
    Matrix geometry;          // m x 128
    Matrix shape;             // n x 10
    Vector mask;              // N, 1 on real frames
};

/// BPS deltas of a centred shape pushed through a fixed seeded random projection.
class GeometryEncoder {
public:
    explicit GeometryEncoder(std::uint64_t seed, int points = kBpsPoints);
    Vector encode(const ShapePrimitive& shape) const;  // 128
    const BasisPointSet& bps() const { return bps_; }

private:
    BasisPointSet bps_;
    Matrix projection_;  // 3P x 128
};

ConditionInputs make_condition(const SceneSpec& spec, const std::vector<ShapePrimitive>& shapes,
                               const GeometryEncoder& enc, Eigen::Index frames, const Vector& mask = {});

/// [sin(t w_k), cos(t w_k)] with w_k = 10000^(-k / (dim/2)). dim must be even.
Vector sinusoidal_embedding(double t, int dim);

/// Anything that estimates x0 from x_t for a batch of sequences at one step.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual std::vector<Matrix> predict_x0(const std::vector<Matrix>& x_t, int t,
                                           const std::vector<const ConditionInputs*>& cond) const = 0;
};

/// Closed-form E[x0 | x_t] for x0 ~ N(mu0, v0 I).
Matrix analytic_gaussian_denoise(const Matrix& mu0, double v0, const Matrix& x_t, int t, const NoiseSchedule& sched);

/// x0 rows ~ N(mean, cov) independently; each row of x_t is denoised on its own.
class GaussianDenoiser : public Denoiser {
public:
    /// Throws ConfigError on a non-symmetric or non-PSD covariance.
    GaussianDenoiser(Vector mean, Matrix cov, NoiseSchedule sched);
    std::vector<Matrix> predict_x0(const std::vector<Matrix>& x_t, int t,
                                   const std::vector<const ConditionInputs*>& cond) const override;

private:
    Vector mean_;
    Matrix cov_;
    NoiseSchedule sched_;
};

/// Named slices of one flat parameter vector.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Eigen::Index rows;
        Eigen::Index cols;
        Eigen::Index offset;
    };

    int add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    Eigen::Index size() const { return size_; }
    const std::vector<Entry>& entries() const { return entries_; }
    const Entry& entry(int id) const { return entries_.at(static_cast<std::size_t>(id)); }

    Eigen::Map<Matrix> view(Vector& flat, int id) const;
    Eigen::Map<const Matrix> view(const Vector& flat, int id) const;

private:
    std::vector<Entry> entries_;
    Eigen::Index size_ = 0;
};

struct DenoiserConfig {
    int m = 2;
    int n = 1;
    int joints = 21;
    int frames = 64;
    int cutoff = 16;
    BandMode mode = BandMode::Symmetric;
    bool decompose = true;
    int hidden = 256;
    int time_dim = 64;
    int pos_freqs = 8;
    int steps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.01;

    Eigen::Index state_width() const { return StateLayout::total_width(m, n, joints); }
    int cond_width() const { return condition_width(m, n); }
    /// Throws ConfigError on inconsistent sizes.
    void validate() const;
};

struct DenoiserOutput {
    Matrix dc;  // N x D_sum
    Matrix F;   // N x D_sum, empty when decomposition is disabled
};

/// Per-frame shared MLP with a dc branch and a frequency branch.
///
/// Each branch maps [x_row, position features] through
///   h1 = gelu(W1 z + Wc c + e_t + b1), h2 = gelu(W2 h1 + V2 mean(h1) + b2),
///   y  = W3 h2 + b3 + (Wg tau + g) * sqrt(abar_t) x_row
/// where c is the embedded condition, tau the hidden time feature and e_t its
/// per-branch projection. mean() pools over real frames (dc) or packed rows (F).
class TrainableDenoiser : public Denoiser {
public:
    struct Cache;

    TrainableDenoiser(const DenoiserConfig& cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    const StateLayout& layout() const { return layout_; }
    const BandDecomposer& decomposer() const { return dec_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const ParamStore& store() const { return store_; }
    Vector& params() { return params_; }
    const Vector& params() const { return params_; }
    Eigen::Index parameter_count() const { return params_.size(); }

    /// Embedded condition vector, width 128(2m+1) + 10n. Throws ConfigError
    /// on label ids outside the vocabulary.
    Vector build_condition(const ConditionInputs& c) const;
    /// The projected timestep feature tau (hidden wide).
    Vector timestep_embed(int t) const;

    /// Branch inputs per sequence; x_F ignored when decomposition is disabled.
    std::vector<DenoiserOutput> forward(const std::vector<Matrix>& x_dc, const std::vector<Matrix>& x_F,
                                        const std::vector<const ConditionInputs*>& cond,
                                        const std::vector<int>& t, Cache* cache = nullptr) const;
    /// Accumulates d(objective)/d(params) into `grad` given output gradients.
    void backward(const Cache& cache, const std::vector<DenoiserOutput>& d_out, Vector& grad) const;

    DenoiserOutput denoise(const Matrix& x_dc, const Matrix& x_F, const ConditionInputs& cond, int t) const;

    /// Masks, decomposes, denoises and recomposes.
    std::vector<Matrix> predict_x0(const std::vector<Matrix>& x_t, int t,
                                   const std::vector<const ConditionInputs*>& cond) const override;

    /// Network inputs and loss targets for one noisy sequence.
    void branch_inputs(const Matrix& x_t, const Vector& mask, Matrix& x_dc, Matrix& x_F) const;
    void branch_targets(const Matrix& x0, Matrix& gt_dc, Matrix& gt_ac) const;

    void save(const std::string& path, const std::string& extra_json = "{}") const;
    static TrainableDenoiser load(const std::string& path);

private:
    struct BranchIds {
        int W1, b1, Wc, W2, V2, b2, W3, b3, Wg, g;
    };

    DenoiserConfig cfg_;
    StateLayout layout_;
    BandDecomposer dec_;
    NoiseSchedule sched_;
    ParamStore store_;
    Vector params_;
    Matrix pos_;  // N x 2K
    std::uint64_t seed_ = 0;
    int embed_, Lt1_, bt1_, Lt2_, bt2_;
    BranchIds branch_[2];
};

struct TrainConfig {
    int epochs = 1;
    int batch = 16;
    double lr = 0.05;
    double momentum = 0.9;
    double clip = 1.0;
    LossWeights weights;

    void validate() const;
};

struct TrainingSet {
    StateLayout layout;
    std::vector<Matrix> x0;               // N x D_sum, zero on padded frames
    std::vector<ConditionInputs> cond;

    std::size_t size() const { return x0.size(); }
};

/// Builds x0 and conditions from a dataset sharing one layout.
TrainingSet make_training_set(const Dataset& ds, const GeometryEncoder& enc);

struct Optimizer {
    Vector velocity;
};

struct TrainLog {
    std::vector<double> step_loss;  // objective per step, normalized by element count
    double mean() const;
};

/// One noisy example with fixed step and noise.
struct TrainExample {
    const Matrix* x0;
    const ConditionInputs* cond;
    int t;
    Matrix eps;
};

/// Objective (sum of total_loss over examples divided by the number of real
/// entries) and, when `grad` is non-null, its gradient.
double training_objective(const TrainableDenoiser& net, const std::vector<TrainExample>& batch,
                          const LossWeights& w, Vector* grad);

/// One momentum step on a fixed batch. Throws NumericError on a non-finite loss.
double train_step(TrainableDenoiser& net, Optimizer& opt, const std::vector<TrainExample>& batch,
                  const TrainConfig& cfg);

/// One pass over the shuffled set with random steps and noise drawn from
/// derive_seed(seed, {kStreamTrain, epoch}).
TrainLog train_epoch(TrainableDenoiser& net, Optimizer& opt, const TrainingSet& data, const TrainConfig& cfg,
                     std::uint64_t seed, int epoch);

}  // namespace mbsync
