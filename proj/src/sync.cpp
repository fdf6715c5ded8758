#include "mbsync/sync.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mbsync/kinematics.hpp"
#include "mbsync/rng.hpp"

namespace mbsync {

namespace {

bool rigid_like(const Block& b) { return b.kind == BlockKind::Rigid || b.kind == BlockKind::RigidRelative; }

Matrix block_of(const Matrix& x, const Block& b) { return x.middleCols(b.offset, b.width); }

// Snapshot the estimates are read from.
Matrix snapshot(const Matrix& x_hat, const StateLayout& layout, const SyncConfig& cfg) {
    if (!cfg.normalize_quaternions) return x_hat;
    Matrix s = x_hat;
    for (const auto& b : layout.blocks()) {
        if (rigid_like(b)) s.middleCols(b.offset, b.width) = normalize_rigid_block(block_of(x_hat, b));
    }
    return s;
}

void align_sign(Matrix& est, const Matrix& mu) {
    for (Eigen::Index f = 0; f < est.rows(); ++f) {
        if (est.row(f).segment<4>(3).dot(mu.row(f).segment<4>(3)) < 0.0) est.row(f).segment<4>(3) *= -1.0;
    }
}

// rel/comb estimates of one block from the snapshot.
std::vector<Matrix> estimates(const Block& blk, const Matrix& snap, const Matrix& mu_blk, const StateLayout& layout,
                              const SyncConfig& cfg) {
    const int m = layout.rigids();
    std::vector<Matrix> out;
    switch (blk.kind) {
        case BlockKind::Rigid:
            if (m == 1) {
                out.push_back(mu_blk);
                return out;
            }
            for (int k = 0; k < m; ++k) {
                if (k == blk.body) continue;
                out.push_back(comb_rigid_block(block_of(snap, layout.rigid(k)),
                                               block_of(snap, layout.rigid_relative(blk.body, k))));
            }
            break;
        case BlockKind::Skeleton:
            for (int j = 0; j < m; ++j) {
                out.push_back(comb_skeleton_block(block_of(snap, layout.rigid(j)),
                                                  block_of(snap, layout.skeleton_relative(blk.body, j))));
            }
            break;
        case BlockKind::RigidRelative:
            out.push_back(rel_rigid_block(block_of(snap, layout.rigid(blk.reference)),
                                          block_of(snap, layout.rigid(blk.body))));
            break;
        case BlockKind::SkeletonRelative:
            out.push_back(rel_skeleton_block(block_of(snap, layout.rigid(blk.reference)),
                                             block_of(snap, layout.skeleton(blk.body))));
            break;
    }
    if (cfg.align_quaternion_sign && rigid_like(blk)) {
        for (auto& e : out) align_sign(e, mu_blk);
    }
    return out;
}

Matrix fuse_block(const Block& blk, const Matrix& snap, const Matrix& mu_hat, const StateLayout& layout, double sigma,
                  double lbar, const SyncConfig& cfg) {
    const Matrix mu = block_of(mu_hat, blk);
    if (lbar == 0.0) return mu;
    const auto est = estimates(blk, snap, mu, layout, cfg);
    Matrix mean = Matrix::Zero(mu.rows(), mu.cols());
    for (const auto& e : est) mean += e;
    mean /= static_cast<double>(est.size());
    const auto c = sync_coefficients(sigma, lbar);
    return c.keep * mu + c.align * mean;
}

void check_inputs(const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout) {
    require_shape(x_hat.cols() == layout.width() && mu_hat.cols() == layout.width() && x_hat.rows() == mu_hat.rows(),
                  "sync: state shape does not match the layout");
}

}  // namespace

void SyncConfig::validate(const NoiseSchedule& sched) const {
    if (interval < 1) throw ConfigError("sync: interval s must be >= 1");
    if (!(lambda_exp >= 0.0) || !std::isfinite(lambda_exp)) throw ConfigError("sync: lambda_exp must be finite and >= 0");
    const auto ts = sync_steps(sched.steps(), interval);
    if (ts.empty()) throw ConfigError("sync: no step t in [1, T] with t mod s == s/2");
    for (int t : ts) {
        if (!(sched.sigma(t) > 0.0)) {
            throw ConfigError("sync: step " + std::to_string(t) + " has zero posterior noise; choose s >= 4");
        }
    }
}

std::vector<int> sync_steps(int T, int s) {
    if (s < 1) throw ConfigError("sync: interval s must be >= 1");
    std::vector<int> out;
    for (int t = T; t >= 1; --t) {
        if (is_sync_step(t, s)) out.push_back(t);
    }
    return out;
}

double lambda_bar(const std::function<double(int)>& sigma, int T, const SyncConfig& cfg) {
    const auto ts = sync_steps(T, cfg.interval);
    if (ts.empty()) throw ConfigError("sync: no step t in [1, T] with t mod s == s/2");
    if (cfg.lambda_exp == 0.0) return 0.0;
    double acc = 0.0;
    for (int t : ts) {
        const double s = sigma(t);
        acc += 1.0 / (2.0 * s * s);
    }
    return cfg.lambda_exp / static_cast<double>(ts.size()) * acc;
}

double lambda_bar(const NoiseSchedule& sched, const SyncConfig& cfg) {
    cfg.validate(sched);
    return lambda_bar([&](int t) { return sched.sigma(t); }, sched.steps(), cfg);
}

SyncCoefficients sync_coefficients(double sigma, double lbar) {
    if (!(lbar >= 0.0)) throw ConfigError("sync: lambda_bar must be >= 0");
    if (lbar == 0.0) return {1.0, 0.0, sigma};
    const double a = 2.0 * sigma * sigma * lbar;
    return {1.0 / (1.0 + a), a / (1.0 + a), std::sqrt(sigma * sigma / (1.0 + a))};
}

Matrix ancestral_step(const Matrix& mu_hat, double sigma, const Matrix& noise) {
    require_shape(noise.rows() == mu_hat.rows() && noise.cols() == mu_hat.cols(), "ancestral_step: shape mismatch");
    return mu_hat + sigma * noise;
}

FusionResult fusion_oracle(const std::vector<Matrix>& f, const std::vector<double>& lam) {
    require_shape(!f.empty() && f.size() == lam.size(), "fusion_oracle: need one weight per term");
    double total = 0.0;
    Matrix acc = Matrix::Zero(f[0].rows(), f[0].cols());
    for (std::size_t k = 0; k < f.size(); ++k) {
        require_shape(f[k].rows() == acc.rows() && f[k].cols() == acc.cols(), "fusion_oracle: shape mismatch");
        if (!(lam[k] >= 0.0)) throw ConfigError("fusion_oracle: weights must be >= 0");
        acc += lam[k] * f[k];
        total += lam[k];
    }
    if (!(total > 0.0)) throw ConfigError("fusion_oracle: weights sum to zero");
    return {acc / total, std::sqrt(1.0 / (2.0 * total))};
}

void fusion_terms(const Block& blk, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma,
                  double lbar, const SyncConfig& cfg, std::vector<Matrix>& f, std::vector<double>& lam) {
    check_inputs(x_hat, mu_hat, layout);
    const Matrix mu = block_of(mu_hat, blk);
    const auto est = estimates(blk, snapshot(x_hat, layout, cfg), mu, layout, cfg);
    f.assign(1, mu);
    lam.assign(1, 1.0 / (2.0 * sigma * sigma));
    for (const auto& e : est) {
        f.push_back(e);
        lam.push_back(lbar / static_cast<double>(est.size()));
    }
}

Matrix sync_rigid(int j, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma,
                  double lbar, const SyncConfig& cfg) {
    check_inputs(x_hat, mu_hat, layout);
    return fuse_block(layout.rigid(j), snapshot(x_hat, layout, cfg), mu_hat, layout, sigma, lbar, cfg);
}

Matrix sync_skeleton(int i, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma,
                     double lbar, const SyncConfig& cfg) {
    check_inputs(x_hat, mu_hat, layout);
    return fuse_block(layout.skeleton(i), snapshot(x_hat, layout, cfg), mu_hat, layout, sigma, lbar, cfg);
}

Matrix sync_relative(const Block& blk, const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout,
                     double sigma, double lbar, const SyncConfig& cfg) {
    if (!blk.is_relative()) throw ConfigError("sync_relative: " + blk.name() + " is not a relative block");
    check_inputs(x_hat, mu_hat, layout);
    return fuse_block(blk, snapshot(x_hat, layout, cfg), mu_hat, layout, sigma, lbar, cfg);
}

Matrix sync_step(const Matrix& x_hat, const Matrix& mu_hat, const StateLayout& layout, double sigma, double lbar,
                 const Matrix& noise, const SyncConfig& cfg) {
    check_inputs(x_hat, mu_hat, layout);
    if (lbar == 0.0) return ancestral_step(mu_hat, sigma, noise);
    const Matrix snap = snapshot(x_hat, layout, cfg);
    Matrix det(mu_hat.rows(), mu_hat.cols());
    for (const auto& b : layout.blocks()) {
        det.middleCols(b.offset, b.width) = fuse_block(b, snap, mu_hat, layout, sigma, lbar, cfg);
    }
    return ancestral_step(det, sync_coefficients(sigma, lbar).sigma, noise);
}

std::vector<Matrix> sample(const Denoiser& net, const SampleRequest& req, const NoiseSchedule& sched,
                           const SyncConfig& cfg, SampleStats* stats) {
    const std::size_t K = req.seeds.size();
    if (K == 0) return {};
    if (req.rows < 1 || req.cols < 1) throw ShapeError("sample: empty state shape");
    std::vector<const ConditionInputs*> cond = req.cond;
    if (cond.empty()) cond.assign(K, nullptr);
    require_shape(cond.size() == K, "sample: need one condition per seed");

    double lbar = 0.0;
    if (cfg.enabled) {
        if (!req.layout) throw ConfigError("sample: sync needs a state layout");
        require_shape(req.layout->width() == req.cols, "sample: layout width does not match the state");
        lbar = lambda_bar(sched, cfg);
    }
    SampleStats local;
    SampleStats& st = stats ? *stats : local;
    st = SampleStats{};
    st.lambda_bar = lbar;

    std::vector<Rng> rngs;
    std::vector<Matrix> x;
    for (auto s : req.seeds) {
        rngs.emplace_back(s);
        x.push_back(rngs.back().normal_matrix(req.rows, req.cols));
    }
    const std::size_t chunk = req.batch > 0 ? static_cast<std::size_t>(req.batch) : K;

    for (int t = sched.steps(); t >= 1; --t) {
        std::vector<Matrix> x0(K);
        for (std::size_t at = 0; at < K; at += chunk) {
            const std::size_t end = std::min(K, at + chunk);
            const std::vector<Matrix> xs(x.begin() + static_cast<std::ptrdiff_t>(at), x.begin() + static_cast<std::ptrdiff_t>(end));
            const std::vector<const ConditionInputs*> cs(cond.begin() + static_cast<std::ptrdiff_t>(at),
                                                         cond.begin() + static_cast<std::ptrdiff_t>(end));
            auto out = net.predict_x0(xs, t, cs);
            require_shape(out.size() == xs.size(), "sample: denoiser returned the wrong batch size");
            for (std::size_t k = at; k < end; ++k) x0[k] = std::move(out[k - at]);
        }
        const bool sync = cfg.enabled && is_sync_step(t, cfg.interval);
        const double sigma = sched.sigma(t);
        for (std::size_t k = 0; k < K; ++k) {
            if (!x0[k].allFinite()) throw NumericError("sample: non-finite denoiser output at t=" + std::to_string(t));
            const Matrix mu = posterior_mean(x[k], x0[k], t, sched);
            if (t == 1) {
                x[k] = mu;
                continue;
            }
            const Matrix noise = rngs[k].normal_matrix(req.rows, req.cols);
            x[k] = sync ? sync_step(x[k], mu, *req.layout, sigma, lbar, noise, cfg) : ancestral_step(mu, sigma, noise);
        }
        ++st.steps;
        if (sync) {
            ++st.sync_steps;
            st.sigma_ratio.push_back(sync_coefficients(sigma, lbar).sigma / sigma);
        }
    }
    return x;
}

}  // namespace mbsync
