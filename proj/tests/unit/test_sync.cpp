#include <cmath>

#include <gtest/gtest.h>

#include "mbsync/geometry_metrics.hpp"
#include "mbsync/kinematics.hpp"
#include "mbsync/rng.hpp"
#include "mbsync/scenes.hpp"
#include "mbsync/sync.hpp"
#include "oracles.hpp"

using namespace mbsync;

namespace {

double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

Matrix consistent_state(int m, int n, int joints, int frames, std::uint64_t seed) {
    auto spec = random_spec(SceneFamily::Carry, m, n, joints, frames, seed);
    return gen_scene(spec).state.data;
}

}  // namespace

TEST(Sync, StepPredicate) {
    EXPECT_EQ(sync_steps(1000, 50).size(), 20u);
    EXPECT_EQ(sync_steps(1000, 50).front(), 975);
    EXPECT_EQ(sync_steps(1000, 50).back(), 25);
    EXPECT_EQ(sync_steps(100, 50), (std::vector<int>{75, 25}));
    for (int s = 1; s <= 60; ++s) {
        for (int t : sync_steps(300, s)) EXPECT_EQ(t % s, s / 2);
        if (300 % s == 0) EXPECT_EQ(sync_steps(300, s).size(), static_cast<std::size_t>(300 / s));
    }
}

TEST(Sync, LambdaBar) {
    SyncConfig cfg;
    cfg.interval = 50;
    cfg.lambda_exp = 0.8;
    EXPECT_NEAR(lambda_bar([](int) { return 1.0; }, 100, cfg), 0.4, 1e-15);
    cfg.lambda_exp = 0.0;
    EXPECT_EQ(lambda_bar([](int) { return 1.0; }, 100, cfg), 0.0);

    const auto sched = make_schedule(1000, 1e-4, 0.02);
    cfg.lambda_exp = 0.3;
    double acc = 0.0;
    for (int t = 25; t <= 1000; t += 50) acc += 1.0 / (2.0 * sched.sigma(t) * sched.sigma(t));
    EXPECT_NEAR(lambda_bar(sched, cfg), 0.3 / 20.0 * acc, 1e-12 * acc);
}

TEST(Sync, ConfigValidation) {
    const auto sched = make_schedule(1000, 1e-4, 0.02);
    SyncConfig cfg;
    for (int s : {1, 2, 3}) {
        cfg.interval = s;
        EXPECT_THROW(cfg.validate(sched), ConfigError) << s;
    }
    cfg.interval = 4;
    EXPECT_NO_THROW(cfg.validate(sched));
    cfg.interval = 0;
    EXPECT_THROW(cfg.validate(sched), ConfigError);
    cfg.interval = 50;
    cfg.lambda_exp = -0.1;
    EXPECT_THROW(cfg.validate(sched), ConfigError);
    cfg.lambda_exp = 0.3;
    EXPECT_THROW(cfg.validate(make_schedule(10, 1e-4, 0.02)), ConfigError);
}

TEST(Sync, Coefficients) {
    const auto c = sync_coefficients(1.0, 0.5);
    EXPECT_DOUBLE_EQ(c.keep, 0.5);
    EXPECT_DOUBLE_EQ(c.align, 0.5);
    EXPECT_NEAR(c.sigma, std::sqrt(0.5), 1e-15);
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const double sigma = rng.uniform(1e-3, 2.0), lbar = rng.uniform(1e-6, 1e4);
        const auto k = sync_coefficients(sigma, lbar);
        EXPECT_NEAR(k.keep + k.align, 1.0, 1e-12);
        EXPECT_LT(k.sigma, sigma);
        EXPECT_NEAR(k.sigma, std::sqrt(sigma * sigma / (1.0 + 2.0 * sigma * sigma * lbar)), 1e-12);
    }
    const auto z = sync_coefficients(0.7, 0.0);
    EXPECT_EQ(z.sigma, 0.7);
    EXPECT_EQ(z.keep, 1.0);
}

TEST(Sync, AncestralStep) {
    const Matrix mu = Matrix::Random(4, 3), noise = Matrix::Random(4, 3);
    EXPECT_EQ(ancestral_step(mu, 0.5, Matrix::Zero(4, 3)), mu);
    EXPECT_EQ(ancestral_step(mu, 0.0, noise), mu);
    EXPECT_TRUE(ancestral_step(mu, 0.5, noise).isApprox(mu + 0.5 * noise));
}

TEST(Sync, FusionOracle) {
    const auto r = fusion_oracle({Matrix::Zero(1, 1), Matrix::Constant(1, 1, 2.0)}, {1.0, 1.0});
    EXPECT_DOUBLE_EQ(r.mu(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(r.sigma, 0.5);
    const auto single = fusion_oracle({Matrix::Constant(2, 2, 3.0)}, {0.25});
    EXPECT_EQ(single.mu, Matrix::Constant(2, 2, 3.0));
    EXPECT_NEAR(single.sigma * single.sigma, 2.0, 1e-15);
    const auto same = fusion_oracle({Matrix::Constant(1, 3, 0.3), Matrix::Constant(1, 3, 0.3)}, {5.0, 0.01});
    EXPECT_NEAR(same.mu(0, 2), 0.3, 1e-15);
    EXPECT_THROW(fusion_oracle({Matrix::Zero(1, 1)}, {0.0}), ConfigError);
    EXPECT_NEAR(oracle::quadratic_argmin({0.0, 2.0}, {1.0, 1.0}), 1.0, 1e-7);
}

TEST(Sync, FusionEquivalence) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = 1 + trial % 3, n = trial % 2 + (m == 1);
        const StateLayout layout(m, n, 4);
        const Matrix x = rng.normal_matrix(6, layout.width());
        const Matrix mu = x + 0.1 * rng.normal_matrix(6, layout.width());
        const double sigma = rng.uniform(0.01, 1.0), lbar = rng.uniform(0.0, 50.0);
        const SyncConfig cfg;
        for (const auto& b : layout.blocks()) {
            Matrix got;
            if (b.kind == BlockKind::Rigid) got = sync_rigid(b.body, x, mu, layout, sigma, lbar, cfg);
            else if (b.kind == BlockKind::Skeleton) got = sync_skeleton(b.body, x, mu, layout, sigma, lbar, cfg);
            else got = sync_relative(b, x, mu, layout, sigma, lbar, cfg);
            std::vector<Matrix> f;
            std::vector<double> lam;
            fusion_terms(b, x, mu, layout, sigma, lbar, cfg, f, lam);
            const auto fused = fusion_oracle(f, lam);
            EXPECT_LT(rel_err(got, fused.mu), 1e-9) << b.name();
            EXPECT_NEAR(fused.sigma, sync_coefficients(sigma, lbar).sigma, 1e-12);
            // Coordinate-wise numerical minimization of the quadratic.
            for (int probe = 0; probe < 3; ++probe) {
                const auto r = static_cast<Eigen::Index>(rng.next_u64() % 6);
                const auto c = static_cast<Eigen::Index>(rng.next_u64() % b.width);
                std::vector<double> fs;
                for (const auto& fk : f) fs.push_back(fk(r, c));
                const double ref = oracle::quadratic_argmin(fs, lam);
                EXPECT_LT(std::abs(got(r, c) - ref) / std::max(1.0, std::abs(ref)), 1e-6) << b.name();
            }
        }
    }
}

TEST(Sync, WorkedExamples) {
    const StateLayout layout(2, 1, 3);
    Rng rng(5);
    const Matrix x = rng.normal_matrix(3, layout.width());
    const Matrix mu = rng.normal_matrix(3, layout.width());
    SyncConfig cfg;
    cfg.align_quaternion_sign = false;
    cfg.normalize_quaternions = false;

    // m = 2, sigma = 1, lbar = 0.5: half comb, half mu_hat.
    const Matrix comb = comb_rigid_block(x.middleCols(layout.rigid(1).offset, 7),
                                         x.middleCols(layout.rigid_relative(0, 1).offset, 7));
    const Matrix r0 = sync_rigid(0, x, mu, layout, 1.0, 0.5, cfg);
    EXPECT_LT(rel_err(r0, 0.5 * comb + 0.5 * mu.middleCols(0, 7)), 1e-14);

    // Relative block: large lbar gives rel(x_a, x_b).
    const auto& rb = layout.rigid_relative(1, 0);
    const Matrix rel = rel_rigid_block(x.middleCols(layout.rigid(0).offset, 7), x.middleCols(layout.rigid(1).offset, 7));
    EXPECT_LT(rel_err(sync_relative(rb, x, mu, layout, 1.0, 1e12, cfg), rel), 1e-9);
    EXPECT_EQ(sync_relative(rb, x, mu, layout, 1.0, 0.0, cfg), mu.middleCols(rb.offset, 7));

    // Skeleton with m = 1: one comb term weighted 2 s^2 lbar / (1 + 2 s^2 lbar).
    const StateLayout one(1, 1, 3);
    const Matrix x1 = rng.normal_matrix(3, one.width()), mu1 = rng.normal_matrix(3, one.width());
    const auto c = sync_coefficients(0.8, 2.0);
    const Matrix cs = comb_skeleton_block(x1.middleCols(0, 7), x1.middleCols(one.skeleton_relative(0, 0).offset, 9));
    EXPECT_LT(rel_err(sync_skeleton(0, x1, mu1, one, 0.8, 2.0, cfg),
                      c.keep * mu1.middleCols(one.skeleton(0).offset, 9) + c.align * cs),
              1e-14);
    // Rigid with m = 1 keeps mu_hat.
    EXPECT_LT(rel_err(sync_rigid(0, x1, mu1, one, 0.8, 2.0, cfg), mu1.middleCols(0, 7)), 1e-15);
}

TEST(Sync, ConsistentFixedPoint) {
    for (int m : {1, 2, 3}) {
        const Matrix x = consistent_state(m, 1, 21, 16, 40 + m);
        const StateLayout layout(m, 1, 21);
        const Matrix out = sync_step(x, x, layout, 0.3, 5.0, Matrix::Zero(x.rows(), x.cols()), SyncConfig{});
        EXPECT_LT((out - x).cwiseAbs().maxCoeff(), 1e-12) << m;
    }
}

TEST(Sync, StepReducesResidual) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const StateLayout layout(2, 1, 21);
        const Matrix clean = consistent_state(2, 1, 21, 16, 60 + trial);
        const Matrix x = clean + 0.02 * rng.normal_matrix(clean.rows(), clean.cols());
        const Matrix out = sync_step(x, x, layout, 0.5, 1.0, Matrix::Zero(x.rows(), x.cols()), SyncConfig{});
        EXPECT_LT(alignment_residual(out, layout), alignment_residual(x, layout));
    }
}

TEST(Sync, DisabledEqualsZeroLambda) {
    const StateLayout layout(2, 1, 3);
    const auto sched = make_schedule(100, 1e-4, 0.02);
    GaussianDenoiser net(Vector::Constant(layout.width(), 0.2), Matrix::Identity(layout.width(), layout.width()) * 0.5,
                         sched);
    SampleRequest req;
    req.rows = 5;
    req.cols = layout.width();
    req.layout = &layout;
    req.seeds = {1, 2, 3};
    SyncConfig off;
    off.enabled = false;
    SyncConfig zero;
    zero.interval = 10;
    zero.lambda_exp = 0.0;
    SampleStats st;
    const auto a = sample(net, req, sched, off);
    const auto b = sample(net, req, sched, zero, &st);
    EXPECT_EQ(st.sync_steps, 10);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);

    SyncConfig on;
    on.interval = 10;
    const auto c = sample(net, req, sched, on);
    req.batch = 2;
    const auto d = sample(net, req, sched, on);
    for (std::size_t k = 0; k < c.size(); ++k) {
        EXPECT_EQ(c[k], d[k]);
        EXPECT_NE(c[k], a[k]);
    }
}

TEST(Sync, SyncCountAtPaperSchedule) {
    const StateLayout layout(2, 0, 2);
    const auto sched = make_schedule(1000, 1e-4, 0.02);
    GaussianDenoiser net(Vector::Zero(layout.width()), Matrix::Identity(layout.width(), layout.width()), sched);
    SampleRequest req{2, layout.width(), &layout, {}, {9}, 0};
    SampleStats st;
    sample(net, req, sched, SyncConfig{}, &st);
    EXPECT_EQ(st.steps, 1000);
    EXPECT_EQ(st.sync_steps, 20);
    for (double r : st.sigma_ratio) EXPECT_LT(r, 1.0);
}

TEST(Sync, RecoversGaussian) {
    const auto sched = make_schedule(1000, 1e-4, 0.02);
    Vector mean(2);
    mean << 1.0, -0.5;
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.3, 0.5;
    GaussianDenoiser net(mean, cov, sched);
    SyncConfig off;
    off.enabled = false;
    const auto out = sample(net, SampleRequest{10000, 2, nullptr, {}, {77}, 0}, sched, off)[0];
    const Eigen::RowVectorXd mu = out.colwise().mean();
    const Matrix centred = out.rowwise() - mu;
    const Matrix emp = centred.transpose() * centred / double(out.rows() - 1);
    EXPECT_LT((mu.transpose() - mean).cwiseAbs().maxCoeff(), 0.05);
    EXPECT_LT((emp - cov).norm(), 0.1);
}

TEST(Sync, RejectsMissingLayout) {
    const auto sched = make_schedule(100, 1e-4, 0.02);
    GaussianDenoiser net(Vector::Zero(2), Matrix::Identity(2, 2), sched);
    EXPECT_THROW(sample(net, SampleRequest{3, 2, nullptr, {}, {1}, 0}, sched, SyncConfig{}), ConfigError);
}
