#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "mbsync/container.hpp"
#include "mbsync/denoiser.hpp"
#include "mbsync/rng.hpp"

using namespace mbsync;

namespace {

DenoiserConfig small_config(bool decompose = true) {
    DenoiserConfig c;
    c.m = 2;
    c.n = 1;
    c.joints = 21;
    c.frames = 24;
    c.cutoff = 4;
    c.hidden = 12;
    c.time_dim = 8;
    c.pos_freqs = 2;
    c.steps = 50;
    c.decompose = decompose;
    return c;
}

struct Fixture {
    TrainingSet data;
    explicit Fixture(const DenoiserConfig& c, int count = 3, int short_frames = 0) {
        std::vector<SceneSpec> specs;
        std::vector<HighOrderState> states;
        for (int i = 0; i < count; ++i) {
            const int frames = (i == 0 && short_frames) ? short_frames : c.frames;
            auto spec = random_spec(static_cast<SceneFamily>(i % 2), c.m, c.n, c.joints, frames, 100 + i);
            specs.push_back(spec);
            states.push_back(gen_scene(spec).state);
        }
        const Dataset ds = pad_and_mask(specs, states, c.frames);
        data = make_training_set(ds, GeometryEncoder(7, 64));
    }
};

std::vector<TrainExample> examples(const TrainableDenoiser& net, const TrainingSet& data, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainExample> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        TrainExample e{&data.x0[i], &data.cond[i], 1 + static_cast<int>(rng.next_u64() % net.config().steps), Matrix()};
        e.eps = rng.normal_matrix(data.x0[i].rows(), data.x0[i].cols());
        out.push_back(std::move(e));
    }
    return out;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("mbsync_test_" + name)).string();
}

}  // namespace

TEST(Denoiser, ConditionWidth) {
    EXPECT_EQ(condition_width(2, 2), 660);
    EXPECT_EQ(condition_width(1, 0), 384);
    const auto c = small_config();
    Fixture f(c, 1);
    TrainableDenoiser net(c, 1);
    EXPECT_EQ(net.build_condition(f.data.cond[0]).size(), condition_width(2, 1));
    auto bad = f.data.cond[0];
    bad.labels[0] = kLabelVocabulary;
    EXPECT_THROW(net.build_condition(bad), ConfigError);
}

TEST(Denoiser, SinusoidalEmbedding) {
    const Vector e0 = sinusoidal_embedding(0, 64);
    EXPECT_TRUE(e0.head(32).isZero());
    EXPECT_TRUE(e0.tail(32).isOnes());
    for (int t = 1; t < 1000; ++t) {
        EXPECT_GT((sinusoidal_embedding(t, 64) - sinusoidal_embedding(t + 1, 64)).norm(), 1e-3);
    }
    EXPECT_THROW(sinusoidal_embedding(1, 7), ConfigError);
}

TEST(Denoiser, ZeroParametersGiveZeroOutput) {
    const auto c = small_config();
    Fixture f(c, 1);
    TrainableDenoiser net(c, 3);
    net.params().setZero();
    const auto x = net.predict_x0({Matrix::Random(c.frames, c.state_width())}, 10, {&f.data.cond[0]});
    EXPECT_TRUE(x[0].isZero(0.0));
}

TEST(Denoiser, Deterministic) {
    const auto c = small_config();
    Fixture f(c, 1);
    TrainableDenoiser a(c, 5), b(c, 5), d(c, 6);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_NE(a.params(), d.params());
    const Matrix x = Matrix::Random(c.frames, c.state_width());
    EXPECT_EQ(a.predict_x0({x}, 7, {&f.data.cond[0]})[0], b.predict_x0({x}, 7, {&f.data.cond[0]})[0]);
}

TEST(Denoiser, BatchMatchesSingle) {
    const auto c = small_config();
    Fixture f(c, 3, 17);
    TrainableDenoiser net(c, 2);
    std::vector<Matrix> xs;
    std::vector<const ConditionInputs*> cs;
    for (int i = 0; i < 3; ++i) {
        xs.push_back(Matrix::Random(c.frames, c.state_width()));
        cs.push_back(&f.data.cond[static_cast<std::size_t>(i)]);
    }
    const auto batch = net.predict_x0(xs, 20, cs);
    for (int i = 0; i < 3; ++i) {
        EXPECT_TRUE(batch[static_cast<std::size_t>(i)].isApprox(net.predict_x0({xs[static_cast<std::size_t>(i)]}, 20, {cs[static_cast<std::size_t>(i)]})[0], 1e-12));
    }
}

TEST(Denoiser, FiniteDifferenceGradient) {
    for (bool decompose : {true, false}) {
        const auto c = small_config(decompose);
        Fixture f(c, 3, 16);
        TrainableDenoiser net(c, 11);
        Rng rng(12);
        net.params() = rng.normal_matrix(net.parameter_count(), 1).col(0) * 0.3;
        const auto batch = examples(net, f.data, 13);
        const LossWeights w;
        Vector grad;
        training_objective(net, batch, w, &grad);
        ASSERT_EQ(grad.size(), net.parameter_count());

        // Probe every parameter block plus random entries.
        std::vector<Eigen::Index> probes;
        for (const auto& e : net.store().entries()) probes.push_back(e.offset + (e.rows * e.cols) / 2);
        while (probes.size() < 130) probes.push_back(static_cast<Eigen::Index>(rng.next_u64() % net.parameter_count()));

        const double h = 1e-3;
        int checked = 0;
        for (auto k : probes) {
            const double orig = net.params()[k];
            net.params()[k] = orig + h;
            const double lp = training_objective(net, batch, w, nullptr);
            net.params()[k] = orig - h;
            const double lm = training_objective(net, batch, w, nullptr);
            net.params()[k] = orig;
            const double fd = (lp - lm) / (2 * h);
            const double scale = std::max({std::abs(fd), std::abs(grad[k]), 1e-7});
            if (!decompose && net.store().entries().size() > 0 && k >= net.store().entries()[15].offset) {
                // frequency branch is unused without decomposition
                EXPECT_EQ(grad[k], 0.0);
                continue;
            }
            EXPECT_LT(std::abs(fd - grad[k]) / scale, 1e-4) << "param " << k << " fd " << fd << " an " << grad[k];
            ++checked;
        }
        EXPECT_GE(checked, decompose ? 100 : 50);
    }
}

TEST(Denoiser, AnalyticGaussian) {
    const auto s = make_schedule(10, 1e-4, 0.02);
    // v0 = 1, mu0 = 0: E[x0 | x_t] = sqrt(ab) x_t
    const Matrix x = Matrix::Constant(2, 3, 0.7);
    const Matrix r = analytic_gaussian_denoise(Matrix::Zero(2, 3), 1.0, x, 4, s);
    EXPECT_NEAR(r(0, 0), std::sqrt(s.alpha_bar(4)) * 0.7, 1e-14);
    const auto quarter = make_schedule(1, 0.75, 0.75);
    ASSERT_NEAR(quarter.alpha_bar(1), 0.25, 1e-15);
    const Matrix e = analytic_gaussian_denoise(Matrix::Zero(1, 1), 1.0, Matrix::Ones(1, 1), 1, quarter);
    EXPECT_NEAR(e(0, 0), 0.5, 1e-14);
    GaussianDenoiser g(Vector::Zero(3), Matrix::Identity(3, 3), s);
    EXPECT_TRUE(g.predict_x0({x}, 4, {nullptr})[0].isApprox(r.topRows(2), 1e-12));
    Matrix bad = Matrix::Identity(3, 3);
    bad(0, 1) = 1.0;
    EXPECT_THROW(GaussianDenoiser(Vector::Zero(3), bad, s), ConfigError);
}

TEST(Denoiser, PaddingContract) {
    const auto c = small_config();
    Fixture f(c, 1, 18);
    TrainableDenoiser net(c, 4);
    const auto& cond = f.data.cond[0];
    Matrix a = Matrix::Random(c.frames, c.state_width());
    Matrix b = a;
    b.bottomRows(c.frames - 18).setRandom();
    b.bottomRows(c.frames - 18) *= 50.0;
    const auto ya = net.predict_x0({a}, 30, {&cond})[0];
    const auto yb = net.predict_x0({b}, 30, {&cond})[0];
    EXPECT_TRUE(ya.topRows(18).isApprox(yb.topRows(18), 1e-12));
}

TEST(Denoiser, OverfitsFixedExample) {
    const auto c = small_config();
    Fixture f(c, 1);
    TrainableDenoiser net(c, 21);
    auto batch = examples(net, f.data, 22);
    batch[0].t = 10;
    TrainConfig tc;
    Optimizer opt;
    const double initial = training_objective(net, batch, tc.weights, nullptr);
    double last = initial;
    for (int i = 0; i < 2000; ++i) last = train_step(net, opt, batch, tc);
    last = training_objective(net, batch, tc.weights, nullptr);
    EXPECT_LT(last, 0.01 * initial) << initial << " -> " << last;
}

TEST(Denoiser, ZeroEpochsAndSeededTraining) {
    const auto c = small_config();
    Fixture f(c, 4);
    TrainConfig tc;
    tc.batch = 2;
    TrainableDenoiser a(c, 8), b(c, 8);
    const Vector before = a.params();
    Optimizer oa, ob;
    for (int e = 0; e < 0; ++e) train_epoch(a, oa, f.data, tc, 1, e);
    EXPECT_EQ(a.params(), before);
    const auto la = train_epoch(a, oa, f.data, tc, 1, 0);
    const auto lb = train_epoch(b, ob, f.data, tc, 1, 0);
    EXPECT_EQ(la.step_loss.size(), 2u);
    EXPECT_EQ(la.step_loss, lb.step_loss);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_NE(a.params(), before);
}

TEST(Denoiser, RejectsNonFiniteLoss) {
    const auto c = small_config();
    Fixture f(c, 1);
    TrainableDenoiser net(c, 8);
    auto batch = examples(net, f.data, 1);
    net.params()[net.store().entry(5).offset] = std::numeric_limits<double>::quiet_NaN();
    Optimizer opt;
    EXPECT_THROW(train_step(net, opt, batch, TrainConfig{}), NumericError);
}

TEST(Denoiser, CheckpointRoundTrip) {
    const auto c = small_config(false);
    Fixture f(c, 1);
    TrainableDenoiser net(c, 31);
    net.params() += Vector::Random(net.parameter_count());
    const auto path = temp_path("ckpt.bin");
    net.save(path, R"({"note": 1})");
    const auto back = TrainableDenoiser::load(path);
    EXPECT_EQ(back.params(), net.params());
    EXPECT_FALSE(back.config().decompose);
    const Matrix x = Matrix::Random(c.frames, c.state_width());
    EXPECT_EQ(back.predict_x0({x}, 3, {&f.data.cond[0]})[0], net.predict_x0({x}, 3, {&f.data.cond[0]})[0]);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    EXPECT_THROW(TrainableDenoiser::load(path), FormatError);
    std::filesystem::remove(path);
}
