// Prints one PASS/FAIL line per acceptance criterion; exit code 0 iff all pass.
//
//   mbsync_acceptance [--only 1,4,7] [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbsync/cli.hpp"
#include "mbsync/container.hpp"
#include "mbsync/denoiser.hpp"
#include "mbsync/freq.hpp"
#include "mbsync/geometry_metrics.hpp"
#include "mbsync/kinematics.hpp"
#include "mbsync/rng.hpp"
#include "mbsync/scenes.hpp"
#include "mbsync/skeleton_fit.hpp"
#include "mbsync/sync.hpp"
#include "oracles.hpp"

using namespace mbsync;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Outcome(const fs::path&)> run;
};

std::string num(double v, int prec = 3) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Quaternion random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    return canonicalize(normalized({n(rng), n(rng), n(rng), n(rng)}));
}

RigidTrajectory random_rigid(std::mt19937_64& rng, int N) {
    std::normal_distribution<double> n;
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> t(N, 3);
    std::vector<Quaternion> q;
    for (int f = 0; f < N; ++f) {
        t.row(f) << n(rng), n(rng), n(rng);
        q.push_back(random_unit(rng));
    }
    return {t, q};
}

SkeletonTrajectory random_skeleton(std::mt19937_64& rng, int N, int D) {
    std::normal_distribution<double> n;
    Matrix p(N, 3 * D);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n(rng);
    return {p, D};
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
    double p = 0.0;
    for (int k = wins; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    return std::min(1.0, p);
}

struct SignTest {
    int wins = 0;
    int n = 0;  // ties dropped
    double p = 1.0;
};

// One-sided test that a[k] > b[k] more often than not.
SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
    SignTest s;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] == b[k]) continue;
        ++s.n;
        if (a[k] > b[k]) ++s.wins;
    }
    s.p = sign_test_p(s.wins, s.n);
    return s;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// 1. comb(a, rel(a, b)) == b
Outcome kinematics_round_trip(const fs::path&) {
    double worst = 0.0;
    for (int seed = 0; seed < 1000; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const auto a = random_rigid(rng, 8), b = random_rigid(rng, 8);
        worst = std::max(worst, max_abs(comb_rigid(a, rel_rigid(a, b)).to_block() - b.to_block()));
        const auto h = random_skeleton(rng, 8, 21);
        worst = std::max(worst, max_abs(comb_skeleton(a, rel_skeleton(a, h)).positions() - h.positions()));
    }
    return {worst < 1e-9, "max abs error " + num(worst)};
}

// 2. dc + ac + discarded == x, idempotence, linearity
Outcome frequency_exactness(const fs::path&) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    auto signal = [&](Eigen::Index N) {
        Matrix x(N, 3);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
        return x;
    };
    double recon = 0.0, idem = 0.0, lin = 0.0;
    for (int s = 0; s < 200; ++s) {
        const Eigen::Index N = std::array<Eigen::Index, 3>{16, 64, 128}[static_cast<std::size_t>(s % 3)];
        const int L = std::uniform_int_distribution<int>(4, static_cast<int>(N / 4))(rng);
        const Matrix x = signal(N), y = signal(N);
        const auto c = analyze(x);
        const auto b = split_bands(c, L);
        recon = std::max(recon, max_abs(b.dc + b.ac + discarded_band(c, L) - x));
        const auto bdc = split_bands(analyze(b.dc), L), bac = split_bands(analyze(b.ac), L);
        idem = std::max({idem, max_abs(bdc.dc - b.dc), max_abs(bdc.ac), max_abs(bac.ac - b.ac), max_abs(bac.dc)});
        const auto by = split_bands(analyze(y), L);
        const auto bxy = split_bands(analyze(2.5 * x - 0.75 * y), L);
        lin = std::max({lin, max_abs(bxy.dc - (2.5 * b.dc - 0.75 * by.dc)), max_abs(bxy.ac - (2.5 * b.ac - 0.75 * by.ac))});
    }
    return {recon < 1e-9 && idem < 1e-9 && lin < 1e-9,
            "reconstruction " + num(recon) + ", idempotence " + num(idem) + ", linearity " + num(lin)};
}

// 3. deterministic sync update == argmin of the fused quadratic
Outcome fusion_equivalence(const fs::path&) {
    Rng rng(11);
    double worst_closed = 0.0, worst_numeric = 0.0, worst_sigma = 0.0;
    int blocks = 0, probes = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int m = 1 + trial % 3, n = 1 + trial % 2;
        const StateLayout layout(m, n, 21);
        const Matrix x = rng.normal_matrix(8, layout.width());
        const Matrix mu = x + 0.1 * rng.normal_matrix(8, layout.width());
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
            worst_closed = std::max(worst_closed, (got - fused.mu).norm() / std::max(1.0, fused.mu.norm()));
            const double expect_sigma = std::sqrt(sigma * sigma / (1.0 + 2.0 * sigma * sigma * lbar));
            worst_sigma = std::max({worst_sigma, std::abs(sync_coefficients(sigma, lbar).sigma - expect_sigma),
                                    std::abs(fused.sigma - expect_sigma)});
            for (int probe = 0; probe < 4; ++probe) {
                const auto r = static_cast<Eigen::Index>(rng.next_u64() % 8);
                const auto c = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(b.width));
                std::vector<double> fs;
                for (const auto& fk : f) fs.push_back(fk(r, c));
                const double ref = oracle::quadratic_argmin(fs, lam);
                worst_numeric = std::max(worst_numeric, std::abs(got(r, c) - ref) / std::max(1.0, std::abs(ref)));
                ++probes;
            }
            ++blocks;
        }
    }
    return {worst_numeric < 1e-6 && worst_closed < 1e-6 && worst_sigma < 1e-12,
            std::to_string(blocks) + " blocks, " + std::to_string(probes) + " numeric probes: rel err " +
                num(worst_numeric) + " (closed form " + num(worst_closed) + "), sigma' err " + num(worst_sigma)};
}

// 4. R = 20 sync steps at T = 1000, s = 50; default config hash matches the manifest
Outcome schedule_conformance(const fs::path&) {
    const auto def = RunConfig::defaults();
    const auto sched = make_schedule(def.get_int("steps"), def.get_double("beta_min"), def.get_double("beta_max"));
    const StateLayout layout(def.get_int("m"), def.get_int("n"), def.get_int("joints"));
    GaussianDenoiser net(Vector::Zero(layout.width()), Matrix::Identity(layout.width(), layout.width()), sched);
    SyncConfig sc;
    sc.interval = def.get_int("sync_interval");
    sc.lambda_exp = def.get_double("lambda_exp");
    SampleRequest req{2, layout.width(), &layout, {}, {9}, 0};
    SampleStats st;
    sample(net, req, sched, sc, &st);

    auto file = RunConfig::defaults();
    file.load_file(MBSYNC_SOURCE_DIR "/configs/default.cfg");
    const auto manifest = nlohmann::json::parse(slurp(MBSYNC_SOURCE_DIR "/configs/default_manifest.json"));
    const std::string documented = manifest.at("config_hash");
    auto replay = RunConfig::defaults();
    for (const auto& [k, v] : manifest.at("config").items()) replay.set(k, v.get<std::string>());

    const bool constants = st.steps == 1000 && def.get_int("sync_interval") == 50 && def.get_int("cutoff") == 16 &&
                           def.get_double("lambda_exp") == 0.3;
    const bool hashes = hex64(def.hash()) == documented && hex64(file.hash()) == documented &&
                        hex64(replay.hash()) == documented;
    return {constants && st.sync_steps == 20 && hashes,
            "T=" + std::to_string(st.steps) + " s=" + def.get("sync_interval") + " R=" + std::to_string(st.sync_steps) +
                " L=" + def.get("cutoff") + " lambda_exp=" + def.get("lambda_exp") + " hash " + hex64(def.hash()) +
                (hashes ? " == " : " != ") + documented};
}

// 5. backprop of the four-term loss vs central differences
Outcome gradient_correctness(const fs::path&) {
    DenoiserConfig c;
    c.m = 2;
    c.n = 1;
    c.joints = 21;
    c.frames = 32;
    c.cutoff = 8;
    c.hidden = 16;
    c.time_dim = 8;
    c.pos_freqs = 2;
    c.steps = 100;
    TrainableDenoiser net(c, 21);
    const GeometryEncoder enc(21, 64);
    std::vector<SceneSpec> specs;
    std::vector<HighOrderState> states;
    for (int i = 0; i < 3; ++i) {
        specs.push_back(random_spec(i % 2 ? SceneFamily::Rub : SceneFamily::Carry, 2, 1, 21, 32 - 4 * i, 100 + i));
        states.push_back(gen_scene(specs.back()).state);
    }
    const auto data = make_training_set(pad_and_mask(specs, states, 32), enc);
    Rng rng(22);
    std::vector<TrainExample> batch;
    for (std::size_t i = 0; i < data.size(); ++i) {
        batch.push_back({&data.x0[i], &data.cond[i], 1 + static_cast<int>(rng.next_u64() % 100),
                         rng.normal_matrix(32, net.layout().width())});
    }
    const LossWeights w;  // all four terms active
    // Probe at a trained operating point rather than at the near-linear initialization.
    TrainConfig tc;
    Optimizer opt;
    for (int step = 0; step < 30; ++step) train_step(net, opt, batch, tc);
    Vector grad;
    training_objective(net, batch, w, &grad);
    std::vector<Eigen::Index> probes;
    for (const auto& e : net.store().entries()) probes.push_back(e.offset + (e.rows * e.cols) / 2);
    // Random entries until at least 110 probes carry a non-negligible gradient.
    auto live_count = [&]() {
        return std::count_if(probes.begin(), probes.end(), [&](Eigen::Index k) { return std::abs(grad[k]) > 1e-6; });
    };
    while (live_count() < 110 && probes.size() < 2000) {
        probes.push_back(static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(net.parameter_count())));
    }
    const double h = 1e-3;
    double worst = 0.0;
    int live = 0;
    for (auto k : probes) {
        if (std::abs(grad[k]) > 1e-6) ++live;
        const double orig = net.params()[k];
        net.params()[k] = orig + h;
        const double lp = training_objective(net, batch, w, nullptr);
        net.params()[k] = orig - h;
        const double lm = training_objective(net, batch, w, nullptr);
        net.params()[k] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double e = std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-7});
        worst = std::max(worst, e);
    }
    return {worst < 1e-4 && live >= 100, std::to_string(probes.size()) + " probes (" + std::to_string(live) +
                                             " with |g| > 1e-6), max rel err " + num(worst)};
}

// 6. plain ancestral sampling recovers a 2-D Gaussian
Outcome distribution_recovery(const fs::path&) {
    const auto sched = make_schedule(1000, 1e-4, 0.01);
    Vector mean(2);
    mean << 1.0, -0.5;
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.3, 0.5;
    GaussianDenoiser net(mean, cov, sched);
    SyncConfig off;
    off.enabled = false;
    const Matrix out = sample(net, SampleRequest{10000, 2, nullptr, {}, {77}, 0}, sched, off)[0];
    const Eigen::RowVectorXd mu = out.colwise().mean();
    const Matrix centred = out.rowwise() - mu;
    const Matrix emp = centred.transpose() * centred / double(out.rows() - 1);
    const double mean_err = (mu.transpose() - mean).cwiseAbs().maxCoeff(), cov_err = (emp - cov).norm();
    return {mean_err < 0.05 && cov_err < 0.1, "mean err " + num(mean_err) + ", covariance Frobenius err " + num(cov_err)};
}

// 7. train, sample with paired seeds, compare ablations
Outcome ablation_direction(const fs::path& work) {
    const auto root = work / "ablation";
    fs::remove_all(root);
    std::ostringstream log;
    auto cfg = [&](const std::string& out) {
        auto c = RunConfig::defaults();
        c.set("out", (root / out).string());
        return c;
    };
    run_command("gen-data", cfg("data"), log);
    const auto dataset = (root / "data" / "dataset.bin").string();
    for (const bool decompose : {true, false}) {
        auto c = cfg(decompose ? "train_dec" : "train_nodec");
        c.set("dataset", dataset);
        c.set("decompose", decompose ? "true" : "false");
        run_command("train", c, log);
    }
    struct Setting {
        const char* out;
        const char* checkpoint;
        bool sync;
    };
    const Setting settings[] = {{"sync_on", "train_dec", true}, {"sync_off", "train_dec", false},
                                {"nodec_sync_on", "train_nodec", true}};
    std::map<std::string, std::vector<HighOrderState>> states;
    std::vector<SceneSpec> specs;
    for (const auto& s : settings) {
        auto c = cfg(s.out);
        c.set("checkpoint", (root / s.checkpoint / "checkpoint.bin").string());
        c.set("sync", s.sync ? "true" : "false");
        run_command("sample", c, log);
        std::vector<SceneSpec> sp;
        load_trajectories((root / s.out / "trajectories.bin").string(), sp, states[s.out]);
        specs = sp;
    }

    std::vector<double> res_on, res_off, ac_dec, ac_nodec;
    const auto& lay = states["sync_on"].front().layout;
    const BandDecomposer dec(lay.rigids() ? states["sync_on"].front().frames() : 0, RunConfig::defaults().get_int("cutoff"));
    const auto rel = lay.rigid_relative(1, 0);
    for (std::size_t k = 0; k < specs.size(); ++k) {
        res_on.push_back(alignment_residual(states["sync_on"][k]));
        res_off.push_back(alignment_residual(states["sync_off"][k]));
        if (specs[k].family != SceneFamily::Rub) continue;
        ac_dec.push_back(band_energy(dec.ac(states["sync_on"][k].block(rel))));
        ac_nodec.push_back(band_energy(dec.ac(states["nodec_sync_on"][k].block(rel))));
    }
    const auto sync_test = sign_test(res_off, res_on);
    const auto band_test = sign_test(ac_dec, ac_nodec);
    const bool sync_ok = mean(res_on) < mean(res_off) && sync_test.p < 0.05;
    const bool band_ok = mean(ac_dec) > mean(ac_nodec) && band_test.p < 0.05;
    return {sync_ok && band_ok,
            "residual sync " + num(mean(res_on), 4) + " vs off " + num(mean(res_off), 4) + " (" +
                std::to_string(sync_test.wins) + "/" + std::to_string(sync_test.n) + " lower, p=" + num(sync_test.p) +
                "); rub ac energy decomposed " + num(mean(ac_dec), 4) + " vs not " + num(mean(ac_nodec), 4) + " (" +
                std::to_string(band_test.wins) + "/" + std::to_string(band_test.n) + " higher, p=" +
                num(band_test.p) + ")"};
}

PosedShape static_shape(const ShapePrimitive& s, int N, const Vec3& t = Vec3::Zero()) {
    Matrix block(N, 7);
    for (int f = 0; f < N; ++f) block.row(f) << t[0], t[1], t[2], 1, 0, 0, 0;
    return {RigidTrajectory::from_block(block), s};
}

// 8. CSIoU(c, c) = 1, half-contact CSR = 0.5, lens volume within 5%
Outcome metric_conformance(const fs::path&) {
    const auto scene = gen_scene(random_spec(SceneFamily::Carry, 2, 1, 21, 64, 5));
    const auto objs = posed_shapes(scene);
    const Matrix hand = skeleton_surface_points(Matrix(scene.state.block(scene.state.layout.skeleton(0))), scene.chains[0]);
    const double self = csiou(objs, {hand}, objs, {hand});

    const int N = 8;
    const auto ball = static_shape(ShapePrimitive::sphere(0.1, 64), N);
    Matrix half(N, 3);
    for (int f = 0; f < N; ++f) half.row(f) << (f < N / 2 ? 0.102 : 0.5), 0.0, 0.0;
    const double half_csr = csr(std::vector<PosedShape>{ball}, {half});

    double worst = 0.0;
    const double r = 0.05;
    const auto a = static_shape(ShapePrimitive::sphere(r, 64), 1);
    for (double d : {0.02, 0.04, 0.06, 0.08}) {
        const auto b = static_shape(ShapePrimitive::sphere(r, 64), 1, Vec3(d, 0.001, -0.002));
        const double exact = oracle::sphere_lens_volume(r, r, d);
        worst = std::max(worst, std::abs(interpenetration(a, b, 0.005).volume_cm3 - exact) / exact);
    }
    return {self == 1.0 && half_csr == 0.5 && worst < 0.05,
            "CSIoU(c,c)=" + num(self) + ", half-contact CSR=" + num(half_csr) + ", lens volume rel err " + num(worst)};
}

// 9. FK fit recovery and the angle hinge
Outcome skeleton_fit(const fs::path&) {
    std::mt19937_64 rng(5);
    double worst_rms = 0.0;
    for (const auto& chain : {make_hand_chain(), make_human_chain()}) {
        const int N = 6;
        Matrix angles(N, chain.dofs());
        for (int f = 0; f < N; ++f) {
            for (int i = 0; i < chain.dofs(); ++i) {
                const double mid = 0.5 * (chain.dof(i).lower + chain.dof(i).upper);
                const double half = 0.25 * (chain.dof(i).upper - chain.dof(i).lower);
                angles(f, i) = std::uniform_real_distribution<double>(mid - half, mid + half)(rng);
            }
        }
        std::vector<Quaternion> rot;
        Matrix t(N, 3);
        for (int f = 0; f < N; ++f) {
            rot.push_back(quat_from_axis_angle(Vec3(0.3, -0.2, 1.0).normalized(), 0.4 + 0.02 * f));
            t.row(f) << 0.1 + 0.01 * f, -0.05, 0.2;
        }
        const Matrix target = forward_kinematics(chain, angles, rot, t);
        const auto fit = fit_chain(target, chain, FitConfig{});
        const Matrix got = fitted_positions(chain, fit.params);
        worst_rms = std::max(worst_rms, std::sqrt((got - target).squaredNorm() / static_cast<double>(N * chain.joints())));
    }

    const FKChain c({-1, 0, 1}, {Vec3::Zero(), Vec3::UnitX(), Vec3::UnitX()},
                    {{1, Vec3::UnitZ(), -0.5, 0.5}, {1, Vec3::UnitY(), 0.0, 1.0}});
    Matrix a(3, 2);
    a << 0.7, -0.25, -0.1, 0.4, -0.9, 1.5;
    // sum over frames and dofs of max(0, lower - a) + max(0, a - upper)
    const double expect = (0.7 - 0.5) + 0.25 + (-0.5 - -0.9) + (1.5 - 1.0);
    const double hinge = angle_hinge_loss(c, a);
    return {worst_rms < 1e-3 && hinge == expect,
            "joint RMS " + num(worst_rms * 1e3) + " mm, hinge " + num(hinge, 17) + " (expected " + num(expect, 17) + ")"};
}

// 10. every command re-run from its manifest is byte-identical
Outcome determinism(const fs::path& work) {
    const auto root = work / "determinism";
    fs::remove_all(root);
    std::ostringstream log;
    auto cfg = [&](const std::string& out) {
        auto c = RunConfig::defaults();
        for (const char* kv : {"frames=32", "min_frames=24", "cutoff=6", "scenes=8", "hidden=16", "time_dim=8",
                               "steps=60", "sync_interval=10", "samples=4", "samples_per_condition=2", "epochs=2",
                               "batch=4", "bench_intervals=10,20", "bench_lambdas=0,0.3", "bench_sequences=2"}) {
            c.set_assignment(kv);
        }
        c.set("out", (root / out).string());
        return c;
    };
    const auto data = (root / "data" / "dataset.bin").string();
    const auto ckpt = (root / "train" / "checkpoint.bin").string();
    const auto traj = (root / "sample" / "trajectories.bin").string();
    std::vector<std::pair<std::string, RunConfig>> runs;
    runs.emplace_back("gen-data", cfg("data"));
    runs.emplace_back("train", cfg("train"));
    runs.back().second.set("dataset", data);
    runs.emplace_back("sample", cfg("sample"));
    runs.back().second.set("checkpoint", ckpt);
    runs.emplace_back("eval", cfg("eval"));
    runs.back().second.set("input", traj);
    runs.emplace_back("decompose", cfg("decompose"));
    runs.back().second.set("input", traj);
    runs.emplace_back("sync-bench", cfg("bench"));
    runs.emplace_back("sync-bench", cfg("bench_trained"));
    runs.back().second.set("checkpoint", ckpt);

    int files = 0, same = 0;
    for (const auto& [command, c] : runs) {
        run_command(command, c, log);
        const fs::path out = c.get("out");
        const fs::path again = out.string() + "_rerun";
        rerun_manifest((out / "manifest.json").string(), again.string(), log);
        const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
        for (const auto& [name, hash] : manifest.at("outputs").items()) {
            ++files;
            if (slurp(out / name) == slurp(again / name)) ++same;
        }
    }
    return {files > 0 && same == files, std::to_string(same) + "/" + std::to_string(files) +
                                            " output files byte-identical over " + std::to_string(runs.size()) + " commands"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mbsync acceptance checks"};
    std::vector<int> only;
    std::string workdir = (fs::temp_directory_path() / "mbsync_acceptance").string();
    app.add_option("--only", only, "criterion ids to run")->delimiter(',');
    app.add_option("--workdir", workdir, "scratch directory");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {1, "kinematics round-trip", 5, kinematics_round_trip},
        {2, "frequency exactness", 10, frequency_exactness},
        {3, "fusion equivalence", 30, fusion_equivalence},
        {4, "schedule conformance", 60, schedule_conformance},
        {5, "gradient correctness", 60, gradient_correctness},
        {6, "distribution recovery", 60, distribution_recovery},
        {7, "end-to-end ablation direction", 1800, ablation_direction},
        {8, "metric conformance", 60, metric_conformance},
        {9, "skeleton fit", 60, skeleton_fit},
        {10, "determinism", 300, determinism},
    };
    fs::create_directories(workdir);
    bool all_pass = true;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(workdir);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs < c.budget_s;
        all_pass = all_pass && pass;
        std::cout << "criterion " << std::setw(2) << c.id << ": " << (pass ? "PASS" : "FAIL") << "  " << c.title << "  ["
                  << o.detail << "; " << std::fixed << std::setprecision(1) << secs << " s of " << c.budget_s
                  << " s]" << std::defaultfloat << std::endl;
    }
    return all_pass ? 0 : 1;
}
