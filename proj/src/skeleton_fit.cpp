#include "mbsync/skeleton_fit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <unsupported/Eigen/AutoDiff>

namespace mbsync {

namespace {

constexpr int kMaxFitParams = 64;
using AdVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxFitParams, 1>;
using AdFit = Eigen::AutoDiffScalar<AdVec>;

Vec3 unit(double x, double y, double z) { return Vec3(x, y, z).normalized(); }

int depth_of(const FKChain& c, int k) {
    int d = 0;
    while (c.parent(k) >= 0) {
        k = c.parent(k);
        ++d;
    }
    return d;
}

}  // namespace

FKChain::FKChain(std::vector<int> parent, std::vector<Vec3> offset, std::vector<Dof> dofs)
    : parent_(std::move(parent)), offset_(std::move(offset)), dofs_(std::move(dofs)) {
    if (parent_.empty()) throw ConfigError("FKChain: no joints");
    if (offset_.size() != parent_.size()) throw ConfigError("FKChain: offset count != joint count");
    if (parent_[0] != -1) throw ConfigError("FKChain: joint 0 must be the root");
    for (std::size_t k = 1; k < parent_.size(); ++k) {
        if (parent_[k] < 0 || parent_[k] >= static_cast<int>(k)) {
            throw ConfigError("FKChain: parent index must precede child");
        }
    }
    joint_dofs_.assign(parent_.size(), {});
    for (std::size_t i = 0; i < dofs_.size(); ++i) {
        const auto& d = dofs_[i];
        if (d.joint < 0 || d.joint >= joints()) throw ConfigError("FKChain: DoF joint out of range");
        if (std::abs(d.axis.norm() - 1.0) > 1e-9) throw ConfigError("FKChain: DoF axis not unit");
        if (!(d.lower <= d.upper)) throw ConfigError("FKChain: empty DoF limit range");
        joint_dofs_[static_cast<std::size_t>(d.joint)].push_back(static_cast<int>(i));
    }
}

FKChain FKChain::with_shape(const Vector& beta) const {
    const double global = beta.size() > 0 ? std::clamp(1.0 + 0.05 * beta[0], 0.7, 1.3) : 1.0;
    const double distal = beta.size() > 1 ? std::clamp(1.0 + 0.03 * beta[1], 0.8, 1.2) : 1.0;
    auto offsets = offset_;
    for (int k = 1; k < joints(); ++k) {
        offsets[static_cast<std::size_t>(k)] *= global * (depth_of(*this, k) >= 2 ? distal : 1.0);
    }
    return {parent_, offsets, dofs_};
}

Vector FKChain::clamp_angles(const Vector& angles) const {
    require_shape(angles.size() == dofs(), "clamp_angles: wrong DoF count");
    Vector out = angles;
    for (int i = 0; i < dofs(); ++i) out[i] = std::clamp(out[i], dof(i).lower, dof(i).upper);
    return out;
}

FKChain make_hand_chain() {
    std::vector<int> parent{-1};
    std::vector<Vec3> offset{Vec3::Zero()};
    std::vector<Dof> dofs;
    struct Finger {
        Vec3 base;
        Vec3 dir;
        double len[3];
    };
    // x along the fingers, y toward the thumb, z out of the palm.
    const Finger fingers[5] = {
        {{0.030, 0.030, -0.010}, unit(0.6, 0.8, 0.0), {0.040, 0.032, 0.028}},
        {{0.090, 0.025, 0.0}, unit(1, 0, 0), {0.045, 0.025, 0.020}},
        {{0.095, 0.005, 0.0}, unit(1, 0, 0), {0.048, 0.028, 0.022}},
        {{0.090, -0.015, 0.0}, unit(1, 0, 0), {0.044, 0.026, 0.020}},
        {{0.080, -0.033, 0.0}, unit(1, 0, 0), {0.036, 0.020, 0.018}},
    };
    for (const auto& f : fingers) {
        // Flexion bends toward -z: rotation about dir x z.
        const Vec3 flex = f.dir.cross(Vec3::UnitZ()).normalized();
        const int mcp = static_cast<int>(parent.size());
        parent.push_back(0);
        offset.push_back(f.base);
        dofs.push_back({mcp, flex, -0.3, 1.5});
        dofs.push_back({mcp, Vec3::UnitZ(), -0.35, 0.35});
        for (int s = 0; s < 3; ++s) {
            const int k = static_cast<int>(parent.size());
            parent.push_back(k - 1);
            offset.push_back(f.dir * f.len[s]);
            if (s < 2) dofs.push_back({k, flex, 0.0, s == 0 ? 1.7 : 1.3});
        }
    }
    return {parent, offset, dofs};
}

FKChain make_human_chain() {
    const std::vector<int> parent{-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
    const std::vector<Vec3> offset{
        {0, 0, 0},          {0.06, 0, -0.09},   {-0.06, 0, -0.09},  {0, 0, 0.11},
        {0.0, 0, -0.38},    {0.0, 0, -0.38},    {0, 0, 0.14},       {0, 0, -0.40},
        {0, 0, -0.40},      {0, 0, 0.05},       {0, 0.12, -0.05},   {0, 0.12, -0.05},
        {0, 0, 0.21},       {0.08, 0, 0.12},    {-0.08, 0, 0.12},   {0, 0, 0.09},
        {0.10, 0, 0.03},    {-0.10, 0, 0.03},   {0.26, 0, 0},       {-0.26, 0, 0},
        {0.25, 0, 0},       {-0.25, 0, 0},
    };
    std::vector<Dof> dofs;
    auto ball = [&](int k, double lim) {
        dofs.push_back({k, Vec3::UnitX(), -lim, lim});
        dofs.push_back({k, Vec3::UnitY(), -lim, lim});
        dofs.push_back({k, Vec3::UnitZ(), -lim, lim});
    };
    ball(1, 1.2);
    ball(2, 1.2);
    ball(3, 0.5);
    dofs.push_back({4, Vec3::UnitX(), 0.0, 2.3});
    dofs.push_back({5, Vec3::UnitX(), 0.0, 2.3});
    ball(6, 0.4);
    dofs.push_back({7, Vec3::UnitX(), -0.6, 0.6});
    dofs.push_back({7, Vec3::UnitY(), -0.3, 0.3});
    dofs.push_back({8, Vec3::UnitX(), -0.6, 0.6});
    dofs.push_back({8, Vec3::UnitY(), -0.3, 0.3});
    ball(9, 0.4);
    dofs.push_back({12, Vec3::UnitX(), -0.6, 0.6});
    dofs.push_back({12, Vec3::UnitY(), -0.6, 0.6});
    dofs.push_back({13, Vec3::UnitY(), -0.3, 0.3});
    dofs.push_back({13, Vec3::UnitZ(), -0.3, 0.3});
    dofs.push_back({14, Vec3::UnitY(), -0.3, 0.3});
    dofs.push_back({14, Vec3::UnitZ(), -0.3, 0.3});
    ball(16, 1.5);
    ball(17, 1.5);
    dofs.push_back({18, Vec3::UnitZ(), 0.0, 2.5});
    dofs.push_back({19, Vec3::UnitZ(), -2.5, 0.0});
    return {parent, offset, dofs};
}

FKChain make_serial_chain(int joints) {
    if (joints < 1) throw ConfigError("make_serial_chain: need at least one joint");
    std::vector<int> parent{-1};
    std::vector<Vec3> offset{Vec3::Zero()};
    std::vector<Dof> dofs;
    for (int k = 1; k < joints; ++k) {
        parent.push_back(k - 1);
        offset.emplace_back(0.05, 0.0, 0.0);
    }
    for (int k = 1; k + 1 < joints; ++k) {
        dofs.push_back({k, Vec3::UnitY(), -1.0, 1.0});
        dofs.push_back({k, Vec3::UnitZ(), -1.0, 1.0});
    }
    return {parent, offset, dofs};
}

FKChain make_chain_for_joints(int joints) {
    if (joints == 21) return make_hand_chain();
    if (joints == 22) return make_human_chain();
    return make_serial_chain(joints);
}

Matrix forward_kinematics(const FKChain& chain, const Matrix& angles,
                          const std::vector<Quaternion>& root_rot, const Matrix& root_t) {
    const Eigen::Index N = angles.rows();
    require_shape(angles.cols() == chain.dofs(), "forward_kinematics: angle width != DoF count");
    require_shape(static_cast<Eigen::Index>(root_rot.size()) == N && root_t.rows() == N &&
                      root_t.cols() == 3,
                  "forward_kinematics: root pose frame mismatch");
    Matrix out(N, 3 * chain.joints());
    for (Eigen::Index f = 0; f < N; ++f) {
        const Vec3 t = root_t.row(f).transpose();
        fk_frame<double>(chain, angles.row(f).data(), root_rot[static_cast<std::size_t>(f)], t,
                         out.row(f).data());
    }
    return out;
}

double angle_hinge_loss(const FKChain& chain, const Matrix& angles) {
    require_shape(angles.cols() == chain.dofs(), "angle_hinge_loss: angle width != DoF count");
    double s = 0.0;
    for (Eigen::Index f = 0; f < angles.rows(); ++f) {
        for (int i = 0; i < chain.dofs(); ++i) {
            const double th = angles(f, i);
            s += std::max(th - chain.dof(i).upper, 0.0) + std::max(chain.dof(i).lower - th, 0.0);
        }
    }
    return s;
}

double velocity_loss(const Matrix& root_t) {
    double s = 0.0;
    for (Eigen::Index f = 0; f + 1 < root_t.rows(); ++f) s += (root_t.row(f) - root_t.row(f + 1)).squaredNorm();
    return s;
}

void FitConfig::validate() const {
    for (double v : {lambda_pos, lambda_angle, lambda_vel}) {
        if (!std::isfinite(v) || v < 0.0) throw ConfigError("FitConfig: weights must be finite and >= 0");
    }
    if (iterations < 0) throw ConfigError("FitConfig: iterations must be >= 0");
    if (!(step > 0.0)) throw ConfigError("FitConfig: step must be > 0");
}

Matrix fitted_positions(const FKChain& chain, const FitParams& p) {
    std::vector<Quaternion> rot(static_cast<std::size_t>(p.root_rotvec.rows()));
    for (Eigen::Index f = 0; f < p.root_rotvec.rows(); ++f) {
        rot[static_cast<std::size_t>(f)] = rotation_vector_quat<double>(p.root_rotvec.row(f).data());
    }
    return forward_kinematics(chain, p.angles, rot, p.root_t);
}

namespace {

struct Problem {
    const Matrix& target;
    const FKChain& chain;
    const FitConfig& cfg;
    const Matrix* frozen;
    Eigen::Index frames;
    int dof;
    int per_frame;  // optimized parameters per frame

    // Layout of the flat vector per frame: [angles (unless frozen) | rotvec | t].
    FitParams unpack(const Vector& x) const {
        FitParams p{Matrix(frames, dof), Matrix(frames, 3), Matrix(frames, 3)};
        for (Eigen::Index f = 0; f < frames; ++f) {
            const double* v = x.data() + f * per_frame;
            int o = 0;
            if (frozen) {
                p.angles.row(f) = frozen->row(f);
            } else {
                for (int i = 0; i < dof; ++i) p.angles(f, i) = v[o++];
            }
            for (int i = 0; i < 3; ++i) p.root_rotvec(f, i) = v[o++];
            for (int i = 0; i < 3; ++i) p.root_t(f, i) = v[o++];
        }
        return p;
    }

    double loss(const Vector& x, FitResult* parts) const {
        const FitParams p = unpack(x);
        const double lp = (fitted_positions(chain, p) - target).squaredNorm();
        const double la = frozen ? 0.0 : angle_hinge_loss(chain, p.angles);
        const double lv = velocity_loss(p.root_t);
        if (parts) {
            parts->loss_pos = lp;
            parts->loss_angle = la;
            parts->loss_vel = lv;
        }
        return cfg.lambda_pos * lp + cfg.lambda_angle * la + cfg.lambda_vel * lv;
    }

    Vector gradient(const Vector& x) const {
        Vector g = Vector::Zero(x.size());
        const int D = chain.joints();
        std::vector<AdFit> angles(static_cast<std::size_t>(dof));
        std::vector<AdFit> out(static_cast<std::size_t>(3 * D));
        for (Eigen::Index f = 0; f < frames; ++f) {
            const double* v = x.data() + f * per_frame;
            double* gf = g.data() + f * per_frame;
            int o = 0;
            for (int i = 0; i < dof; ++i) {
                if (frozen) {
                    angles[static_cast<std::size_t>(i)] = AdFit((*frozen)(f, i), AdVec::Zero(per_frame));
                } else {
                    angles[static_cast<std::size_t>(i)] = AdFit(v[o], per_frame, o);
                    ++o;
                }
            }
            AdFit rv[3];
            for (auto& r : rv) {
                r = AdFit(v[o], per_frame, o);
                ++o;
            }
            Vec3T<AdFit> t;
            for (int i = 0; i < 3; ++i) {
                t[i] = AdFit(v[o], per_frame, o);
                ++o;
            }
            fk_frame<AdFit>(chain, angles.data(), rotation_vector_quat<AdFit>(rv), t, out.data());
            AdVec acc = AdVec::Zero(per_frame);
            for (int c = 0; c < 3 * D; ++c) {
                const double r = out[static_cast<std::size_t>(c)].value() - target(f, c);
                acc += (2.0 * cfg.lambda_pos * r) * out[static_cast<std::size_t>(c)].derivatives();
            }
            for (int k = 0; k < per_frame; ++k) gf[k] += acc[k];
            if (!frozen) {
                for (int i = 0; i < dof; ++i) {
                    const double th = v[i];
                    if (th > chain.dof(i).upper) gf[i] += cfg.lambda_angle;
                    if (th < chain.dof(i).lower) gf[i] -= cfg.lambda_angle;
                }
            }
            if (f + 1 < frames) {
                const double* vn = x.data() + (f + 1) * per_frame;
                double* gn = g.data() + (f + 1) * per_frame;
                for (int i = 0; i < 3; ++i) {
                    const int k = per_frame - 3 + i;
                    const double d = 2.0 * cfg.lambda_vel * (v[k] - vn[k]);
                    gf[k] += d;
                    gn[k] -= d;
                }
            }
        }
        return g;
    }
};

}  // namespace

FitResult fit_chain(const Matrix& target, const FKChain& chain, const FitConfig& cfg,
                    const std::optional<Matrix>& frozen_angles) {
    cfg.validate();
    require_shape(target.cols() == 3 * chain.joints(), "fit_chain: target width != 3D");
    const Eigen::Index N = target.rows();
    if (frozen_angles) {
        require_shape(frozen_angles->rows() == N && frozen_angles->cols() == chain.dofs(),
                      "fit_chain: frozen angle shape mismatch");
    }
    const int per_frame = (frozen_angles ? 0 : chain.dofs()) + 6;
    if (per_frame > kMaxFitParams) throw ConfigError("fit_chain: too many DoFs per frame");
    const Problem prob{target, chain, cfg, frozen_angles ? &*frozen_angles : nullptr,
                       N, chain.dofs(), per_frame};

    FitResult res;
    Vector x = Vector::Zero(N * per_frame);
    double fx = prob.loss(x, nullptr);
    Vector g = prob.gradient(x);
    double step = cfg.step;
    Vector x_prev, g_prev;
    for (int it = 0; it < cfg.iterations; ++it) {
        const double gg = g.squaredNorm();
        if (gg < cfg.tolerance) break;
        if (it > 0) {
            const Vector s = x - x_prev;
            const Vector y = g - g_prev;
            const double sy = s.dot(y);
            step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e3) : cfg.step;
        }
        // Armijo backtracking; only accepted steps move x, so the loss never increases.
        double a = step;
        Vector x_new;
        double f_new = fx;
        bool accepted = false;
        for (int k = 0; k < 60; ++k) {
            x_new = x - a * g;
            f_new = prob.loss(x_new, nullptr);
            if (!std::isfinite(f_new)) throw NumericError("fit_chain: loss is not finite");
            if (f_new <= fx - 1e-4 * a * gg) {
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if (!accepted) break;
        x_prev = x;
        g_prev = g;
        x = x_new;
        fx = f_new;
        g = prob.gradient(x);
        res.history.push_back(fx);
        res.iterations = it + 1;
    }
    res.params = prob.unpack(x);
    res.total = prob.loss(x, &res);
    return res;
}

}  // namespace mbsync
