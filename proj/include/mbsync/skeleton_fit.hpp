#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/quaternion.hpp"

namespace mbsync {

/// One revolute degree of freedom acting on `joint`'s local frame.
struct Dof {
    int joint;
    Vec3 axis;  // unit, in the joint's local frame
    double lower;
    double upper;
};

/// Joint tree rooted at joint 0 with parent[k] < k. The world rotation of a
/// joint is its parent's rotation times the product of its own DoF rotations;
/// its position is the parent's position plus the parent-rotated offset.
class FKChain {
public:
    FKChain() = default;
    /// Throws ConfigError on a malformed tree, non-unit axis or empty limit range.
    FKChain(std::vector<int> parent, std::vector<Vec3> offset, std::vector<Dof> dofs);

    int joints() const { return static_cast<int>(parent_.size()); }
    int dofs() const { return static_cast<int>(dofs_.size()); }
    int parent(int k) const { return parent_[static_cast<std::size_t>(k)]; }
    const Vec3& offset(int k) const { return offset_[static_cast<std::size_t>(k)]; }
    const Dof& dof(int i) const { return dofs_[static_cast<std::size_t>(i)]; }
    const std::vector<Dof>& all_dofs() const { return dofs_; }
    /// DoF indices acting on joint k, in application order.
    const std::vector<int>& joint_dofs(int k) const { return joint_dofs_[static_cast<std::size_t>(k)]; }

    /// Applies shape parameters: beta[0] scales every bone, beta[1] scales
    /// bones at depth >= 2. Other entries are ignored.
    FKChain with_shape(const Vector& beta) const;

    /// Clamps each angle into its DoF's limit range.
    Vector clamp_angles(const Vector& angles) const;

private:
    std::vector<int> parent_;
    std::vector<Vec3> offset_;
    std::vector<Dof> dofs_;
    std::vector<std::vector<int>> joint_dofs_;
};

/// 21 joints: wrist, then MCP, PIP, DIP, tip for thumb, index, middle, ring, pinky.
FKChain make_hand_chain();
/// 22 joints in SMPL body order; wrists are joints 20 and 21.
FKChain make_human_chain();
/// Straight chain of `joints` links along +x, two DoFs per non-leaf joint.
FKChain make_serial_chain(int joints);
/// Hand for 21 joints, human for 22, serial otherwise.
FKChain make_chain_for_joints(int joints);

template <typename S>
Vec3T<S> rotate_unit(const BasicQuaternion<S>& q, const Vec3T<S>& v) {
    const Vec3T<S> u{q.x, q.y, q.z};
    const Vec3T<S> c = u.cross(v);
    return v + S(2) * q.w * c + S(2) * u.cross(c);
}

template <typename S>
BasicQuaternion<S> axis_angle(const Vec3& axis, const S& angle) {
    using std::cos;
    using std::sin;
    const S h = angle / S(2);
    const S s = sin(h);
    return {cos(h), S(axis[0]) * s, S(axis[1]) * s, S(axis[2]) * s};
}

/// Exponential map, with a series expansion near zero so derivatives stay finite.
template <typename S>
BasicQuaternion<S> rotation_vector_quat(const S* rv) {
    using std::cos;
    using std::sin;
    using std::sqrt;
    const S th2 = rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2];
    S w, k;
    if (th2 < S(1e-10)) {
        w = S(1) - th2 / S(8);
        k = S(0.5) - th2 / S(48);
    } else {
        const S th = sqrt(th2);
        w = cos(th / S(2));
        k = sin(th / S(2)) / th;
    }
    return {w, rv[0] * k, rv[1] * k, rv[2] * k};
}

/// Joint positions for one frame, written as 3D values into `out`.
template <typename S>
void fk_frame(const FKChain& chain, const S* angles, const BasicQuaternion<S>& root_q,
              const Vec3T<S>& root_t, S* out) {
    const int D = chain.joints();
    std::vector<BasicQuaternion<S>> rot(static_cast<std::size_t>(D));
    std::vector<Vec3T<S>> pos(static_cast<std::size_t>(D));
    for (int k = 0; k < D; ++k) {
        BasicQuaternion<S> q;
        Vec3T<S> p;
        if (k == 0) {
            q = root_q;
            p = root_t;
        } else {
            const auto par = static_cast<std::size_t>(chain.parent(k));
            q = rot[par];
            p = pos[par] + rotate_unit(rot[par], Vec3T<S>(chain.offset(k).template cast<S>()));
        }
        for (int d : chain.joint_dofs(k)) q = quat_mul(q, axis_angle<S>(chain.dof(d).axis, angles[d]));
        rot[static_cast<std::size_t>(k)] = q;
        pos[static_cast<std::size_t>(k)] = p;
        out[3 * k] = p[0];
        out[3 * k + 1] = p[1];
        out[3 * k + 2] = p[2];
    }
}

/// angles: N x dofs; root_rot: N unit quaternions; root_t: N x 3. Returns N x 3D.
Matrix forward_kinematics(const FKChain& chain, const Matrix& angles,
                          const std::vector<Quaternion>& root_rot, const Matrix& root_t);

/// sum over frames and DoFs of max(theta - u, 0) + max(d - theta, 0)
double angle_hinge_loss(const FKChain& chain, const Matrix& angles);
/// sum over adjacent frames of ||l_t - l_{t+1}||^2
double velocity_loss(const Matrix& root_t);

struct FitConfig {
    double lambda_pos = 1.0;
    double lambda_angle = 0.2;
    double lambda_vel = 0.03;
    int iterations = 5000;
    double step = 0.01;        // first trial step
    double tolerance = 1e-14;  // stop once the gradient norm squared falls below this

    void validate() const;
};

struct FitParams {
    Matrix angles;      // N x dofs
    Matrix root_rotvec; // N x 3
    Matrix root_t;      // N x 3
};

struct FitResult {
    FitParams params;
    double loss_pos = 0.0;
    double loss_angle = 0.0;
    double loss_vel = 0.0;
    double total = 0.0;
    int iterations = 0;
    std::vector<double> history;  // total loss after each accepted step
};

/// Fits FK parameters to target joint positions (N x 3D). Parameters start at
/// zero. With `frozen_angles` (N x dofs) the joint angles are held fixed and
/// only the root pose is optimized. Throws NumericError if the loss turns NaN.
FitResult fit_chain(const Matrix& target, const FKChain& chain, const FitConfig& cfg,
                    const std::optional<Matrix>& frozen_angles = std::nullopt);

/// FK of fitted parameters.
Matrix fitted_positions(const FKChain& chain, const FitParams& p);

}  // namespace mbsync
