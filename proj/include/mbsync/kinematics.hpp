#pragma once

#include <cstddef>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/quaternion.hpp"

namespace mbsync {

// Per-frame relative-motion formulas on raw 7-wide rigid rows (t, q) and
// 3-wide joint rows. The reference body's quaternion is inverted as
// conj/|q|^2, so the formulas stay defined on non-unit quaternions coming out
// of a network. Quaternion outputs are canonicalized to w >= 0.

/// out = [q_a^-1 (t_b - t_a), q_a^-1 q_b]
template <typename S, typename T>
void rel_rigid_row(const T* a, const T* b, S* out) {
    const auto qa = BasicQuaternion<S>::from_ptr(a + 3);
    const auto qb = BasicQuaternion<S>::from_ptr(b + 3);
    const auto qa_inv = quat_inv_unchecked(qa);
    const Vec3T<S> d{S(b[0]) - S(a[0]), S(b[1]) - S(a[1]), S(b[2]) - S(a[2])};
    const Vec3T<S> t = quat_rotate_sandwich(qa_inv, d);
    out[0] = t[0];
    out[1] = t[1];
    out[2] = t[2];
    canonicalize(quat_mul(qa_inv, qb)).to_ptr(out + 3);
}

/// out = [q_a t_rel + t_a, q_a q_rel]
template <typename S, typename T>
void comb_rigid_row(const T* a, const T* rel, S* out) {
    const auto qa = BasicQuaternion<S>::from_ptr(a + 3);
    const auto qr = BasicQuaternion<S>::from_ptr(rel + 3);
    const Vec3T<S> tr{S(rel[0]), S(rel[1]), S(rel[2])};
    const Vec3T<S> t = quat_rotate_sandwich(qa, tr);
    out[0] = t[0] + S(a[0]);
    out[1] = t[1] + S(a[1]);
    out[2] = t[2] + S(a[2]);
    canonicalize(quat_mul(qa, qr)).to_ptr(out + 3);
}

/// out = q_a^-1 (p - t_a)
template <typename S, typename T>
void rel_point_row(const T* a, const T* p, S* out) {
    const auto qa = BasicQuaternion<S>::from_ptr(a + 3);
    const Vec3T<S> d{S(p[0]) - S(a[0]), S(p[1]) - S(a[1]), S(p[2]) - S(a[2])};
    const Vec3T<S> r = quat_rotate_sandwich(quat_inv_unchecked(qa), d);
    out[0] = r[0];
    out[1] = r[1];
    out[2] = r[2];
}

/// out = q_a p_rel + t_a
template <typename S, typename T>
void comb_point_row(const T* a, const T* p_rel, S* out) {
    const auto qa = BasicQuaternion<S>::from_ptr(a + 3);
    const Vec3T<S> pr{S(p_rel[0]), S(p_rel[1]), S(p_rel[2])};
    const Vec3T<S> r = quat_rotate_sandwich(qa, pr);
    out[0] = r[0] + S(a[0]);
    out[1] = r[1] + S(a[1]);
    out[2] = r[2] + S(a[2]);
}

/// Translation + orientation per frame. Orientations are unit within 1e-6.
class RigidTrajectory {
public:
    static constexpr double kUnitTolerance = 1e-6;

    RigidTrajectory() = default;
    /// Throws ShapeError on size mismatch or non-unit orientations.
    RigidTrajectory(Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> translation,
                    std::vector<Quaternion> orientation);

    /// Builds from an N x 7 block, normalizing and canonicalizing quaternions.
    static RigidTrajectory from_block(const Matrix& block);
    /// N x 7 rows of (t, q).
    Matrix to_block() const;

    std::size_t frames() const { return orientation_.size(); }
    const auto& translation() const { return translation_; }
    const std::vector<Quaternion>& orientation() const { return orientation_; }

private:
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> translation_;
    std::vector<Quaternion> orientation_;
};

using RelativeRigidTrajectory = RigidTrajectory;

/// D joint positions per frame, stored as an N x 3D block.
class SkeletonTrajectory {
public:
    SkeletonTrajectory() = default;
    SkeletonTrajectory(Matrix positions, int joints);

    std::size_t frames() const { return static_cast<std::size_t>(positions_.rows()); }
    int joints() const { return joints_; }
    const Matrix& positions() const { return positions_; }
    Vec3 joint(std::size_t frame, int j) const {
        const auto f = static_cast<Eigen::Index>(frame);
        return {positions_(f, 3 * j), positions_(f, 3 * j + 1), positions_(f, 3 * j + 2)};
    }

private:
    Matrix positions_;
    int joints_ = 0;
};

using RelativeSkeletonTrajectory = SkeletonTrajectory;

RelativeRigidTrajectory rel_rigid(const RigidTrajectory& xa, const RigidTrajectory& xb);
RelativeSkeletonTrajectory rel_skeleton(const RigidTrajectory& xo, const SkeletonTrajectory& xh);
RigidTrajectory comb_rigid(const RigidTrajectory& xa, const RelativeRigidTrajectory& xrel);
SkeletonTrajectory comb_skeleton(const RigidTrajectory& xo, const RelativeSkeletonTrajectory& xrel);

// Block-level variants over raw N x 7 / N x 3D matrices (no unit checks).
Matrix rel_rigid_block(const Matrix& a, const Matrix& b);
Matrix comb_rigid_block(const Matrix& a, const Matrix& rel);
Matrix rel_skeleton_block(const Matrix& a, const Matrix& joints);
Matrix comb_skeleton_block(const Matrix& a, const Matrix& rel);

/// Returns a copy of an N x 7 rigid block with each quaternion normalized.
Matrix normalize_rigid_block(const Matrix& block);
/// Canonicalizes every quaternion (w >= 0) in an N x 7 block in place.
void canonicalize_rigid_block(Eigen::Ref<Matrix> block);

}  // namespace mbsync
