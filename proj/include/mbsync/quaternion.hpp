#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>

namespace mbsync {

template <typename S>
using Vec3T = Eigen::Matrix<S, 3, 1>;
using Vec3 = Vec3T<double>;

/// Scalar-first (w, x, y, z) quaternion. Hamilton product, active rotation.
///
/// Templated on the scalar so the same formulas serve plain doubles and
/// forward-mode autodiff scalars in the alignment loss.
template <typename S>
struct BasicQuaternion {
    S w{1}, x{0}, y{0}, z{0};

    BasicQuaternion() = default;
    BasicQuaternion(S w_, S x_, S y_, S z_) : w(w_), x(x_), y(y_), z(z_) {}

    static BasicQuaternion identity() { return {S(1), S(0), S(0), S(0)}; }

    /// Reads four consecutive values laid out as w, x, y, z.
    template <typename T>
    static BasicQuaternion from_ptr(const T* p) {
        return {S(p[0]), S(p[1]), S(p[2]), S(p[3])};
    }

    template <typename T>
    void to_ptr(T* p) const {
        p[0] = w;
        p[1] = x;
        p[2] = y;
        p[3] = z;
    }

    S norm2() const { return w * w + x * x + y * y + z * z; }
    S norm() const {
        using std::sqrt;
        return sqrt(norm2());
    }
    BasicQuaternion conjugate() const { return {w, -x, -y, -z}; }
    BasicQuaternion operator-() const { return {-w, -x, -y, -z}; }
};

using Quaternion = BasicQuaternion<double>;

template <typename S>
BasicQuaternion<S> quat_mul(const BasicQuaternion<S>& a, const BasicQuaternion<S>& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

/// conj(q) / |q|^2. No zero check; see quat_inv for the checked double version.
template <typename S>
BasicQuaternion<S> quat_inv_unchecked(const BasicQuaternion<S>& q) {
    const S n2 = q.norm2();
    return {q.w / n2, -q.x / n2, -q.y / n2, -q.z / n2};
}

inline Quaternion quat_inv(const Quaternion& q) {
    if (!(q.norm2() > 0.0)) {
        throw std::invalid_argument("quat_inv: zero-norm quaternion");
    }
    return quat_inv_unchecked(q);
}

/// q v q^-1. Valid for any non-zero q; the scale of q cancels.
template <typename S>
Vec3T<S> quat_rotate_sandwich(const BasicQuaternion<S>& q, const Vec3T<S>& v) {
    const BasicQuaternion<S> pv{S(0), v[0], v[1], v[2]};
    const auto r = quat_mul(quat_mul(q, pv), quat_inv_unchecked(q));
    return {r.x, r.y, r.z};
}

/// Rotation by a unit quaternion. Throws when |q| deviates from 1 by more
/// than `tol`.
Vec3 quat_rotate(const Quaternion& q, const Vec3& v, double tol = 1e-6);

/// Flips the sign so that w >= 0; q and -q encode the same rotation.
template <typename S>
BasicQuaternion<S> canonicalize(const BasicQuaternion<S>& q) {
    if (q.w < S(0)) return -q;
    return q;
}

inline Quaternion normalized(const Quaternion& q) {
    const double n = q.norm();
    if (!(n > 0.0)) throw std::invalid_argument("normalized: zero-norm quaternion");
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quaternion quat_from_axis_angle(const Vec3& axis, double angle);

/// Exponential map of a rotation vector (axis * angle).
Quaternion quat_from_rotation_vector(const Vec3& rv);

Eigen::Matrix3d quat_to_matrix(const Quaternion& q);

}  // namespace mbsync
