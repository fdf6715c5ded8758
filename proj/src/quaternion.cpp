#include "mbsync/quaternion.hpp"

namespace mbsync {

Vec3 quat_rotate(const Quaternion& q, const Vec3& v, double tol) {
    if (std::abs(q.norm() - 1.0) > tol) {
        throw std::invalid_argument("quat_rotate: quaternion is not unit-norm");
    }
    // v' = v + 2w (u x v) + 2 u x (u x v) for unit q = (w, u)
    const Vec3 u{q.x, q.y, q.z};
    const Vec3 c = u.cross(v);
    return v + 2.0 * q.w * c + 2.0 * u.cross(c);
}

Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (!(n > 0.0)) throw std::invalid_argument("quat_from_axis_angle: zero axis");
    const double s = std::sin(0.5 * angle) / n;
    return {std::cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s};
}

Quaternion quat_from_rotation_vector(const Vec3& rv) {
    const double angle = rv.norm();
    if (angle < 1e-12) {
        return normalized(Quaternion{1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]});
    }
    return quat_from_axis_angle(rv, angle);
}

Eigen::Matrix3d quat_to_matrix(const Quaternion& q) {
    const Quaternion u = normalized(q);
    const double w = u.w, x = u.x, y = u.y, z = u.z;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

}  // namespace mbsync
