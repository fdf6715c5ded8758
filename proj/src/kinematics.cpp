#include "mbsync/kinematics.hpp"

#include <cmath>
#include <string>

namespace mbsync {

RigidTrajectory::RigidTrajectory(
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> translation,
    std::vector<Quaternion> orientation)
    : translation_(std::move(translation)), orientation_(std::move(orientation)) {
    require_shape(static_cast<std::size_t>(translation_.rows()) == orientation_.size(),
                  "RigidTrajectory: translation and orientation frame counts differ");
    for (std::size_t f = 0; f < orientation_.size(); ++f) {
        if (std::abs(orientation_[f].norm() - 1.0) > kUnitTolerance) {
            throw ShapeError("RigidTrajectory: non-unit orientation at frame " +
                             std::to_string(f));
        }
    }
}

RigidTrajectory RigidTrajectory::from_block(const Matrix& block) {
    require_shape(block.cols() == 7, "RigidTrajectory::from_block: expected 7 columns");
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> t = block.leftCols(3);
    std::vector<Quaternion> q;
    q.reserve(static_cast<std::size_t>(block.rows()));
    for (Eigen::Index f = 0; f < block.rows(); ++f) {
        q.push_back(canonicalize(normalized(Quaternion::from_ptr(block.row(f).data() + 3))));
    }
    return {std::move(t), std::move(q)};
}

Matrix RigidTrajectory::to_block() const {
    Matrix out(static_cast<Eigen::Index>(frames()), 7);
    for (Eigen::Index f = 0; f < out.rows(); ++f) {
        out(f, 0) = translation_(f, 0);
        out(f, 1) = translation_(f, 1);
        out(f, 2) = translation_(f, 2);
        orientation_[static_cast<std::size_t>(f)].to_ptr(out.row(f).data() + 3);
    }
    return out;
}

SkeletonTrajectory::SkeletonTrajectory(Matrix positions, int joints)
    : positions_(std::move(positions)), joints_(joints) {
    require_shape(joints_ >= 1, "SkeletonTrajectory: at least one joint required");
    require_shape(positions_.cols() == 3 * joints_,
                  "SkeletonTrajectory: positions must have 3*D columns");
}

Matrix rel_rigid_block(const Matrix& a, const Matrix& b) {
    require_shape(a.rows() == b.rows(), "rel_rigid: frame-count mismatch");
    require_shape(a.cols() == 7 && b.cols() == 7, "rel_rigid: expected 7-wide blocks");
    Matrix out(a.rows(), 7);
    for (Eigen::Index f = 0; f < a.rows(); ++f) {
        rel_rigid_row<double>(a.row(f).data(), b.row(f).data(), out.row(f).data());
    }
    return out;
}

Matrix comb_rigid_block(const Matrix& a, const Matrix& rel) {
    require_shape(a.rows() == rel.rows(), "comb_rigid: frame-count mismatch");
    require_shape(a.cols() == 7 && rel.cols() == 7, "comb_rigid: expected 7-wide blocks");
    Matrix out(a.rows(), 7);
    for (Eigen::Index f = 0; f < a.rows(); ++f) {
        comb_rigid_row<double>(a.row(f).data(), rel.row(f).data(), out.row(f).data());
    }
    return out;
}

Matrix rel_skeleton_block(const Matrix& a, const Matrix& joints) {
    require_shape(a.rows() == joints.rows(), "rel_skeleton: frame-count mismatch");
    require_shape(a.cols() == 7 && joints.cols() % 3 == 0,
                  "rel_skeleton: expected 7-wide reference and 3D-wide joints");
    Matrix out(joints.rows(), joints.cols());
    for (Eigen::Index f = 0; f < a.rows(); ++f) {
        for (Eigen::Index c = 0; c < joints.cols(); c += 3) {
            rel_point_row<double>(a.row(f).data(), joints.row(f).data() + c,
                                  out.row(f).data() + c);
        }
    }
    return out;
}

Matrix comb_skeleton_block(const Matrix& a, const Matrix& rel) {
    require_shape(a.rows() == rel.rows(), "comb_skeleton: frame-count mismatch");
    require_shape(a.cols() == 7 && rel.cols() % 3 == 0,
                  "comb_skeleton: expected 7-wide reference and 3D-wide joints");
    Matrix out(rel.rows(), rel.cols());
    for (Eigen::Index f = 0; f < a.rows(); ++f) {
        for (Eigen::Index c = 0; c < rel.cols(); c += 3) {
            comb_point_row<double>(a.row(f).data(), rel.row(f).data() + c,
                                   out.row(f).data() + c);
        }
    }
    return out;
}

RelativeRigidTrajectory rel_rigid(const RigidTrajectory& xa, const RigidTrajectory& xb) {
    require_shape(xa.frames() == xb.frames(), "rel_rigid: frame-count mismatch");
    return RigidTrajectory::from_block(rel_rigid_block(xa.to_block(), xb.to_block()));
}

RigidTrajectory comb_rigid(const RigidTrajectory& xa, const RelativeRigidTrajectory& xrel) {
    require_shape(xa.frames() == xrel.frames(), "comb_rigid: frame-count mismatch");
    return RigidTrajectory::from_block(comb_rigid_block(xa.to_block(), xrel.to_block()));
}

RelativeSkeletonTrajectory rel_skeleton(const RigidTrajectory& xo, const SkeletonTrajectory& xh) {
    require_shape(xo.frames() == xh.frames(), "rel_skeleton: frame-count mismatch");
    return {rel_skeleton_block(xo.to_block(), xh.positions()), xh.joints()};
}

SkeletonTrajectory comb_skeleton(const RigidTrajectory& xo, const RelativeSkeletonTrajectory& xrel) {
    require_shape(xo.frames() == xrel.frames(), "comb_skeleton: frame-count mismatch");
    return {comb_skeleton_block(xo.to_block(), xrel.positions()), xrel.joints()};
}

Matrix normalize_rigid_block(const Matrix& block) {
    Matrix out = block;
    for (Eigen::Index f = 0; f < out.rows(); ++f) {
        double* q = out.row(f).data() + 3;
        const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (n > 0.0) {
            for (int k = 0; k < 4; ++k) q[k] /= n;
        } else {
            q[0] = 1.0;
        }
    }
    return out;
}

void canonicalize_rigid_block(Eigen::Ref<Matrix> block) {
    for (Eigen::Index f = 0; f < block.rows(); ++f) {
        if (block(f, 3) < 0.0) block.row(f).segment(3, 4) *= -1.0;
    }
}

}  // namespace mbsync
