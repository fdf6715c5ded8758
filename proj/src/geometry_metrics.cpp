#include "mbsync/geometry_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mbsync/rng.hpp"

namespace mbsync {

const char* to_string(PrimitiveKind k) { return k == PrimitiveKind::Sphere ? "sphere" : "box"; }

PrimitiveKind primitive_kind_from_string(const std::string& s) {
    if (s == "sphere") return PrimitiveKind::Sphere;
    if (s == "box") return PrimitiveKind::Box;
    throw ConfigError("unknown primitive kind: " + s);
}

ShapePrimitive ShapePrimitive::sphere(double radius, int samples, std::uint64_t seed) {
    if (!(radius > 0.0)) throw ConfigError("sphere: radius must be > 0");
    if (samples < 1) throw ConfigError("sphere: need at least one surface sample");
    ShapePrimitive s;
    s.kind = PrimitiveKind::Sphere;
    s.size = Vec3::Constant(radius);
    s.surface.resize(samples, 3);
    Rng rng(seed);
    for (int i = 0; i < samples; ++i) {
        Vec3 d = rng.normal3();
        while (d.norm() < 1e-12) d = rng.normal3();
        s.surface.row(i) = (radius * d.normalized()).transpose();
    }
    return s;
}

ShapePrimitive ShapePrimitive::box(const Vec3& h, int samples, std::uint64_t seed) {
    if (!(h.minCoeff() > 0.0)) throw ConfigError("box: half-extents must be > 0");
    if (samples < 1) throw ConfigError("box: need at least one surface sample");
    ShapePrimitive s;
    s.kind = PrimitiveKind::Box;
    s.size = h;
    s.surface.resize(samples, 3);
    const double area[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};
    const double total = area[0] + area[1] + area[2];
    Rng rng(seed);
    for (int i = 0; i < samples; ++i) {
        const double pick = rng.uniform(0.0, total);
        const int axis = pick < area[0] ? 0 : (pick < area[0] + area[1] ? 1 : 2);
        Vec3 p = rng.uniform3(-h, h);
        p[axis] = rng.uniform() < 0.5 ? -h[axis] : h[axis];
        s.surface.row(i) = p.transpose();
    }
    return s;
}

double ShapePrimitive::sdf(const Vec3& p) const {
    if (kind == PrimitiveKind::Sphere) return p.norm() - size[0];
    const Vec3 q = p.cwiseAbs() - size;
    return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double ShapePrimitive::bounding_radius() const {
    return kind == PrimitiveKind::Sphere ? size[0] : size.norm();
}

double ShapePrimitive::volume() const {
    if (kind == PrimitiveKind::Sphere) return 4.0 / 3.0 * std::numbers::pi * std::pow(size[0], 3);
    return 8.0 * size.prod();
}

BasisPointSet BasisPointSet::make(std::uint64_t seed, int count, double radius) {
    if (count < 1 || !(radius > 0.0)) throw ConfigError("BasisPointSet: need count >= 1 and radius > 0");
    BasisPointSet b;
    b.seed = seed;
    b.points.resize(count, 3);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        Vec3 p;
        do {
            p = rng.uniform3(Vec3::Constant(-1), Vec3::Constant(1));
        } while (p.squaredNorm() > 1.0);
        b.points.row(i) = (radius * p).transpose();
    }
    return b;
}

Matrix bps_encode(const Matrix& surface, const BasisPointSet& bps) {
    require_shape(surface.rows() > 0 && surface.cols() == 3, "bps_encode: empty or malformed surface sample");
    Matrix out(bps.points.rows(), 3);
    for (Eigen::Index i = 0; i < bps.points.rows(); ++i) {
        Eigen::Index best = 0;
        (surface.rowwise() - bps.points.row(i)).rowwise().squaredNorm().minCoeff(&best);
        out.row(i) = surface.row(best) - bps.points.row(i);
    }
    return out;
}

double distance_to_shape(const PosedShape& obj, std::size_t frame, const Vec3& p) {
    const auto& t = obj.motion.translation();
    const auto fi = static_cast<Eigen::Index>(frame);
    const Vec3 d(p[0] - t(fi, 0), p[1] - t(fi, 1), p[2] - t(fi, 2));
    const Vec3 local = quat_rotate(obj.motion.orientation()[frame].conjugate(), d);
    return std::max(obj.shape.sdf(local), 0.0);
}

Matrix skeleton_surface_points(const Matrix& joints, const FKChain& chain, double radius, int per_bone) {
    require_shape(joints.cols() == 3 * chain.joints(), "skeleton_surface_points: width != 3D");
    const int rings = std::max(1, per_bone / 8);
    const int bones = chain.joints() - 1;
    const Eigen::Index P = static_cast<Eigen::Index>(bones) * rings * 8 + chain.joints();
    Matrix out(joints.rows(), 3 * P);
    for (Eigen::Index f = 0; f < joints.rows(); ++f) {
        Eigen::Index c = 0;
        auto put = [&](const Vec3& v) {
            out(f, 3 * c) = v[0];
            out(f, 3 * c + 1) = v[1];
            out(f, 3 * c + 2) = v[2];
            ++c;
        };
        auto joint = [&](int k) { return Vec3(joints(f, 3 * k), joints(f, 3 * k + 1), joints(f, 3 * k + 2)); };
        for (int k = 1; k < chain.joints(); ++k) {
            const Vec3 a = joint(chain.parent(k)), b = joint(k);
            Vec3 axis = b - a;
            if (axis.norm() < 1e-12) axis = Vec3::UnitX();
            axis.normalize();
            const Vec3 u = axis.unitOrthogonal(), v = axis.cross(u);
            for (int r = 0; r < rings; ++r) {
                const Vec3 centre = a + (b - a) * ((r + 0.5) / rings);
                for (int s = 0; s < 8; ++s) {
                    const double ang = 2.0 * std::numbers::pi * s / 8.0;
                    put(centre + radius * (std::cos(ang) * u + std::sin(ang) * v));
                }
            }
        }
        // One cap point per joint, pointing away from the parent.
        for (int k = 0; k < chain.joints(); ++k) {
            Vec3 dir = k == 0 ? Vec3(-1, 0, 0) : Vec3(joint(k) - joint(chain.parent(k)));
            if (dir.norm() < 1e-12) dir = Vec3::UnitX();
            put(joint(k) + radius * dir.normalized());
        }
    }
    return out;
}

ContactMask contact_surface(const PosedShape& obj, const Matrix& hand_points) {
    const auto N = obj.motion.frames();
    require_shape(static_cast<std::size_t>(hand_points.rows()) == N, "contact_surface: frame mismatch");
    require_shape(hand_points.cols() % 3 == 0, "contact_surface: point width not a multiple of 3");
    ContactMask c(N, 0);
    for (std::size_t f = 0; f < N; ++f) {
        const auto fi = static_cast<Eigen::Index>(f);
        for (Eigen::Index k = 0; k < hand_points.cols(); k += 3) {
            const Vec3 p(hand_points(fi, k), hand_points(fi, k + 1), hand_points(fi, k + 2));
            if (distance_to_shape(obj, f, p) <= kSurfaceContactDistance) {
                c[f] = 1;
                break;
            }
        }
    }
    return c;
}

ContactMask contact_root(const PosedShape& obj, const Matrix& roots) {
    const auto N = obj.motion.frames();
    require_shape(static_cast<std::size_t>(roots.rows()) == N && roots.cols() == 6,
                  "contact_root: roots must be N x 6");
    ContactMask c(N, 0);
    for (std::size_t f = 0; f < N; ++f) {
        const auto fi = static_cast<Eigen::Index>(f);
        const double d1 = distance_to_shape(obj, f, Vec3(roots(fi, 0), roots(fi, 1), roots(fi, 2)));
        const double d2 = distance_to_shape(obj, f, Vec3(roots(fi, 3), roots(fi, 4), roots(fi, 5)));
        c[f] = std::max(d1, d2) <= kRootContactDistance ? 1 : 0;
    }
    return c;
}

ContactMask mask_or(const ContactMask& a, const ContactMask& b) {
    require_shape(a.size() == b.size(), "mask_or: length mismatch");
    ContactMask c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = (a[i] || b[i]) ? 1 : 0;
    return c;
}

double mask_ratio(const ContactMask& c) {
    require_shape(!c.empty(), "mask_ratio: empty mask");
    std::size_t on = 0;
    for (auto v : c) on += v ? 1 : 0;
    return static_cast<double>(on) / static_cast<double>(c.size());
}

double mask_iou(const ContactMask& a, const ContactMask& b) {
    require_shape(a.size() == b.size(), "mask_iou: length mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

template <typename ContactFn>
std::vector<ContactMask> masks_per_body(const std::vector<PosedShape>& objs, const std::vector<Matrix>& bodies,
                                        ContactFn fn) {
    if (objs.empty()) throw ConfigError("contact metrics need at least one object");
    std::vector<ContactMask> out;
    for (const auto& h : bodies) {
        ContactMask c(objs.front().motion.frames(), 0);
        for (const auto& o : objs) c = mask_or(c, fn(o, h));
        out.push_back(std::move(c));
    }
    return out;
}

double mean_ratio(const std::vector<ContactMask>& masks) {
    if (masks.empty()) throw ConfigError("contact metrics need at least one hand or human");
    double s = 0.0;
    for (const auto& c : masks) s += mask_ratio(c);
    return s / static_cast<double>(masks.size());
}

}  // namespace

double csr(const std::vector<PosedShape>& objs, const std::vector<Matrix>& hand_points) {
    return mean_ratio(masks_per_body(objs, hand_points, contact_surface));
}

double crr(const std::vector<PosedShape>& objs, const std::vector<Matrix>& roots) {
    return mean_ratio(masks_per_body(objs, roots, contact_root));
}

double csiou(const std::vector<ContactMask>& pred, const std::vector<ContactMask>& gt) {
    if (pred.empty() || pred.size() != gt.size()) throw ConfigError("csiou: need matching non-empty mask lists");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += mask_iou(pred[i], gt[i]);
    return s / static_cast<double>(pred.size());
}

double csiou(const std::vector<PosedShape>& objs, const std::vector<Matrix>& hand_points,
             const std::vector<PosedShape>& gt_objs, const std::vector<Matrix>& gt_hand_points) {
    return csiou(masks_per_body(objs, hand_points, contact_surface),
                 masks_per_body(gt_objs, gt_hand_points, contact_surface));
}

Interpenetration interpenetration_frame(const PosedShape& a, const PosedShape& b, std::size_t frame,
                                        double voxel) {
    if (!(voxel > 0.0)) throw ConfigError("interpenetration: voxel must be > 0");
    const auto fi = static_cast<Eigen::Index>(frame);
    const Vec3 ca = a.motion.translation().row(fi).transpose();
    const Vec3 cb = b.motion.translation().row(fi).transpose();
    const double ra = a.shape.bounding_radius(), rb = b.shape.bounding_radius();
    const Vec3 lo = (ca.array() - ra).max(cb.array() - rb);
    const Vec3 hi = (ca.array() + ra).min(cb.array() + rb);
    if ((lo.array() > hi.array()).any()) return {};

    const Eigen::Matrix3d RaT = quat_to_matrix(a.motion.orientation()[frame]).transpose();
    const Eigen::Matrix3d RbT = quat_to_matrix(b.motion.orientation()[frame]).transpose();
    long long i0[3], i1[3];
    for (int k = 0; k < 3; ++k) {
        i0[k] = static_cast<long long>(std::floor(lo[k] / voxel));
        i1[k] = static_cast<long long>(std::ceil(hi[k] / voxel));
    }
    long long count = 0;
    double depth = 0.0;
    for (long long ix = i0[0]; ix < i1[0]; ++ix) {
        for (long long iy = i0[1]; iy < i1[1]; ++iy) {
            Vec3 p((static_cast<double>(ix) + 0.5) * voxel, (static_cast<double>(iy) + 0.5) * voxel,
                   (static_cast<double>(i0[2]) + 0.5) * voxel);
            Vec3 la = RaT * (p - ca), lb = RbT * (p - cb);
            const Vec3 step_a = RaT.col(2) * voxel, step_b = RbT.col(2) * voxel;
            for (long long iz = i0[2]; iz < i1[2]; ++iz, la += step_a, lb += step_b) {
                const double da = a.shape.sdf(la);
                if (da > 0.0) continue;
                const double db = b.shape.sdf(lb);
                if (db > 0.0) continue;
                ++count;
                depth = std::max(depth, std::min(-da, -db));
            }
        }
    }
    return {static_cast<double>(count) * voxel * voxel * voxel * 1e6, depth * 1e3};
}

Interpenetration interpenetration(const PosedShape& a, const PosedShape& b, double voxel) {
    require_shape(a.motion.frames() == b.motion.frames(), "interpenetration: frame mismatch");
    if (a.motion.frames() == 0) return {};
    Interpenetration out;
    for (std::size_t f = 0; f < a.motion.frames(); ++f) {
        const auto r = interpenetration_frame(a, b, f, voxel);
        out.volume_cm3 += r.volume_cm3;
        out.depth_mm = std::max(out.depth_mm, r.depth_mm);
    }
    out.volume_cm3 /= static_cast<double>(a.motion.frames());
    return out;
}

double mean_pairwise_distance(const std::vector<Matrix>& samples) {
    if (samples.size() < 2) throw ConfigError("diversity: need at least two samples");
    const auto& first = samples.front();
    require_shape(first.cols() > 0 && first.cols() % 3 == 0, "diversity: tracks must be N x 3k");
    for (const auto& s : samples) {
        require_shape(s.rows() == first.rows() && s.cols() == first.cols(), "diversity: shape mismatch");
    }
    const Eigen::Index points = first.cols() / 3;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            double d = 0.0;
            for (Eigen::Index f = 0; f < first.rows(); ++f) {
                for (Eigen::Index k = 0; k < points; ++k) {
                    d += (samples[i].row(f).segment(3 * k, 3) - samples[j].row(f).segment(3 * k, 3)).norm();
                }
            }
            total += d / static_cast<double>(first.rows() * points);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

Diversity diversity(const std::vector<std::vector<Matrix>>& groups) {
    if (groups.empty()) throw ConfigError("diversity: no sample groups");
    Diversity d;
    std::vector<Matrix> all;
    for (const auto& g : groups) {
        d.sd += mean_pairwise_distance(g);
        all.insert(all.end(), g.begin(), g.end());
    }
    d.sd /= static_cast<double>(groups.size());
    d.od = mean_pairwise_distance(all);
    return d;
}

double alignment_residual(const Matrix& data, const StateLayout& layout, const Vector& mask) {
    require_shape(data.cols() == layout.width(), "alignment_residual: layout/shape mismatch");
    require_shape(mask.size() == 0 || mask.size() == data.rows(), "alignment_residual: mask length mismatch");
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& b : layout.blocks()) {
        if (!b.is_relative()) continue;
        const Eigen::Index ref = layout.rigid(b.reference).offset;
        for (Eigen::Index f = 0; f < data.rows(); ++f) {
            if (mask.size() && mask[f] == 0.0) continue;
            const double* row = data.row(f).data();
            double sq = 0.0;
            if (b.kind == BlockKind::RigidRelative) {
                double r[7];
                rel_rigid_row<double>(row + ref, row + layout.rigid(b.body).offset, r);
                for (int k = 0; k < 7; ++k) sq += (row[b.offset + k] - r[k]) * (row[b.offset + k] - r[k]);
            } else {
                const double* body = row + layout.skeleton(b.body).offset;
                for (Eigen::Index c = 0; c < b.width; c += 3) {
                    double r[3];
                    rel_point_row<double>(row + ref, body + c, r);
                    for (int k = 0; k < 3; ++k) sq += (row[b.offset + c + k] - r[k]) * (row[b.offset + c + k] - r[k]);
                }
            }
            total += std::sqrt(sq);
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace mbsync
