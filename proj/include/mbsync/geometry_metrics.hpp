#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/kinematics.hpp"
#include "mbsync/skeleton_fit.hpp"
#include "mbsync/state.hpp"

namespace mbsync {

enum class PrimitiveKind { Sphere, Box };

const char* to_string(PrimitiveKind k);
PrimitiveKind primitive_kind_from_string(const std::string& s);

/// Sphere (radius) or box (half-extents) centered at its body origin, in meters.
struct ShapePrimitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 size{0.05, 0.05, 0.05};  // radius in size[0] for spheres
    Matrix surface;               // P x 3 surface samples in the body frame

    /// Throws ConfigError on non-positive dimensions or a zero sample count.
    static ShapePrimitive sphere(double radius, int samples = 2048, std::uint64_t seed = 0);
    static ShapePrimitive box(const Vec3& half_extents, int samples = 2048, std::uint64_t seed = 0);

    /// Signed distance in the body frame; negative inside.
    double sdf(const Vec3& p) const;
    /// Half-width of an axis-aligned box bounding the shape under any rotation.
    double bounding_radius() const;
    double volume() const;
};

inline constexpr int kBpsPoints = 1024;
inline constexpr double kBpsRadius = 1.0;

/// Fixed random points drawn uniformly from a ball of radius 1 m.
struct BasisPointSet {
    Matrix points;  // count x 3
    std::uint64_t seed = 0;

    static BasisPointSet make(std::uint64_t seed, int count = kBpsPoints, double radius = kBpsRadius);
};

/// For each basis point, the vector to its nearest surface sample (brute force).
/// Throws ShapeError on an empty surface sample.
Matrix bps_encode(const Matrix& surface, const BasisPointSet& bps);
inline Matrix bps_encode(const ShapePrimitive& shape, const BasisPointSet& bps) {
    return bps_encode(shape.surface, bps);
}

/// One bit per frame.
using ContactMask = std::vector<std::uint8_t>;

inline constexpr double kSurfaceContactDistance = 0.005;
inline constexpr double kRootContactDistance = 0.03;

/// A rigid body's motion together with its geometry.
struct PosedShape {
    RigidTrajectory motion;
    ShapePrimitive shape;
};

/// Distance from a world point to the solid shape at one frame (0 inside).
double distance_to_shape(const PosedShape& obj, std::size_t frame, const Vec3& p);

/// Surface samples of capsules around every bone of a skeleton pose, as an
/// N x 3P matrix. `joints` is N x 3D.
Matrix skeleton_surface_points(const Matrix& joints, const FKChain& chain, double radius = 0.008,
                               int per_bone = 24);

/// Bit t set iff some hand point lies within 5 mm of the object at frame t.
/// `hand_points` is N x 3P.
ContactMask contact_surface(const PosedShape& obj, const Matrix& hand_points);
/// Bit t set iff both roots lie within 3 cm of the object. `roots` is N x 6.
ContactMask contact_root(const PosedShape& obj, const Matrix& roots);

ContactMask mask_or(const ContactMask& a, const ContactMask& b);
/// Fraction of set frames. Throws ShapeError on an empty mask.
double mask_ratio(const ContactMask& c);
/// |a and b| / |a or b|; two empty-contact masks score 1.
double mask_iou(const ContactMask& a, const ContactMask& b);

/// Mean over hands of the fraction of frames in contact with any object.
double csr(const std::vector<PosedShape>& objs, const std::vector<Matrix>& hand_points);
/// Mean over humans of the fraction of frames with both hand roots near any object.
double crr(const std::vector<PosedShape>& objs, const std::vector<Matrix>& roots);
/// Mean over hands of the IoU between predicted and ground-truth contact masks.
double csiou(const std::vector<PosedShape>& objs, const std::vector<Matrix>& hand_points,
             const std::vector<PosedShape>& gt_objs, const std::vector<Matrix>& gt_hand_points);
/// Mean over hands of IoU of precomputed masks.
double csiou(const std::vector<ContactMask>& pred, const std::vector<ContactMask>& gt);

struct Interpenetration {
    double volume_cm3 = 0.0;
    double depth_mm = 0.0;
};

/// Overlap of two posed shapes at one frame on a world-aligned voxel grid.
/// Throws ConfigError when voxel <= 0.
Interpenetration interpenetration_frame(const PosedShape& a, const PosedShape& b, std::size_t frame,
                                        double voxel = 0.005);
/// Mean volume over frames and maximum depth over frames.
Interpenetration interpenetration(const PosedShape& a, const PosedShape& b, double voxel = 0.005);

struct Diversity {
    double sd = 0.0;  // within-condition
    double od = 0.0;  // over all trajectories
};

/// Mean over sample pairs of the mean pointwise distance. Trajectories are
/// N x 3k point tracks. Throws ConfigError with fewer than two samples.
double mean_pairwise_distance(const std::vector<Matrix>& samples);
/// `groups[c]` holds the samples drawn for condition c.
Diversity diversity(const std::vector<std::vector<Matrix>>& groups);

/// Mean over relative blocks and frames of ||block row - rel(individuals) row||.
double alignment_residual(const Matrix& data, const StateLayout& layout, const Vector& mask = {});
inline double alignment_residual(const HighOrderState& x) { return alignment_residual(x.data, x.layout); }

}  // namespace mbsync
