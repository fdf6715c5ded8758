#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/geometry_metrics.hpp"
#include "mbsync/skeleton_fit.hpp"
#include "mbsync/state.hpp"

namespace mbsync {

enum class SceneFamily { Carry = 0, Rub = 1, Handoff = 2 };

const char* to_string(SceneFamily f);
/// Throws ConfigError on an unknown name.
SceneFamily scene_family_from_string(const std::string& s);

/// Label ids: actions occupy 0..2 (the family index), object categories follow.
inline constexpr int kActionLabels = 3;
inline constexpr int kLabelVocabulary = kActionLabels + 4;
inline constexpr int kShapeParams = 10;

struct Geometry {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 size{0.05, 0.05, 0.05};

    ShapePrimitive primitive(int samples = 2048, std::uint64_t seed = 0) const;
    /// Category label: sphere/box crossed with small/large.
    int label() const;
};

struct SceneSpec {
    SceneFamily family = SceneFamily::Carry;
    int m = 2;
    int n = 1;
    int joints = 21;
    int frames = 64;
    std::vector<Geometry> geometry;  // one per rigid
    Matrix shape;                    // n x 10
    std::uint64_t seed = 0;
    int rub_frequency = 0;           // 0 draws from [5, 10]

    int action() const { return static_cast<int>(family); }
    std::vector<int> object_labels() const;
    /// Throws ConfigError on bad counts, N < 4L, missing geometry, or a
    /// family the body counts cannot support (rub needs m >= 2, handoff n >= 2).
    void validate(int cutoff = 16) const;
};

/// Random geometry and shape parameters for a spec with the given counts.
SceneSpec random_spec(SceneFamily family, int m, int n, int joints, int frames, std::uint64_t seed);

struct Scene {
    SceneSpec spec;
    HighOrderState state;
    std::vector<ShapePrimitive> shapes;
    std::vector<FKChain> chains;  // one per skeleton, shaped by its row of spec.shape
};

Scene gen_scene(const SceneSpec& spec);

/// The sampled primitives gen_scene uses for each rigid of `spec`.
std::vector<ShapePrimitive> scene_shapes(const SceneSpec& spec);

/// Generates every spec, spreading work over `threads` workers.
std::vector<Scene> gen_scenes(const std::vector<SceneSpec>& specs, int threads = 1);

/// The joint placed on the object surface when grasping.
int grasp_joint(int joints);

std::vector<PosedShape> posed_shapes(const Scene& scene);
std::vector<PosedShape> posed_shapes(const HighOrderState& x, const std::vector<ShapePrimitive>& shapes);

struct Dataset {
    Eigen::Index max_frames = 0;
    std::vector<SceneSpec> specs;
    std::vector<HighOrderState> states;  // padded to max_frames
    std::vector<Vector> masks;           // 1 on real frames

    std::size_t size() const { return states.size(); }
};

/// Throws ShapeError when a state is longer than max_frames or specs and
/// states differ in count.
Dataset pad_and_mask(const std::vector<SceneSpec>& specs, const std::vector<HighOrderState>& states,
                     Eigen::Index max_frames);
HighOrderState unpad(const HighOrderState& x, const Vector& mask);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Stores sampled states and the specs that conditioned them.
void save_trajectories(const std::vector<SceneSpec>& specs, const std::vector<HighOrderState>& states,
                       const std::string& path);
/// Replaces the contents of specs and states.
void load_trajectories(const std::string& path, std::vector<SceneSpec>& specs,
                       std::vector<HighOrderState>& states);

/// One JSON object per frame: {"seq", "frame", "<block name>": [...], ...}.
void export_jsonl(const std::vector<HighOrderState>& states, const std::string& path);

}  // namespace mbsync
