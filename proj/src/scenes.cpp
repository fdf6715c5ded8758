#include "mbsync/scenes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "mbsync/container.hpp"
#include "mbsync/freq.hpp"
#include "mbsync/kinematics.hpp"
#include "mbsync/rng.hpp"

namespace mbsync {

using nlohmann::json;

const char* to_string(SceneFamily f) {
    switch (f) {
        case SceneFamily::Carry: return "carry";
        case SceneFamily::Rub: return "rub";
        case SceneFamily::Handoff: return "handoff";
    }
    return "carry";
}

SceneFamily scene_family_from_string(const std::string& s) {
    if (s == "carry") return SceneFamily::Carry;
    if (s == "rub") return SceneFamily::Rub;
    if (s == "handoff") return SceneFamily::Handoff;
    throw ConfigError("unknown scene family: " + s);
}

ShapePrimitive Geometry::primitive(int samples, std::uint64_t seed) const {
    return kind == PrimitiveKind::Sphere ? ShapePrimitive::sphere(size[0], samples, seed)
                                         : ShapePrimitive::box(size, samples, seed);
}

int Geometry::label() const {
    const double extent = kind == PrimitiveKind::Sphere ? size[0] : size.maxCoeff();
    return kActionLabels + 2 * static_cast<int>(kind) + (extent > 0.055 ? 1 : 0);
}

std::vector<int> SceneSpec::object_labels() const {
    std::vector<int> out;
    for (const auto& g : geometry) out.push_back(g.label());
    return out;
}

void SceneSpec::validate(int cutoff) const {
    if (m < 1) throw ConfigError("scene: need at least one rigid body");
    if (n < 0) throw ConfigError("scene: negative skeleton count");
    if (joints < 2) throw ConfigError("scene: skeletons need at least two joints");
    if (frames < 4 * cutoff) throw ConfigError("scene: frames must be at least 4L");
    if (static_cast<int>(geometry.size()) != m) throw ConfigError("scene: need one geometry per rigid");
    if (shape.rows() != n || (n > 0 && shape.cols() != kShapeParams)) {
        throw ConfigError("scene: shape parameters must be n x 10");
    }
    for (const auto& g : geometry) {
        if (!(g.size.minCoeff() > 0.0)) throw ConfigError("scene: geometry sizes must be positive");
    }
    if (family == SceneFamily::Rub && m < 2) throw ConfigError("scene: rub needs two rigid bodies");
    if (family == SceneFamily::Handoff && n < 2) throw ConfigError("scene: handoff needs two skeletons");
    if (rub_frequency != 0 && (rub_frequency < 3 || 2 * rub_frequency >= frames)) {
        throw ConfigError("scene: rub frequency out of range");
    }
}

SceneSpec random_spec(SceneFamily family, int m, int n, int joints, int frames, std::uint64_t seed) {
    SceneSpec s;
    s.family = family;
    s.m = m;
    s.n = n;
    s.joints = joints;
    s.frames = frames;
    s.seed = seed;
    Rng rng(derive_seed(seed, {kStreamScene, 0}));
    for (int j = 0; j < m; ++j) {
        Geometry g;
        if (rng.uniform() < 0.5) {
            g.kind = PrimitiveKind::Sphere;
            g.size = Vec3::Constant(rng.uniform(0.03, 0.08));
        } else {
            g.kind = PrimitiveKind::Box;
            g.size = rng.uniform3(Vec3::Constant(0.02), Vec3::Constant(0.07));
        }
        s.geometry.push_back(g);
    }
    s.shape = rng.normal_matrix(n, kShapeParams);
    return s;
}

int grasp_joint(int joints) {
    if (joints == 21) return 8;  // index fingertip
    if (joints == 22) return 21;  // right wrist
    return joints - 1;
}

namespace {

Vec3 random_unit(Rng& rng) {
    Vec3 d;
    do {
        d = rng.normal3();
    } while (d.norm() < 1e-9);
    return d.normalized();
}

Quaternion random_rotation(Rng& rng, double max_angle) {
    return quat_from_axis_angle(random_unit(rng), rng.uniform(0.0, max_angle));
}

// Smooth periodic 3-vector signal with energy only at frequency indices 1 and 2.
Matrix low_band_path(Rng& rng, int N, const Vec3& centre, double amp) {
    Matrix out(N, 3);
    Eigen::Matrix<double, 2, 6> c;
    for (int i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(-amp, amp) / 2.0;
    for (int u = 0; u < N; ++u) {
        for (int k = 0; k < 3; ++k) {
            double v = centre[k];
            for (int f = 1; f <= 2; ++f) {
                const double th = 2.0 * std::numbers::pi * f * u / N;
                v += c(f - 1, k) * std::cos(th) + c(f - 1, 3 + k) * std::sin(th);
            }
            out(u, k) = v;
        }
    }
    return out;
}

Matrix rigid_row(const Vec3& t, const Quaternion& q) {
    Matrix r(1, 7);
    r << t[0], t[1], t[2], q.w, q.x, q.y, q.z;
    return r;
}

Matrix repeat_rows(const Matrix& row, int N) { return row.replicate(N, 1); }

// Point on the surface along direction d from the origin.
Vec3 surface_point(const Geometry& g, const Vec3& d) {
    if (g.kind == PrimitiveKind::Sphere) return g.size[0] * d;
    double t = 1e300;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) > 1e-12) t = std::min(t, g.size[k] / std::abs(d[k]));
    }
    return t * d;
}

double outer_radius(const Geometry& g) { return g.kind == PrimitiveKind::Sphere ? g.size[0] : g.size.norm(); }

struct Grasp {
    Matrix joints;  // 1 x 3D in the object frame
    Vec3 outward;
};

// Hand pose in the object frame with the grasp joint on the surface and the
// root pointing away from the object.
Grasp make_grasp(const FKChain& chain, const Geometry& g, Rng& rng) {
    Matrix angles(1, chain.dofs());
    for (int i = 0; i < chain.dofs(); ++i) {
        const auto& d = chain.dof(i);
        angles(0, i) = d.lower + (d.upper - d.lower) * rng.uniform(0.2, 0.5);
    }
    const Matrix local = forward_kinematics(chain, angles, {Quaternion::identity()}, Matrix::Zero(1, 3));
    const int tip = grasp_joint(chain.joints());
    const Vec3 tip_local = local.block(0, 3 * tip, 1, 3).transpose();
    Vec3 back = -tip_local;
    if (back.norm() < 1e-9) back = Vec3::UnitX();

    const Vec3 dir = random_unit(rng);
    const Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(back.normalized(), dir);
    const Eigen::Quaterniond twist(Eigen::AngleAxisd(rng.uniform(0.0, 2.0 * std::numbers::pi), dir));
    const Eigen::Matrix3d R = (twist * align).toRotationMatrix();
    const Vec3 t = surface_point(g, dir) - R * tip_local;

    Grasp out;
    out.joints.resize(1, local.cols());
    for (int k = 0; k < chain.joints(); ++k) {
        out.joints.block(0, 3 * k, 1, 3) = (R * local.block(0, 3 * k, 1, 3).transpose() + t).transpose();
    }
    out.outward = dir;
    return out;
}

double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

}  // namespace

std::vector<ShapePrimitive> scene_shapes(const SceneSpec& spec) {
    std::vector<ShapePrimitive> out;
    for (std::size_t j = 0; j < spec.geometry.size(); ++j) {
        out.push_back(spec.geometry[j].primitive(1024, derive_seed(spec.seed, {kStreamScene, 2, j})));
    }
    return out;
}

Scene gen_scene(const SceneSpec& spec) {
    spec.validate(4);
    const int N = spec.frames;
    Rng rng(derive_seed(spec.seed, {kStreamScene, 1}));

    Scene scene;
    scene.spec = spec;
    scene.shapes = scene_shapes(spec);
    const FKChain base = make_chain_for_joints(spec.joints);
    for (int i = 0; i < spec.n; ++i) scene.chains.push_back(base.with_shape(spec.shape.row(i).transpose()));

    // Rigid 1: low-frequency translation and rotation about a base orientation.
    const Vec3 centre = rng.uniform3(Vec3::Constant(-0.2), Vec3::Constant(0.2));
    const Matrix t1 = low_band_path(rng, N, centre, 0.3);
    const Matrix w1 = low_band_path(rng, N, Vec3::Zero(), 0.2);
    const Quaternion q0 = random_rotation(rng, 1.0);
    Matrix o1(N, 7);
    for (int u = 0; u < N; ++u) {
        const Quaternion q = quat_mul(q0, quat_from_rotation_vector(w1.row(u).transpose()));
        o1.row(u) = rigid_row(t1.row(u).transpose(), q);
    }

    std::vector<Matrix> rigid(static_cast<std::size_t>(spec.m));
    rigid[0] = o1;
    const auto& g1 = spec.geometry[0];
    for (int j = 1; j < spec.m; ++j) {
        const auto& gj = spec.geometry[static_cast<std::size_t>(j)];
        const Vec3 d = random_unit(rng);
        const double dist = outer_radius(g1) + outer_radius(gj) + rng.uniform(0.01, 0.03);
        const Quaternion qr = random_rotation(rng, 1.5);
        Matrix rel;
        if (spec.family == SceneFamily::Rub && j == 1) {
            const int k = spec.rub_frequency ? spec.rub_frequency : rng.uniform_int(5, 10);
            const double A = rng.uniform(0.03, 0.06);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const Vec3 e = d.unitOrthogonal();
            rel.resize(N, 7);
            for (int u = 0; u < N; ++u) {
                const Vec3 t = dist * d + A * std::sin(2.0 * std::numbers::pi * k * u / N + phase) * e;
                rel.row(u) = rigid_row(t, qr);
            }
        } else {
            rel = repeat_rows(rigid_row(dist * d, qr), N);
        }
        rigid[static_cast<std::size_t>(j)] = comb_rigid_block(o1, rel);
    }

    std::vector<SkeletonTrajectory> skels;
    for (int i = 0; i < spec.n; ++i) {
        const int host = (spec.family == SceneFamily::Rub && i == 0) ? 1 : 0;
        const Grasp g = make_grasp(scene.chains[static_cast<std::size_t>(i)],
                                   spec.geometry[static_cast<std::size_t>(host)], rng);
        Matrix joints = comb_skeleton_block(rigid[static_cast<std::size_t>(host)], repeat_rows(g.joints, N));
        if (spec.family == SceneFamily::Handoff && i < 2) {
            const Vec3 away = 0.15 * g.outward;
            const int half = N / 2;
            for (int u = 0; u < N; ++u) {
                // Hand 1 departs after the midpoint; hand 2 arrives by it.
                const double w = i == 0 ? (u < half ? 0.0 : smoothstep(double(u - half) / double(N - 1 - half)))
                                        : (u < half ? 1.0 - smoothstep(double(u) / double(half)) : 0.0);
                if (w == 0.0) continue;
                const Quaternion q = Quaternion::from_ptr(rigid[0].row(u).data() + 3);
                const Vec3 shift = quat_rotate(q, away) * w;
                for (int k = 0; k < spec.joints; ++k) joints.block(u, 3 * k, 1, 3) += shift.transpose();
            }
        }
        skels.emplace_back(joints, spec.joints);
    }

    std::vector<RigidTrajectory> rigids;
    for (const auto& r : rigid) rigids.push_back(RigidTrajectory::from_block(r));
    scene.state = assemble_state(rigids, skels);
    return scene;
}

std::vector<Scene> gen_scenes(const std::vector<SceneSpec>& specs, int threads) {
    std::vector<Scene> out(specs.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(specs.size());
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < specs.size();) {
            try {
                out[i] = gen_scene(specs[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(specs.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<PosedShape> posed_shapes(const HighOrderState& x, const std::vector<ShapePrimitive>& shapes) {
    require_shape(static_cast<int>(shapes.size()) == x.layout.rigids(), "posed_shapes: one shape per rigid");
    std::vector<PosedShape> out;
    for (int j = 0; j < x.layout.rigids(); ++j) out.push_back({extract_rigid(x, j), shapes[static_cast<std::size_t>(j)]});
    return out;
}

std::vector<PosedShape> posed_shapes(const Scene& scene) { return posed_shapes(scene.state, scene.shapes); }

Dataset pad_and_mask(const std::vector<SceneSpec>& specs, const std::vector<HighOrderState>& states,
                     Eigen::Index max_frames) {
    require_shape(specs.size() == states.size(), "pad_and_mask: spec/state count mismatch");
    Dataset ds;
    ds.max_frames = max_frames;
    ds.specs = specs;
    for (const auto& x : states) {
        require_shape(x.frames() <= max_frames, "pad_and_mask: sequence longer than max_frames");
        HighOrderState p{x.layout, Matrix::Zero(max_frames, x.layout.width())};
        p.data.topRows(x.frames()) = x.data;
        Vector mask = Vector::Zero(max_frames);
        mask.head(x.frames()).setOnes();
        ds.states.push_back(std::move(p));
        ds.masks.push_back(std::move(mask));
    }
    return ds;
}

HighOrderState unpad(const HighOrderState& x, const Vector& mask) {
    require_shape(mask.size() == x.frames(), "unpad: mask length mismatch");
    const Eigen::Index n = static_cast<Eigen::Index>(mask.sum());
    for (Eigen::Index u = 0; u < mask.size(); ++u) {
        require_shape((mask[u] == 1.0) == (u < n), "unpad: mask is not a prefix of ones");
    }
    return {x.layout, x.data.topRows(n)};
}

namespace {

json spec_to_json(const SceneSpec& s) {
    json g = json::array();
    for (const auto& x : s.geometry) g.push_back({{"kind", to_string(x.kind)}, {"size", {x.size[0], x.size[1], x.size[2]}}});
    json shape = json::array();
    for (Eigen::Index r = 0; r < s.shape.rows(); ++r) {
        shape.push_back(std::vector<double>(s.shape.row(r).data(), s.shape.row(r).data() + s.shape.cols()));
    }
    return {{"family", to_string(s.family)}, {"m", s.m},          {"n", s.n},
            {"joints", s.joints},            {"frames", s.frames}, {"geometry", g},
            {"shape", shape},                {"seed", s.seed},     {"rub_frequency", s.rub_frequency}};
}

SceneSpec spec_from_json(const json& j) {
    SceneSpec s;
    s.family = scene_family_from_string(j.at("family").get<std::string>());
    s.m = j.at("m");
    s.n = j.at("n");
    s.joints = j.at("joints");
    s.frames = j.at("frames");
    for (const auto& g : j.at("geometry")) {
        Geometry x;
        x.kind = primitive_kind_from_string(g.at("kind").get<std::string>());
        x.size = Vec3(g.at("size")[0], g.at("size")[1], g.at("size")[2]);
        s.geometry.push_back(x);
    }
    s.shape.resize(s.n, s.n > 0 ? kShapeParams : 0);
    for (int r = 0; r < s.n; ++r) {
        for (int c = 0; c < kShapeParams; ++c) s.shape(r, c) = j.at("shape")[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    s.seed = j.at("seed").get<std::uint64_t>();
    s.rub_frequency = j.at("rub_frequency");
    return s;
}

void write_states(const char* magic, const std::string& kind, Eigen::Index max_frames,
                  const std::vector<SceneSpec>& specs, const std::vector<HighOrderState>& states,
                  const std::vector<Vector>* masks, const std::string& path) {
    require_shape(specs.size() == states.size(), "save: spec/state count mismatch");
    json entries = json::array();
    Container c;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto& x = states[i];
        entries.push_back({{"spec", spec_to_json(specs[i])},
                           {"layout", {x.layout.rigids(), x.layout.skeletons(), x.layout.joints()}},
                           {"rows", x.data.rows()},
                           {"cols", x.data.cols()}});
        c.payload.insert(c.payload.end(), x.data.data(), x.data.data() + x.data.size());
        if (masks) c.payload.insert(c.payload.end(), (*masks)[i].data(), (*masks)[i].data() + (*masks)[i].size());
    }
    c.header = json{{"kind", kind}, {"max_frames", max_frames}, {"entries", entries}}.dump();
    write_container(path, magic, c);
}

void read_states(const char* magic, const std::string& path, bool with_masks, Eigen::Index& max_frames,
                 std::vector<SceneSpec>& specs, std::vector<HighOrderState>& states, std::vector<Vector>& masks) {
    const Container c = read_container(path, magic);
    json h;
    try {
        h = json::parse(c.header);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed container header: ") + e.what());
    }
    max_frames = h.at("max_frames");
    std::size_t at = 0;
    auto take = [&](Eigen::Index count) {
        if (at + static_cast<std::size_t>(count) > c.payload.size()) throw FormatError("truncated payload: " + path);
        const double* p = c.payload.data() + at;
        at += static_cast<std::size_t>(count);
        return p;
    };
    for (const auto& e : h.at("entries")) {
        specs.push_back(spec_from_json(e.at("spec")));
        const auto& l = e.at("layout");
        HighOrderState x{StateLayout(l[0], l[1], l[2]), Matrix()};
        const Eigen::Index rows = e.at("rows"), cols = e.at("cols");
        if (cols != x.layout.width()) throw FormatError("layout width mismatch in " + path);
        x.data = Eigen::Map<const Matrix>(take(rows * cols), rows, cols);
        states.push_back(std::move(x));
        if (with_masks) masks.push_back(Eigen::Map<const Vector>(take(rows), rows));
    }
    if (at != c.payload.size()) throw FormatError("trailing payload in " + path);
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    require_shape(ds.masks.size() == ds.states.size(), "save_dataset: mask count mismatch");
    write_states(kMagicDataset, "dataset", ds.max_frames, ds.specs, ds.states, &ds.masks, path);
}

Dataset load_dataset(const std::string& path) {
    Dataset ds;
    read_states(kMagicDataset, path, true, ds.max_frames, ds.specs, ds.states, ds.masks);
    return ds;
}

void save_trajectories(const std::vector<SceneSpec>& specs, const std::vector<HighOrderState>& states,
                       const std::string& path) {
    Eigen::Index frames = 0;
    for (const auto& x : states) frames = std::max(frames, x.frames());
    write_states(kMagicTrajectories, "trajectories", frames, specs, states, nullptr, path);
}

void load_trajectories(const std::string& path, std::vector<SceneSpec>& specs, std::vector<HighOrderState>& states) {
    Eigen::Index frames = 0;
    std::vector<Vector> unused;
    specs.clear();
    states.clear();
    read_states(kMagicTrajectories, path, false, frames, specs, states, unused);
}

void export_jsonl(const std::vector<HighOrderState>& states, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t s = 0; s < states.size(); ++s) {
        const auto& x = states[s];
        for (Eigen::Index u = 0; u < x.frames(); ++u) {
            json line{{"seq", s}, {"frame", u}};
            for (const auto& b : x.layout.blocks()) {
                const auto row = x.data.row(u).segment(b.offset, b.width);
                line[b.name()] = std::vector<double>(row.data(), row.data() + row.size());
            }
            os << line.dump() << '\n';
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace mbsync
