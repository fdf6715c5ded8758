#include "mbsync/state.hpp"

#include <sstream>

namespace mbsync {

std::string Block::name() const {
    std::ostringstream os;
    switch (kind) {
        case BlockKind::Rigid: os << 'o' << body + 1; break;
        case BlockKind::Skeleton: os << 'h' << body + 1; break;
        case BlockKind::RigidRelative: os << 'o' << body + 1 << "->o" << reference + 1; break;
        case BlockKind::SkeletonRelative: os << 'h' << body + 1 << "->o" << reference + 1; break;
    }
    return os.str();
}

Eigen::Index StateLayout::total_width(int m, int n, int joints) {
    const Eigen::Index mm = m, nn = n, d = joints;
    return 7 * mm + 3 * d * nn + 7 * mm * (mm - 1) + 3 * d * mm * nn;
}

StateLayout::StateLayout(int m, int n, int joints) : m_(m), n_(n), joints_(joints) {
    if (m < 1) throw ConfigError("StateLayout: at least one rigid body is required");
    if (n < 0) throw ConfigError("StateLayout: negative skeleton count");
    if (n > 0 && joints < 1) throw ConfigError("StateLayout: skeletons need at least one joint");
    Eigen::Index off = 0;
    auto push = [&](BlockKind k, int body, int ref, Eigen::Index w) {
        blocks_.push_back({k, body, ref, off, w});
        off += w;
    };
    for (int j = 0; j < m; ++j) push(BlockKind::Rigid, j, -1, 7);
    for (int i = 0; i < n; ++i) push(BlockKind::Skeleton, i, -1, 3 * joints);
    rigid_rel_start_ = static_cast<Eigen::Index>(blocks_.size());
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
            if (a != b) push(BlockKind::RigidRelative, a, b, 7);
        }
    }
    skel_rel_start_ = static_cast<Eigen::Index>(blocks_.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) push(BlockKind::SkeletonRelative, i, j, 3 * joints);
    }
    width_ = off;
}

const Block& StateLayout::rigid(int j) const {
    if (j < 0 || j >= m_) throw std::out_of_range("StateLayout::rigid: index out of range");
    return blocks_[static_cast<std::size_t>(j)];
}

const Block& StateLayout::skeleton(int i) const {
    if (i < 0 || i >= n_) throw std::out_of_range("StateLayout::skeleton: index out of range");
    return blocks_[static_cast<std::size_t>(m_ + i)];
}

const Block& StateLayout::rigid_relative(int body, int reference) const {
    if (body < 0 || body >= m_ || reference < 0 || reference >= m_ || body == reference) {
        throw std::out_of_range("StateLayout::rigid_relative: invalid pair");
    }
    const Eigen::Index k = body * (m_ - 1) + (reference < body ? reference : reference - 1);
    return blocks_[static_cast<std::size_t>(rigid_rel_start_ + k)];
}

const Block& StateLayout::skeleton_relative(int skeleton, int reference) const {
    if (skeleton < 0 || skeleton >= n_ || reference < 0 || reference >= m_) {
        throw std::out_of_range("StateLayout::skeleton_relative: invalid pair");
    }
    return blocks_[static_cast<std::size_t>(skel_rel_start_ + skeleton * m_ + reference)];
}

std::optional<Block> StateLayout::find(const std::string& name) const {
    for (const auto& b : blocks_) {
        if (b.name() == name) return b;
    }
    return std::nullopt;
}

HighOrderState assemble_state(const std::vector<RigidTrajectory>& rigids,
                              const std::vector<SkeletonTrajectory>& skeletons) {
    if (rigids.empty()) {
        throw ShapeError("assemble_state: relative blocks need at least one rigid body");
    }
    const std::size_t frames = rigids.front().frames();
    const int joints = skeletons.empty() ? 0 : skeletons.front().joints();
    for (const auto& r : rigids) require_shape(r.frames() == frames, "assemble_state: frame mismatch");
    for (const auto& s : skeletons) {
        require_shape(s.frames() == frames, "assemble_state: frame mismatch");
        require_shape(s.joints() == joints, "assemble_state: skeletons must share joint count");
    }
    HighOrderState x{StateLayout(static_cast<int>(rigids.size()),
                                 static_cast<int>(skeletons.size()), joints),
                     Matrix()};
    x.data.resize(static_cast<Eigen::Index>(frames), x.layout.width());
    for (std::size_t j = 0; j < rigids.size(); ++j) {
        x.block(x.layout.rigid(static_cast<int>(j))) = rigids[j].to_block();
    }
    for (std::size_t i = 0; i < skeletons.size(); ++i) {
        x.block(x.layout.skeleton(static_cast<int>(i))) = skeletons[i].positions();
    }
    rebuild_relative_blocks(x);
    return x;
}

void rebuild_relative_blocks(HighOrderState& x) {
    const auto& L = x.layout;
    for (const auto& b : L.blocks()) {
        if (b.kind == BlockKind::RigidRelative) {
            x.block(b) = rel_rigid_block(x.block(L.rigid(b.reference)), x.block(L.rigid(b.body)));
        } else if (b.kind == BlockKind::SkeletonRelative) {
            x.block(b) =
                rel_skeleton_block(x.block(L.rigid(b.reference)), x.block(L.skeleton(b.body)));
        }
    }
}

StateBlocks disassemble_state(const HighOrderState& x) {
    require_shape(x.data.cols() == x.layout.width(), "disassemble_state: layout/shape mismatch");
    StateBlocks parts{x.layout, {}};
    parts.blocks.reserve(x.layout.blocks().size());
    for (const auto& b : x.layout.blocks()) parts.blocks.emplace_back(x.block(b));
    return parts;
}

HighOrderState compose_state(const StateBlocks& parts) {
    const auto& L = parts.layout;
    require_shape(parts.blocks.size() == L.blocks().size(), "compose_state: block count mismatch");
    const Eigen::Index frames = parts.blocks.empty() ? 0 : parts.blocks.front().rows();
    HighOrderState x{L, Matrix(frames, L.width())};
    for (std::size_t k = 0; k < parts.blocks.size(); ++k) {
        const auto& b = L.blocks()[k];
        require_shape(parts.blocks[k].rows() == frames && parts.blocks[k].cols() == b.width,
                      "compose_state: block shape mismatch for " + b.name());
        x.block(b) = parts.blocks[k];
    }
    return x;
}

RigidTrajectory extract_rigid(const HighOrderState& x, int j) {
    return RigidTrajectory::from_block(x.block(x.layout.rigid(j)));
}

SkeletonTrajectory extract_skeleton(const HighOrderState& x, int i) {
    return {x.block(x.layout.skeleton(i)), x.layout.joints()};
}

}  // namespace mbsync
