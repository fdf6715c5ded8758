#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mbsync/common.hpp"
#include "mbsync/kinematics.hpp"

namespace mbsync {

enum class BlockKind { Rigid, Skeleton, RigidRelative, SkeletonRelative };

/// One column range of the high-order state.
///
/// `body` indexes the moving body (rigid j or skeleton i), `reference` the
/// rigid whose frame a relative block is expressed in (-1 for individual
/// blocks). Indices are zero-based; names are one-based, e.g. "h1->o2".
struct Block {
    BlockKind kind;
    int body;
    int reference;
    Eigen::Index offset;
    Eigen::Index width;

    std::string name() const;
    bool is_relative() const {
        return kind == BlockKind::RigidRelative || kind == BlockKind::SkeletonRelative;
    }
};

/// Column layout: rigid individuals, skeleton individuals, ordered rigid pairs
/// (body, reference) lexicographic with body != reference, then skeleton-rigid
/// pairs with skeletons outer and rigids inner.
class StateLayout {
public:
    StateLayout() = default;
    StateLayout(int m, int n, int joints);

    int rigids() const { return m_; }
    int skeletons() const { return n_; }
    int joints() const { return joints_; }
    Eigen::Index width() const { return width_; }
    const std::vector<Block>& blocks() const { return blocks_; }

    const Block& rigid(int j) const;
    const Block& skeleton(int i) const;
    /// Block holding rigid `body` relative to rigid `reference`.
    const Block& rigid_relative(int body, int reference) const;
    const Block& skeleton_relative(int skeleton, int reference) const;
    std::optional<Block> find(const std::string& name) const;

    bool operator==(const StateLayout& o) const {
        return m_ == o.m_ && n_ == o.n_ && joints_ == o.joints_;
    }

    /// 7m + 3Dn + 7m(m-1) + 3Dmn
    static Eigen::Index total_width(int m, int n, int joints);

private:
    int m_ = 0;
    int n_ = 0;
    int joints_ = 0;
    Eigen::Index width_ = 0;
    std::vector<Block> blocks_;
    Eigen::Index rigid_rel_start_ = 0;
    Eigen::Index skel_rel_start_ = 0;
};

struct HighOrderState {
    StateLayout layout;
    Matrix data;  // N x D_sum

    Eigen::Index frames() const { return data.rows(); }
    auto block(const Block& b) { return data.middleCols(b.offset, b.width); }
    auto block(const Block& b) const { return data.middleCols(b.offset, b.width); }
};

/// Raw per-block matrices in layout order.
struct StateBlocks {
    StateLayout layout;
    std::vector<Matrix> blocks;
};

/// Builds the full state, deriving every relative block with rel().
/// Throws on an empty rigid list or mismatched frame counts.
HighOrderState assemble_state(const std::vector<RigidTrajectory>& rigids,
                              const std::vector<SkeletonTrajectory>& skeletons);

StateBlocks disassemble_state(const HighOrderState& x);
HighOrderState compose_state(const StateBlocks& parts);

/// Typed view of rigid j; quaternions normalized and canonicalized.
RigidTrajectory extract_rigid(const HighOrderState& x, int j);
SkeletonTrajectory extract_skeleton(const HighOrderState& x, int i);

/// Rewrites every relative block as rel() of the current individual blocks.
void rebuild_relative_blocks(HighOrderState& x);

}  // namespace mbsync
