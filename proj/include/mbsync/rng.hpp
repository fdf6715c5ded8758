#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "mbsync/common.hpp"

namespace mbsync {

/// One step of splitmix64; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a root seed and a path of
/// counters, e.g. derive_seed(seed, {kStreamSample, sequence_index}).
/// Pure function of its inputs, so parallel workers can be pre-split.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
    }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    /// Three draws in x, y, z order.
    Eigen::Vector3d normal3() {
        Eigen::Vector3d v;
        for (int k = 0; k < 3; ++k) v[k] = normal();
        return v;
    }
    Eigen::Vector3d uniform3(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
        Eigen::Vector3d v;
        for (int k = 0; k < 3; ++k) v[k] = uniform(lo[k], hi[k]);
        return v;
    }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// Stream identifiers for derive_seed.
enum Stream : std::uint64_t {
    kStreamScene = 1,
    kStreamInit = 2,
    kStreamTrain = 3,
    kStreamSample = 4,
    kStreamBps = 5,
    kStreamProbe = 6,
};

}  // namespace mbsync
