#pragma once

#include <string>
#include <vector>

#include "mbsync/common.hpp"

namespace mbsync {

/// Real Fourier coefficients per column:
///   x_u = sum_{l=0}^{N-1} a_l cos(2 pi l u / N) + b_l sin(2 pi l u / N)
/// Negative indices l < 0 alias to l + N.
struct SpectralCoeffs {
    Matrix a;  // N x C
    Matrix b;  // N x C
    Eigen::Index frames() const { return a.rows(); }
};

/// How the dc / ac index sets treat the |l| = 3 and |l| = L edges.
enum class BandMode {
    /// dc: |l| <= 2, ac: 3 <= |l| <= L-1. Each band is the real part of a
    /// conjugate-symmetric spectrum.
    Symmetric,
    /// dc: l in [-3, 2], ac: l in [-L, -4] u [3, L-1], exactly as indexed in
    /// the original packing.
    Literal,
};

const char* to_string(BandMode mode);
BandMode band_mode_from_string(const std::string& s);

inline constexpr int kDefaultCutoff = 16;
inline constexpr Eigen::Index kMinFrames = 16;

/// Index sets (in 0..N-1) for one (N, L, mode) triple.
struct BandIndices {
    std::vector<int> dc;
    std::vector<int> ac;         // packing order: positive run, then negative run
    std::vector<int> discarded;  // everything else
};

/// True iff 4 <= L and 4L <= N.
bool cutoff_valid(Eigen::Index frames, int cutoff);
/// Throws ConfigError when the cutoff is out of range for `frames`.
void require_cutoff(Eigen::Index frames, int cutoff);
BandIndices band_indices(Eigen::Index frames, int cutoff, BandMode mode);

/// Number of nonzero leading rows of the packed representation: 4(L-3).
inline Eigen::Index packed_rows(int cutoff) { return 4 * (cutoff - 3); }

SpectralCoeffs analyze(const Matrix& x);
/// Sums the listed frequency indices back into the time domain.
Matrix synthesize(const SpectralCoeffs& c, const std::vector<int>& indices);
/// Full inverse; reproduces the analyzed signal.
Matrix synthesize(const SpectralCoeffs& c);

struct SpectralBands {
    Matrix dc;  // time domain
    Matrix ac;  // time domain
    Matrix F;   // packed ac coefficients, zero below row 4(L-3)
    int cutoff = kDefaultCutoff;
};

SpectralBands split_bands(const SpectralCoeffs& c, int cutoff, BandMode mode = BandMode::Symmetric);
/// Content outside both bands, in the time domain.
Matrix discarded_band(const SpectralCoeffs& c, int cutoff, BandMode mode = BandMode::Symmetric);

/// [a over ac indices, b over ac indices, zeros] as an N x C matrix.
Matrix pack_freq_repr(const SpectralCoeffs& c, int cutoff, Eigen::Index frames,
                      BandMode mode = BandMode::Symmetric);
/// Synthesizes the ac band from a packed representation. Rows past 4(L-3)
/// are ignored.
Matrix unpack_freq_repr(const Matrix& F, int cutoff, Eigen::Index frames,
                        BandMode mode = BandMode::Symmetric);

/// x_dc + x_ac; shapes must match.
Matrix recompose(const Matrix& dc, const Matrix& ac);

/// The whole decomposition as four fixed N x N linear operators, applied
/// column-wise. Built once per (N, L, mode) by pushing impulses through
/// analyze/split/pack, so it agrees with the FFT path by construction.
class BandDecomposer {
public:
    BandDecomposer(Eigen::Index frames, int cutoff, BandMode mode = BandMode::Symmetric);

    Eigen::Index frames() const { return frames_; }
    int cutoff() const { return cutoff_; }
    BandMode mode() const { return mode_; }

    Matrix dc(const Matrix& x) const { return dc_op_ * x; }
    Matrix ac(const Matrix& x) const { return ac_op_ * x; }
    Matrix pack(const Matrix& x) const { return pack_op_ * x; }
    Matrix unpack(const Matrix& F) const { return unpack_op_ * F; }
    /// Adjoint of unpack, for back-propagating a gradient on ac into F.
    Matrix unpack_adjoint(const Matrix& g_ac) const { return unpack_op_.transpose() * g_ac; }

    const Matrix& dc_operator() const { return dc_op_; }
    const Matrix& ac_operator() const { return ac_op_; }
    const Matrix& pack_operator() const { return pack_op_; }
    const Matrix& unpack_operator() const { return unpack_op_; }

private:
    Eigen::Index frames_;
    int cutoff_;
    BandMode mode_;
    Matrix dc_op_, ac_op_, pack_op_, unpack_op_;
};

/// Sum of squares of a time-domain band signal.
double band_energy(const Matrix& x_time);

}  // namespace mbsync
