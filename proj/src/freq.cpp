#include "mbsync/freq.hpp"

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>

#include <fftw3.h>

namespace mbsync {

namespace {

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

Matrix basis_matrix(Eigen::Index frames, const std::vector<int>& indices, bool sine) {
    Matrix B(frames, static_cast<Eigen::Index>(indices.size()));
    const double w = 2.0 * std::numbers::pi / static_cast<double>(frames);
    for (Eigen::Index u = 0; u < frames; ++u) {
        for (std::size_t k = 0; k < indices.size(); ++k) {
            // Reduce the phase index modulo N before scaling for accuracy.
            const auto phase = static_cast<double>((u * indices[k]) % frames) * w;
            B(u, static_cast<Eigen::Index>(k)) = sine ? std::sin(phase) : std::cos(phase);
        }
    }
    return B;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
    return out;
}

}  // namespace

const char* to_string(BandMode mode) {
    return mode == BandMode::Symmetric ? "symmetric" : "literal";
}

BandMode band_mode_from_string(const std::string& s) {
    if (s == "symmetric") return BandMode::Symmetric;
    if (s == "literal") return BandMode::Literal;
    throw ConfigError("unknown band mode '" + s + "' (expected symmetric|literal)");
}

bool cutoff_valid(Eigen::Index frames, int cutoff) {
    return cutoff >= 4 && 4 * static_cast<Eigen::Index>(cutoff) <= frames;
}

void require_cutoff(Eigen::Index frames, int cutoff) {
    if (!cutoff_valid(frames, cutoff)) {
        throw ConfigError("cutoff L=" + std::to_string(cutoff) + " invalid for N=" +
                          std::to_string(frames) + " (need 4 <= L and 4L <= N)");
    }
}

BandIndices band_indices(Eigen::Index frames, int cutoff, BandMode mode) {
    require_cutoff(frames, cutoff);
    const int N = static_cast<int>(frames);
    const int L = cutoff;
    BandIndices idx;
    std::vector<char> used(static_cast<std::size_t>(N), 0);
    auto take = [&](std::vector<int>& dst, int l) {
        const int k = ((l % N) + N) % N;
        dst.push_back(k);
        used[static_cast<std::size_t>(k)] = 1;
    };
    if (mode == BandMode::Symmetric) {
        for (int l = -2; l <= 2; ++l) take(idx.dc, l);
        for (int l = 3; l <= L - 1; ++l) take(idx.ac, l);
        for (int l = -(L - 1); l <= -3; ++l) take(idx.ac, l);
    } else {
        for (int l = -3; l <= 2; ++l) take(idx.dc, l);
        for (int l = 3; l <= L - 1; ++l) take(idx.ac, l);
        for (int l = -L; l <= -4; ++l) take(idx.ac, l);
    }
    for (int k = 0; k < N; ++k) {
        if (!used[static_cast<std::size_t>(k)]) idx.discarded.push_back(k);
    }
    return idx;
}

SpectralCoeffs analyze(const Matrix& x) {
    const Eigen::Index N = x.rows();
    if (N < kMinFrames) {
        throw ShapeError("analyze: N=" + std::to_string(N) + " admits no valid cutoff (need N >= 16)");
    }
    const Eigen::Index C = x.cols();
    const Eigen::Index half = N / 2 + 1;
    SpectralCoeffs c{Matrix(N, C), Matrix(N, C)};
    if (C == 0) return c;

    // Column-major copy so each column is contiguous for a batched r2c plan.
    Eigen::MatrixXd in = x;
    std::vector<std::complex<double>> out(static_cast<std::size_t>(half * C));
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        int n = static_cast<int>(N);
        plan = fftw_plan_many_dft_r2c(1, &n, static_cast<int>(C), in.data(), nullptr, 1,
                                      static_cast<int>(N),
                                      reinterpret_cast<fftw_complex*>(out.data()), nullptr, 1,
                                      static_cast<int>(half), FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan);
    }

    const double inv_n = 1.0 / static_cast<double>(N);
    for (Eigen::Index col = 0; col < C; ++col) {
        for (Eigen::Index l = 0; l < N; ++l) {
            std::complex<double> X;
            if (l < half) {
                X = out[static_cast<std::size_t>(col * half + l)];
            } else {
                X = std::conj(out[static_cast<std::size_t>(col * half + (N - l))]);
            }
            c.a(l, col) = X.real() * inv_n;
            c.b(l, col) = -X.imag() * inv_n;
        }
    }
    return c;
}

Matrix synthesize(const SpectralCoeffs& c, const std::vector<int>& indices) {
    require_shape(c.a.rows() == c.b.rows() && c.a.cols() == c.b.cols(),
                  "synthesize: a/b shape mismatch");
    const Eigen::Index N = c.frames();
    if (indices.empty()) return Matrix::Zero(N, c.a.cols());
    return basis_matrix(N, indices, false) * gather_rows(c.a, indices) +
           basis_matrix(N, indices, true) * gather_rows(c.b, indices);
}

Matrix synthesize(const SpectralCoeffs& c) {
    std::vector<int> all(static_cast<std::size_t>(c.frames()));
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
    return synthesize(c, all);
}

SpectralBands split_bands(const SpectralCoeffs& c, int cutoff, BandMode mode) {
    const auto idx = band_indices(c.frames(), cutoff, mode);
    return {synthesize(c, idx.dc), synthesize(c, idx.ac),
            pack_freq_repr(c, cutoff, c.frames(), mode), cutoff};
}

Matrix discarded_band(const SpectralCoeffs& c, int cutoff, BandMode mode) {
    return synthesize(c, band_indices(c.frames(), cutoff, mode).discarded);
}

Matrix pack_freq_repr(const SpectralCoeffs& c, int cutoff, Eigen::Index frames, BandMode mode) {
    require_shape(c.frames() == frames, "pack_freq_repr: frame-count mismatch");
    const auto idx = band_indices(frames, cutoff, mode);
    const auto k = static_cast<Eigen::Index>(idx.ac.size());
    if (2 * k > frames) throw ShapeError("pack_freq_repr: packing does not fit in N rows");
    Matrix F = Matrix::Zero(frames, c.a.cols());
    F.topRows(k) = gather_rows(c.a, idx.ac);
    F.middleRows(k, k) = gather_rows(c.b, idx.ac);
    return F;
}

Matrix unpack_freq_repr(const Matrix& F, int cutoff, Eigen::Index frames, BandMode mode) {
    require_shape(F.rows() == frames, "unpack_freq_repr: frame-count mismatch");
    const auto idx = band_indices(frames, cutoff, mode);
    const auto k = static_cast<Eigen::Index>(idx.ac.size());
    return basis_matrix(frames, idx.ac, false) * F.topRows(k) +
           basis_matrix(frames, idx.ac, true) * F.middleRows(k, k);
}

Matrix recompose(const Matrix& dc, const Matrix& ac) {
    require_shape(dc.rows() == ac.rows() && dc.cols() == ac.cols(), "recompose: shape mismatch");
    return dc + ac;
}

BandDecomposer::BandDecomposer(Eigen::Index frames, int cutoff, BandMode mode)
    : frames_(frames), cutoff_(cutoff), mode_(mode) {
    require_cutoff(frames, cutoff);
    // Columns of the identity are unit impulses; pushing them through the
    // spectral path yields each operator's columns.
    const Matrix I = Matrix::Identity(frames, frames);
    const auto coeffs = analyze(I);
    const auto bands = split_bands(coeffs, cutoff, mode);
    dc_op_ = bands.dc;
    ac_op_ = bands.ac;
    pack_op_ = bands.F;
    unpack_op_ = unpack_freq_repr(I, cutoff, frames, mode);
}

double band_energy(const Matrix& x_time) { return x_time.squaredNorm(); }

}  // namespace mbsync
