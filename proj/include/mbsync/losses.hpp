#pragma once

#include "mbsync/common.hpp"
#include "mbsync/state.hpp"

namespace mbsync {

struct LossWeights {
    double dc = 1.0;
    double ac = 2.5;
    double norm = 0.1;
    double align = 0.3;

    /// Throws ConfigError on negative or non-finite weights.
    void validate() const;
};

struct LossBreakdown {
    double dc = 0.0;
    double ac = 0.0;
    double norm = 0.0;
    double align = 0.0;
    double total = 0.0;
};

/// Optional per-frame 0/1 weights; an empty vector means every frame counts.
using FrameMask = Vector;

/// Plain sum of squared differences over the masked frames.
double squared_error(const Matrix& pred, const Matrix& gt, const FrameMask& mask = {});
inline double loss_dc(const Matrix& pred, const Matrix& gt, const FrameMask& mask = {}) {
    return squared_error(pred, gt, mask);
}
inline double loss_ac(const Matrix& pred, const Matrix& gt, const FrameMask& mask = {}) {
    return squared_error(pred, gt, mask);
}

/// sum over rigids and frames of (1 - |q|)^2. When `grad` is non-null the
/// gradient with respect to `data` is added into it.
double loss_norm(const Matrix& data, const StateLayout& layout, const FrameMask& mask = {},
                 Matrix* grad = nullptr);

/// sum over relative blocks of ||block - rel(reference, body)||^2 on raw
/// (unnormalized) individual blocks. Gradient accumulation as for loss_norm.
double loss_align(const Matrix& data, const StateLayout& layout, const FrameMask& mask = {},
                  Matrix* grad = nullptr);

inline double loss_align(const HighOrderState& x) { return loss_align(x.data, x.layout); }
inline double loss_norm(const HighOrderState& x) { return loss_norm(x.data, x.layout); }

/// Gradients of the total loss with respect to the two predicted bands.
struct LossGradient {
    Matrix d_dc;
    Matrix d_ac;
};

/// lambda_dc L_dc + lambda_ac L_ac + lambda_norm L_norm + lambda_align L_align,
/// with L_norm and L_align evaluated on pred_dc + pred_ac.
LossBreakdown total_loss(const Matrix& pred_dc, const Matrix& pred_ac, const Matrix& gt_dc,
                         const Matrix& gt_ac, const StateLayout& layout, const LossWeights& w,
                         const FrameMask& mask = {}, LossGradient* grad = nullptr);

}  // namespace mbsync
