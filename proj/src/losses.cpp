#include "mbsync/losses.hpp"

#include <cmath>

#include <unsupported/Eigen/AutoDiff>

#include "mbsync/kinematics.hpp"

namespace mbsync {

namespace {

bool frame_on(const FrameMask& mask, Eigen::Index f) { return mask.size() == 0 || mask[f] != 0.0; }

void check_mask(const FrameMask& mask, Eigen::Index frames) {
    require_shape(mask.size() == 0 || mask.size() == frames, "loss: mask length != frame count");
}

using Ad14 = Eigen::AutoDiffScalar<Eigen::Matrix<double, 14, 1>>;
using Ad10 = Eigen::AutoDiffScalar<Eigen::Matrix<double, 10, 1>>;

template <typename Ad, int K>
void seed(const double* src, Ad* dst, int first, int count) {
    for (int k = 0; k < count; ++k) {
        dst[first + k] = Ad(src[k], K, first + k);
    }
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {dc, ac, norm, align}) {
        if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and >= 0");
    }
}

double squared_error(const Matrix& pred, const Matrix& gt, const FrameMask& mask) {
    require_shape(pred.rows() == gt.rows() && pred.cols() == gt.cols(), "loss: shape mismatch");
    check_mask(mask, pred.rows());
    if (mask.size() == 0) return (pred - gt).squaredNorm();
    double s = 0.0;
    for (Eigen::Index f = 0; f < pred.rows(); ++f) {
        if (mask[f] != 0.0) s += (pred.row(f) - gt.row(f)).squaredNorm();
    }
    return s;
}

double loss_norm(const Matrix& data, const StateLayout& layout, const FrameMask& mask, Matrix* grad) {
    require_shape(data.cols() == layout.width(), "loss_norm: layout/shape mismatch");
    check_mask(mask, data.rows());
    double s = 0.0;
    for (int j = 0; j < layout.rigids(); ++j) {
        const Eigen::Index q0 = layout.rigid(j).offset + 3;
        for (Eigen::Index f = 0; f < data.rows(); ++f) {
            if (!frame_on(mask, f)) continue;
            const auto q = data.row(f).segment(q0, 4);
            const double n = q.norm();
            s += (1.0 - n) * (1.0 - n);
            if (grad && n > 0.0) {
                grad->row(f).segment(q0, 4) += (-2.0 * (1.0 - n) / n) * q;
            }
        }
    }
    return s;
}

double loss_align(const Matrix& data, const StateLayout& layout, const FrameMask& mask, Matrix* grad) {
    require_shape(data.cols() == layout.width(), "loss_align: layout/shape mismatch");
    check_mask(mask, data.rows());
    double s = 0.0;
    for (const auto& b : layout.blocks()) {
        if (!b.is_relative()) continue;
        const Eigen::Index ref = layout.rigid(b.reference).offset;
        if (b.kind == BlockKind::RigidRelative) {
            const Eigen::Index body = layout.rigid(b.body).offset;
            for (Eigen::Index f = 0; f < data.rows(); ++f) {
                if (!frame_on(mask, f)) continue;
                const double* row = data.row(f).data();
                if (!grad) {
                    double r[7];
                    rel_rigid_row<double>(row + ref, row + body, r);
                    for (int k = 0; k < 7; ++k) {
                        const double d = row[b.offset + k] - r[k];
                        s += d * d;
                    }
                    continue;
                }
                Ad14 in[14];
                seed<Ad14, 14>(row + ref, in, 0, 7);
                seed<Ad14, 14>(row + body, in, 7, 7);
                Ad14 r[7];
                rel_rigid_row<Ad14>(in, in + 7, r);
                for (int k = 0; k < 7; ++k) {
                    const double d = row[b.offset + k] - r[k].value();
                    s += d * d;
                    (*grad)(f, b.offset + k) += 2.0 * d;
                    for (int p = 0; p < 7; ++p) {
                        (*grad)(f, ref + p) -= 2.0 * d * r[k].derivatives()[p];
                        (*grad)(f, body + p) -= 2.0 * d * r[k].derivatives()[7 + p];
                    }
                }
            }
        } else {
            const Eigen::Index body = layout.skeleton(b.body).offset;
            for (Eigen::Index f = 0; f < data.rows(); ++f) {
                if (!frame_on(mask, f)) continue;
                const double* row = data.row(f).data();
                for (Eigen::Index c = 0; c < b.width; c += 3) {
                    if (!grad) {
                        double r[3];
                        rel_point_row<double>(row + ref, row + body + c, r);
                        for (int k = 0; k < 3; ++k) {
                            const double d = row[b.offset + c + k] - r[k];
                            s += d * d;
                        }
                        continue;
                    }
                    Ad10 in[10];
                    seed<Ad10, 10>(row + ref, in, 0, 7);
                    seed<Ad10, 10>(row + body + c, in, 7, 3);
                    Ad10 r[3];
                    rel_point_row<Ad10>(in, in + 7, r);
                    for (int k = 0; k < 3; ++k) {
                        const double d = row[b.offset + c + k] - r[k].value();
                        s += d * d;
                        (*grad)(f, b.offset + c + k) += 2.0 * d;
                        for (int p = 0; p < 7; ++p) {
                            (*grad)(f, ref + p) -= 2.0 * d * r[k].derivatives()[p];
                        }
                        for (int p = 0; p < 3; ++p) {
                            (*grad)(f, body + c + p) -= 2.0 * d * r[k].derivatives()[7 + p];
                        }
                    }
                }
            }
        }
    }
    return s;
}

LossBreakdown total_loss(const Matrix& pred_dc, const Matrix& pred_ac, const Matrix& gt_dc,
                         const Matrix& gt_ac, const StateLayout& layout, const LossWeights& w,
                         const FrameMask& mask, LossGradient* grad) {
    w.validate();
    require_shape(pred_dc.rows() == pred_ac.rows() && pred_dc.cols() == pred_ac.cols(),
                  "total_loss: dc/ac shape mismatch");
    LossBreakdown out;
    out.dc = squared_error(pred_dc, gt_dc, mask);
    out.ac = squared_error(pred_ac, gt_ac, mask);
    const Matrix x = pred_dc + pred_ac;

    Matrix g_norm, g_align;
    if (grad) {
        g_norm = Matrix::Zero(x.rows(), x.cols());
        g_align = Matrix::Zero(x.rows(), x.cols());
    }
    out.norm = loss_norm(x, layout, mask, grad ? &g_norm : nullptr);
    out.align = loss_align(x, layout, mask, grad && w.align > 0.0 ? &g_align : nullptr);
    out.total = w.dc * out.dc + w.ac * out.ac + w.norm * out.norm + w.align * out.align;

    if (grad) {
        const Matrix g_x = w.norm * g_norm + w.align * g_align;
        grad->d_dc = g_x;
        grad->d_ac = g_x;
        for (Eigen::Index f = 0; f < x.rows(); ++f) {
            if (!frame_on(mask, f)) continue;
            grad->d_dc.row(f) += 2.0 * w.dc * (pred_dc.row(f) - gt_dc.row(f));
            grad->d_ac.row(f) += 2.0 * w.ac * (pred_ac.row(f) - gt_ac.row(f));
        }
    }
    return out;
}

}  // namespace mbsync
