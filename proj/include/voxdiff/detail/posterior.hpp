#pragma once

// Per-voxel posterior arithmetic shared by the parallel kernels and their
// serial mirrors, so the two paths differ only in loop scheduling.

#include <algorithm>
#include <cmath>

#include "voxdiff/schedule.hpp"

namespace voxdiff::detail {

// Scalar view of one (schedule, t, K) triple. Posterior rows q(x_{t-1} | x_t,
// x0 = c) take at most three distinct values, so row sums collapse to two
// scalars: s_same for c == x_t and s_diff otherwise. s_same is always
// positive; s_diff hits zero only when beta_t = 0 meets abar_{t-1} = 1, where
// every row degenerates to a point mass at the clean label.
struct PosteriorScalars {
    int K = 0;
    double sd = 0, so = 0; // Q_t row: diagonal / off-diagonal
    double cd = 0, co = 0; // Qbar_{t-1} row: diagonal / off-diagonal
    double s_same = 0, s_diff = 0;

    PosteriorScalars(const NoiseSchedule& s, int t, int num_classes) : K(num_classes) {
        MixtureRow step = q_step_coeffs(s, t, num_classes);
        MixtureRow cum = q_cumulative_coeffs(s, t - 1, num_classes);
        sd = step.diag;
        so = step.off;
        cd = cum.diag;
        co = cum.off;
        s_same = sd * cd + double(K - 1) * so * co;
        s_diff = sd * co + so * cd + double(K - 2) * so * co;
    }

    bool degenerate() const { return s_diff == 0.0; }

    // row[k] = q(x_{t-1} = k | x_t, x0 = c), written into out[0..K).
    void row(int x_t, int c, double* out) const {
        if (degenerate()) {
            for (int k = 0; k < K; ++k) out[k] = 0.0;
            out[c] = 1.0;
            return;
        }
        if (c == x_t) {
            double base = so * co / s_same;
            for (int k = 0; k < K; ++k) out[k] = base;
            out[x_t] = sd * cd / s_same;
        } else {
            double base = so * co / s_diff;
            for (int k = 0; k < K; ++k) out[k] = base;
            out[x_t] = sd * co / s_diff;
            out[c] = so * cd / s_diff;
        }
    }

    // q[k] = sum_c weights[c] * row(x_t, c)[k] without forming any row.
    void mix(int x_t, const double* weights, double* q) const {
        if (degenerate()) {
            for (int k = 0; k < K; ++k) q[k] = weights[k];
            return;
        }
        double w_same = weights[x_t];
        double w_rest = 0.0;
        for (int c = 0; c < K; ++c)
            if (c != x_t) w_rest += weights[c];
        double scale_same = w_same / s_same;
        double scale_diff = w_rest / s_diff;
        double floor_term = so * co; // off-diagonal floor present in every row
        for (int k = 0; k < K; ++k) {
            double v = floor_term * (scale_same + scale_diff);
            if (k != x_t) v += weights[k] * (so * cd - floor_term) / s_diff;
            q[k] = v;
        }
        q[x_t] = w_same * (sd * cd) / s_same + w_rest * (sd * co) / s_diff;
    }
};

template <typename T>
inline void softmax_row(const T* logits, int K, double* w) {
    double m = logits[0];
    for (int c = 1; c < K; ++c) m = std::max(m, double(logits[c]));
    double z = 0.0;
    for (int c = 0; c < K; ++c) {
        w[c] = std::exp(double(logits[c]) - m);
        z += w[c];
    }
    for (int c = 0; c < K; ++c) w[c] /= z;
}

// Reverse-transition decision for one voxel; both execution paths call this.
inline int reverse_pick(const PosteriorScalars& ps, const float* logits, int x_t, double u,
                        bool deterministic, double* w, double* q) {
    softmax_row(logits, ps.K, w);
    ps.mix(x_t, w, q);
    int pick;
    if (deterministic) {
        pick = 0;
        for (int k = 1; k < ps.K; ++k)
            if (q[k] > q[pick]) pick = k;
    } else {
        double cum = 0.0;
        pick = ps.K - 1;
        for (int k = 0; k < ps.K; ++k) {
            cum += q[k];
            if (u < cum) {
                pick = k;
                break;
            }
        }
    }
    return pick;
}

} // namespace voxdiff::detail
