#pragma once

// Hybrid-objective arithmetic shared by the float production path and the
// double path used for finite-difference verification. All accumulation is
// double regardless of the logit type.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "voxdiff/diffusion.hpp"
#include "voxdiff/detail/posterior.hpp"

namespace voxdiff::detail {

inline void check_loss_step(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T)
        throw ConfigError("timestep t=" + std::to_string(t) + " outside [1, " +
                          std::to_string(s.T) + "]");
}

template <typename T>
void check_loss_pair(const FieldT<T>& logits, const SemanticGrid& g, const char* what) {
    if (!(logits.dims == g.dims))
        throw ConfigError(std::string(what) + ": logits shaped " + to_string(logits.dims) +
                          " but grid is " + to_string(g.dims));
    if (logits.channels != g.num_classes)
        throw ConfigError(std::string(what) + ": logits carry " +
                          std::to_string(logits.channels) + " channels for K=" +
                          std::to_string(g.num_classes));
}

template <typename T>
LossBreakdown hybrid_loss_impl(const FieldT<T>& x0_logits, const SemanticGrid& x0,
                               const SemanticGrid& x_t, const NoiseSchedule& s, int t,
                               double lambda_aux, FieldT<T>* grad_out) {
    check_loss_step(s, t);
    check_loss_pair(x0_logits, x0, "hybrid_loss");
    check_loss_pair(x0_logits, x_t, "hybrid_loss");
    int K = x0.num_classes;
    if (K < 2) throw ConfigError("diffusion needs at least two classes");
    PosteriorScalars ps(s, t, K);
    int64_t n = x0.voxels();
    if (grad_out) *grad_out = new_field<T>(x0.dims, K);

    // Per-voxel terms land in index order and are reduced serially afterwards,
    // so totals do not depend on the thread count.
    std::vector<double> kl_terms(static_cast<size_t>(n)), ce_terms(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 512)
#endif
    for (int64_t v = 0; v < n; ++v) {
        std::array<double, kMaxClasses> w, p, q;
        softmax_row(x0_logits.row(v), K, w.data());
        int xt = int(x_t.labels[size_t(v)]);
        int x0v = int(x0.labels[size_t(v)]);
        ps.row(xt, x0v, p.data());
        ps.mix(xt, w.data(), q.data());

        double kl = 0.0;
        for (int k = 0; k < K; ++k)
            if (p[size_t(k)] > 0.0)
                kl += p[size_t(k)] * (std::log(p[size_t(k)]) - std::log(q[size_t(k)]));
        kl_terms[size_t(v)] = kl;
        ce_terms[size_t(v)] = -std::log(w[size_t(x0v)]);

        if (!grad_out) continue;
        // dKL/dw_c = g_c = -sum_k p_k * row_c[k] / q_k, then through softmax.
        // p_k > 0 implies q_k > 0 (the c = x0 mixture component alone puts
        // mass there), and zero-mass classes contribute nothing, so 0/0
        // corners resolve to zero.
        auto ratio = [&](int k) {
            return p[size_t(k)] > 0.0 ? p[size_t(k)] / q[size_t(k)] : 0.0;
        };
        std::array<double, kMaxClasses> g;
        if (ps.degenerate()) {
            for (int c = 0; c < K; ++c) g[size_t(c)] = -ratio(c);
        } else {
            double ratio_rest = 0.0; // sum_{k != x_t} p_k / q_k
            for (int k = 0; k < K; ++k)
                if (k != xt) ratio_rest += ratio(k);
            double ratio_xt = ratio(xt);
            for (int c = 0; c < K; ++c) {
                if (c == xt) {
                    g[size_t(c)] =
                        -(ratio_xt * ps.sd * ps.cd + ps.so * ps.co * ratio_rest) / ps.s_same;
                } else {
                    double rc = ratio(c);
                    g[size_t(c)] = -(ratio_xt * ps.sd * ps.co + rc * ps.so * ps.cd +
                                     ps.so * ps.co * (ratio_rest - rc)) /
                                   ps.s_diff;
                }
            }
        }
        double g_mean = 0.0;
        for (int c = 0; c < K; ++c) g_mean += w[size_t(c)] * g[size_t(c)];
        T* grow = grad_out->row(v);
        double inv_n = 1.0 / double(n);
        for (int c = 0; c < K; ++c) {
            double dkl = w[size_t(c)] * (g[size_t(c)] - g_mean);
            double dce = w[size_t(c)] - (c == x0v ? 1.0 : 0.0);
            grow[c] = T((dkl + lambda_aux * dce) * inv_n);
        }
    }

    LossBreakdown out;
    for (int64_t v = 0; v < n; ++v) out.kl += kl_terms[size_t(v)];
    for (int64_t v = 0; v < n; ++v) out.aux += ce_terms[size_t(v)];
    out.kl /= double(n);
    out.aux /= double(n);
    out.total = out.kl + lambda_aux * out.aux;
    return out;
}

} // namespace voxdiff::detail
