#include "voxdiff/diffusion.hpp"

#include <array>
#include <cmath>
#include <string>

#include "voxdiff/detail/loss.hpp"
#include "voxdiff/detail/posterior.hpp"

namespace voxdiff {

using detail::PosteriorScalars;
using detail::softmax_row;

namespace {

void check_step(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T)
        throw ConfigError("timestep t=" + std::to_string(t) + " outside [1, " +
                          std::to_string(s.T) + "]");
}

void check_pair(const Field& logits, const SemanticGrid& g, const char* what) {
    if (!(logits.dims == g.dims))
        throw ConfigError(std::string(what) + ": logits shaped " + to_string(logits.dims) +
                          " but grid is " + to_string(g.dims));
    if (logits.channels != g.num_classes)
        throw ConfigError(std::string(what) + ": logits carry " +
                          std::to_string(logits.channels) + " channels for K=" +
                          std::to_string(g.num_classes));
}

} // namespace

SemanticGrid forward_sample(const SemanticGrid& x0, const NoiseSchedule& s, int t,
                            const VoxelRng& rng, uint64_t stream) {
    validate_grid(x0);
    check_step(s, t);
    int K = x0.num_classes;
    if (K < 2) throw ConfigError("diffusion needs at least two classes");
    double ab = s.alpha_bar(t);
    SemanticGrid out = x0;
    int64_t n = x0.voxels();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 4096)
#endif
    for (int64_t v = 0; v < n; ++v) {
        double u = rng.uniform(stream, uint64_t(t), uint64_t(v));
        if (u < ab) continue; // keep the clean label
        int k = int((u - ab) / (1.0 - ab) * K);
        out.labels[size_t(v)] = uint8_t(k < K ? k : K - 1);
    }
    return out;
}

SemanticGrid init_noise(Dims3 dims, int num_classes, const VoxelRng& rng, uint64_t stream) {
    if (num_classes < 2) throw ConfigError("diffusion needs at least two classes");
    SemanticGrid g = new_grid(dims, num_classes);
    int64_t n = g.voxels();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 4096)
#endif
    for (int64_t v = 0; v < n; ++v) {
        double u = rng.uniform(stream, 0, uint64_t(v));
        int k = int(u * num_classes);
        g.labels[size_t(v)] = uint8_t(k < num_classes ? k : num_classes - 1);
    }
    return g;
}

std::vector<double> posterior_row(const NoiseSchedule& s, int t, int x_t, int x0,
                                  int num_classes) {
    check_step(s, t);
    if (num_classes < 2 || num_classes > kMaxClasses)
        throw ConfigError("posterior_row: bad class count " + std::to_string(num_classes));
    if (x_t < 0 || x_t >= num_classes || x0 < 0 || x0 >= num_classes)
        throw ConfigError("posterior_row: class index out of range");
    PosteriorScalars ps(s, t, num_classes);
    std::vector<double> row(static_cast<size_t>(num_classes));
    ps.row(x_t, x0, row.data());
    return row;
}

std::vector<double> reverse_step_distribution(const NoiseSchedule& s, int t, int x_t,
                                              std::span<const float> x0_logits) {
    check_step(s, t);
    int K = int(x0_logits.size());
    if (K < 2 || K > kMaxClasses)
        throw ConfigError("reverse_step_distribution: bad logit count " + std::to_string(K));
    if (x_t < 0 || x_t >= K) throw ConfigError("reverse_step_distribution: x_t out of range");
    PosteriorScalars ps(s, t, K);
    std::array<double, kMaxClasses> w;
    softmax_row(x0_logits.data(), K, w.data());
    std::vector<double> q(static_cast<size_t>(K));
    ps.mix(x_t, w.data(), q.data());
    return q;
}

SemanticGrid sample_reverse_step(const Field& x0_logits, const SemanticGrid& x_t,
                                 const NoiseSchedule& s, int t, const VoxelRng& rng,
                                 uint64_t stream, bool deterministic) {
    check_step(s, t);
    check_pair(x0_logits, x_t, "sample_reverse_step");
    int K = x_t.num_classes;
    if (K < 2) throw ConfigError("diffusion needs at least two classes");
    PosteriorScalars ps(s, t, K);
    SemanticGrid out = x_t;
    int64_t n = x_t.voxels();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 1024)
#endif
    for (int64_t v = 0; v < n; ++v) {
        std::array<double, kMaxClasses> w, q;
        double u = deterministic ? 0.0 : rng.uniform(stream, uint64_t(t), uint64_t(v));
        out.labels[size_t(v)] = uint8_t(detail::reverse_pick(
            ps, x0_logits.row(v), int(x_t.labels[size_t(v)]), u, deterministic, w.data(),
            q.data()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hybrid objective (shared templated arithmetic in detail/loss.hpp)
// ---------------------------------------------------------------------------

LossBreakdown hybrid_loss(const Field& x0_logits, const SemanticGrid& x0,
                          const SemanticGrid& x_t, const NoiseSchedule& s, int t,
                          double lambda_aux) {
    return detail::hybrid_loss_impl<float>(x0_logits, x0, x_t, s, t, lambda_aux, nullptr);
}

LossBreakdown hybrid_loss_grad(const Field& x0_logits, const SemanticGrid& x0,
                               const SemanticGrid& x_t, const NoiseSchedule& s, int t,
                               double lambda_aux, Field* grad_out) {
    if (!grad_out) throw ConfigError("hybrid_loss_grad: grad_out must not be null");
    return detail::hybrid_loss_impl<float>(x0_logits, x0, x_t, s, t, lambda_aux, grad_out);
}

} // namespace voxdiff
