#include "voxdiff/reference.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "voxdiff/detail/posterior.hpp"
#include "voxdiff/detail/resample.hpp"

// Plain serial loops over the same per-voxel arithmetic the OpenMP kernels
// use. Keeping the drivers separate (and boring) makes the equality tests a
// pure check on parallel scheduling.

namespace voxdiff::ref {

SemanticGrid downsample_majority(const SemanticGrid& g, Dims3 target) {
    validate_grid(g);
    if (target.h < 1 || target.w < 1 || target.d < 1)
        throw ConfigError("downsample target must be positive, got " + to_string(target));
    if (g.dims.h % target.h || g.dims.w % target.w || g.dims.d % target.d)
        throw ConfigError("downsample target " + to_string(target) + " does not divide source " +
                          to_string(g.dims));
    int fx = g.dims.h / target.h, fy = g.dims.w / target.w, fz = g.dims.d / target.d;
    SemanticGrid out = new_grid(target, g.num_classes);
    for (int tz = 0; tz < target.d; ++tz)
        for (int ty = 0; ty < target.w; ++ty)
            for (int tx = 0; tx < target.h; ++tx)
                out.labels[size_t(out.index(tx, ty, tz))] =
                    detail::majority_block(g, tx, ty, tz, fx, fy, fz);
    return out;
}

SemanticGrid forward_sample(const SemanticGrid& x0, const NoiseSchedule& s, int t,
                            const VoxelRng& rng, uint64_t stream) {
    validate_grid(x0);
    if (t < 1 || t > s.T) throw ConfigError("forward_sample: t out of range");
    int K = x0.num_classes;
    if (K < 2) throw ConfigError("diffusion needs at least two classes");
    double ab = s.alpha_bar(t);
    SemanticGrid out = x0;
    for (int64_t v = 0; v < x0.voxels(); ++v) {
        double u = rng.uniform(stream, uint64_t(t), uint64_t(v));
        if (u < ab) continue;
        int k = int((u - ab) / (1.0 - ab) * K);
        out.labels[size_t(v)] = uint8_t(k < K ? k : K - 1);
    }
    return out;
}

SemanticGrid sample_reverse_step(const Field& x0_logits, const SemanticGrid& x_t,
                                 const NoiseSchedule& s, int t, const VoxelRng& rng,
                                 uint64_t stream, bool deterministic) {
    if (t < 1 || t > s.T) throw ConfigError("sample_reverse_step: t out of range");
    if (!(x0_logits.dims == x_t.dims) || x0_logits.channels != x_t.num_classes)
        throw ConfigError("sample_reverse_step: logits do not match the grid");
    int K = x_t.num_classes;
    detail::PosteriorScalars ps(s, t, K);
    SemanticGrid out = x_t;
    for (int64_t v = 0; v < x_t.voxels(); ++v) {
        std::array<double, kMaxClasses> w, q;
        double u = deterministic ? 0.0 : rng.uniform(stream, uint64_t(t), uint64_t(v));
        out.labels[size_t(v)] = uint8_t(detail::reverse_pick(
            ps, x0_logits.row(v), int(x_t.labels[size_t(v)]), u, deterministic, w.data(),
            q.data()));
    }
    return out;
}

Field saf_upsample(const Field& coarse, Dims3 target, SafMode mode) {
    if (coarse.dims.h < 1 || coarse.dims.w < 1 || coarse.dims.d < 1 || coarse.channels < 1)
        throw ConfigError("saf_upsample: empty source field");
    if (target.h < 1 || target.w < 1 || target.d < 1)
        throw ConfigError("saf_upsample: target must be positive");
    std::vector<detail::AxisTap> tx = detail::axis_taps(coarse.dims.h, target.h, mode);
    std::vector<detail::AxisTap> ty = detail::axis_taps(coarse.dims.w, target.w, mode);
    std::vector<detail::AxisTap> tz = detail::axis_taps(coarse.dims.d, target.d, mode);
    Field out = new_field<float>(target, coarse.channels);
    for (int z = 0; z < target.d; ++z)
        for (int y = 0; y < target.w; ++y)
            for (int x = 0; x < target.h; ++x) {
                int64_t v = int64_t(x) + int64_t(target.h) * (int64_t(y) + int64_t(target.w) * z);
                detail::blend_voxel(coarse, tx[size_t(x)], ty[size_t(y)], tz[size_t(z)],
                                    out.row(v));
            }
    return out;
}

namespace {

// Brute-force window count instead of integral volumes; the integer counts
// and the per-voxel double arithmetic are identical to the parallel path.
int64_t window_count(const SemanticGrid& g, const SemanticGrid* other, int label, int x0,
                     int x1, int y0, int y1, int z0, int z1) {
    int64_t n = 0;
    for (int z = z0; z < z1; ++z)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
                n += other ? int64_t(g.at(x, y, z) == label && other->at(x, y, z) == label)
                           : int64_t(g.at(x, y, z) == label);
    return n;
}

double sq_dist(const FeatureVector& a, const FeatureVector& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

} // namespace

double ssim3d(const SemanticGrid& a, const SemanticGrid& b) {
    validate_grid(a);
    validate_grid(b);
    if (!(a.dims == b.dims) || a.num_classes != b.num_classes)
        throw ConfigError("ssim3d: mismatched grids");
    constexpr double c1 = 1e-4, c2 = 9e-4;
    constexpr int wxy = 3, wz = 1;
    const int h = a.dims.h, w = a.dims.w, d = a.dims.d;
    double class_sum = 0.0;
    for (int c = 0; c < a.num_classes; ++c) {
        double total = 0.0;
        for (int z = 0; z < d; ++z) {
            int z0 = std::max(0, z - wz), z1 = std::min(d, z + wz + 1);
            double acc = 0.0;
            for (int y = 0; y < w; ++y) {
                int y0 = std::max(0, y - wxy), y1 = std::min(w, y + wxy + 1);
                for (int x = 0; x < h; ++x) {
                    int x0 = std::max(0, x - wxy), x1 = std::min(h, x + wxy + 1);
                    double n = double(x1 - x0) * double(y1 - y0) * double(z1 - z0);
                    double ma = double(window_count(a, nullptr, c, x0, x1, y0, y1, z0, z1)) / n;
                    double mb = double(window_count(b, nullptr, c, x0, x1, y0, y1, z0, z1)) / n;
                    double eab = double(window_count(a, &b, c, x0, x1, y0, y1, z0, z1)) / n;
                    double va = ma - ma * ma;
                    double vb = mb - mb * mb;
                    double cov = eab - ma * mb;
                    acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
            total += acc;
        }
        class_sum += total / double(a.voxels());
    }
    return class_sum / double(a.num_classes);
}

double mmd2(const std::vector<FeatureVector>& g, const std::vector<FeatureVector>& r,
            double sigma_sq) {
    if (g.empty() || r.empty()) throw ConfigError("mmd2: empty feature set");
    if (sigma_sq <= 0.0) {
        std::vector<const FeatureVector*> pool;
        for (const FeatureVector& v : g) pool.push_back(&v);
        for (const FeatureVector& v : r) pool.push_back(&v);
        std::vector<double> dists;
        for (size_t i = 0; i < pool.size(); ++i)
            for (size_t j = i + 1; j < pool.size(); ++j)
                dists.push_back(sq_dist(*pool[i], *pool[j]));
        if (dists.empty()) throw ConfigError("mmd2: need at least two pooled samples");
        std::sort(dists.begin(), dists.end());
        double median = dists.size() % 2 == 1
                            ? dists[dists.size() / 2]
                            : 0.5 * (dists[dists.size() / 2 - 1] + dists[dists.size() / 2]);
        if (median <= 0.0) throw NumericalError("mmd2: zero median pairwise distance");
        sigma_sq = 0.5 * median;
    }
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma_sq);
    auto kernel_mean = [&](const std::vector<FeatureVector>& a,
                           const std::vector<FeatureVector>& b) {
        std::vector<double> row_sums(a.size(), 0.0);
        for (size_t i = 0; i < a.size(); ++i) {
            double acc = 0.0;
            for (size_t j = 0; j < b.size(); ++j)
                acc += std::exp(-sq_dist(a[i], b[j]) * inv_two_sigma_sq);
            row_sums[i] = acc;
        }
        double total = 0.0;
        for (double v : row_sums) total += v;
        return total / (double(a.size()) * double(b.size()));
    };
    double v = kernel_mean(g, g) + kernel_mean(r, r) - 2.0 * kernel_mean(g, r);
    return v > 0.0 ? v : 0.0;
}

} // namespace voxdiff::ref
