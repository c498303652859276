#include "voxdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Dense>

#include "voxdiff/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace voxdiff {

namespace {

void check_grid_pair(const SemanticGrid& a, const SemanticGrid& b, const char* what) {
    if (!(a.dims == b.dims))
        throw ConfigError(std::string(what) + ": dims " + to_string(a.dims) + " vs " +
                          to_string(b.dims));
    if (a.num_classes != b.num_classes)
        throw ConfigError(std::string(what) + ": K=" + std::to_string(a.num_classes) +
                          " vs K=" + std::to_string(b.num_classes));
}

void check_feature_set(const std::vector<FeatureVector>& f, const char* what) {
    if (f.empty()) throw ConfigError(std::string(what) + ": empty feature set");
    size_t dim = f[0].size();
    if (dim == 0) throw ConfigError(std::string(what) + ": zero-dimensional features");
    for (const FeatureVector& v : f) {
        if (v.size() != dim)
            throw ConfigError(std::string(what) + ": inconsistent feature lengths " +
                              std::to_string(dim) + " vs " + std::to_string(v.size()));
        for (double x : v)
            if (!std::isfinite(x))
                throw NumericalError(std::string(what) + ": non-finite feature entry");
    }
}

double sq_dist(const FeatureVector& a, const FeatureVector& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

// Eigendecomposition-based PSD square root; eigenvalues below -tol are a hard
// failure, small negatives are clamped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success)
        throw NumericalError(std::string(what) + ": eigendecomposition failed");
    Eigen::VectorXd evals = es.eigenvalues();
    for (int i = 0; i < evals.size(); ++i) {
        if (evals[i] < -1e-9)
            throw NumericalError(std::string(what) + ": eigenvalue " +
                                 std::to_string(evals[i]) + " below -1e-9");
        evals[i] = evals[i] > 0.0 ? std::sqrt(evals[i]) : 0.0;
    }
    return es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd to_eigen(const GaussianStats& s, const char* what) {
    if (s.dim <= 0 || s.mu.size() != size_t(s.dim) ||
        s.sigma.size() != size_t(s.dim) * size_t(s.dim))
        throw ConfigError(std::string(what) + ": malformed stats");
    Eigen::MatrixXd m(s.dim, s.dim);
    for (int r = 0; r < s.dim; ++r)
        for (int c = 0; c < s.dim; ++c) {
            double v = s.at(r, c);
            if (!std::isfinite(v))
                throw NumericalError(std::string(what) + ": non-finite covariance");
            m(r, c) = v;
        }
    for (int r = 0; r < s.dim; ++r)
        for (int c = 0; c < s.dim; ++c)
            if (std::abs(m(r, c) - m(c, r)) > 1e-9)
                throw NumericalError(std::string(what) + ": covariance asymmetry above 1e-9");
    return m;
}

// Inclusive-exclusive integral volume over an indicator; S(x,y,z) holds the
// count in [0,x) x [0,y) x [0,z).
struct IntegralVolume {
    int h = 0, w = 0, d = 0;
    std::vector<int64_t> s;

    void build(const SemanticGrid& g, const SemanticGrid* other, int label) {
        h = g.dims.h;
        w = g.dims.w;
        d = g.dims.d;
        s.assign(size_t(h + 1) * size_t(w + 1) * size_t(d + 1), 0);
        for (int z = 0; z < d; ++z)
            for (int y = 0; y < w; ++y)
                for (int x = 0; x < h; ++x) {
                    int64_t val = other
                                      ? int64_t(g.at(x, y, z) == label &&
                                                other->at(x, y, z) == label)
                                      : int64_t(g.at(x, y, z) == label);
                    at(x + 1, y + 1, z + 1) = val + at(x, y + 1, z + 1) +
                                              at(x + 1, y, z + 1) + at(x + 1, y + 1, z) -
                                              at(x, y, z + 1) - at(x, y + 1, z) -
                                              at(x + 1, y, z) + at(x, y, z);
                }
    }

    int64_t& at(int x, int y, int z) {
        return s[(size_t(z) * size_t(w + 1) + size_t(y)) * size_t(h + 1) + size_t(x)];
    }
    int64_t at(int x, int y, int z) const {
        return s[(size_t(z) * size_t(w + 1) + size_t(y)) * size_t(h + 1) + size_t(x)];
    }
    // Count over [x0,x1) x [y0,y1) x [z0,z1).
    int64_t box(int x0, int x1, int y0, int y1, int z0, int z1) const {
        return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) +
               at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
    }
};

constexpr double kSsimC1 = 1e-4;
constexpr double kSsimC2 = 9e-4;
constexpr int kWinXY = 3; // window half-extent in x and y (7 wide)
constexpr int kWinZ = 1;  // window half-extent in z (3 wide)

// Per-class windowed SSIM summed over all voxel-centered windows. Inputs are
// binary indicators, so squared sums equal plain sums and every local moment
// comes from three integral volumes.
double ssim_class_sum(const IntegralVolume& sa, const IntegralVolume& sb,
                      const IntegralVolume& sab) {
    int h = sa.h, w = sa.w, d = sa.d;
    std::vector<double> slice_sums(size_t(d), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int z = 0; z < d; ++z) {
        int z0 = std::max(0, z - kWinZ), z1 = std::min(d, z + kWinZ + 1);
        double acc = 0.0;
        for (int y = 0; y < w; ++y) {
            int y0 = std::max(0, y - kWinXY), y1 = std::min(w, y + kWinXY + 1);
            for (int x = 0; x < h; ++x) {
                int x0 = std::max(0, x - kWinXY), x1 = std::min(h, x + kWinXY + 1);
                double n = double(x1 - x0) * double(y1 - y0) * double(z1 - z0);
                double ma = double(sa.box(x0, x1, y0, y1, z0, z1)) / n;
                double mb = double(sb.box(x0, x1, y0, y1, z0, z1)) / n;
                double eab = double(sab.box(x0, x1, y0, y1, z0, z1)) / n;
                double va = ma - ma * ma; // binary data: E[a^2] = E[a]
                double vb = mb - mb * mb;
                double cov = eab - ma * mb;
                acc += (2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2) /
                       ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
            }
        }
        slice_sums[size_t(z)] = acc;
    }
    double total = 0.0;
    for (double v : slice_sums) total += v;
    return total;
}

double percentile_nearest_rank(std::vector<double> sorted, double p) {
    size_t n = sorted.size();
    size_t rank = size_t(std::ceil(p / 100.0 * double(n)));
    if (rank == 0) rank = 1;
    return sorted[std::min(rank - 1, n - 1)];
}

} // namespace

FeatureVector extract_features(const SemanticGrid& g, int ignore_index) {
    validate_grid(g);
    if (ignore_index < 0 || ignore_index >= g.num_classes)
        throw ConfigError("ignore_index " + std::to_string(ignore_index) +
                          " outside [0, " + std::to_string(g.num_classes) + ")");
    const int K = g.num_classes;
    const int h = g.dims.h, w = g.dims.w, d = g.dims.d;
    const double n = double(g.voxels());

    std::vector<double> count(size_t(K), 0.0);
    std::vector<double> sum(size_t(K) * 3, 0.0), sum_sq(size_t(K) * 3, 0.0);
    std::vector<double> z_occ(size_t(d), 0.0);
    std::vector<double> cell_count(32 * size_t(K), 0.0);

    for (int z = 0; z < d; ++z) {
        int cz = int((int64_t(2) * z) / d);
        for (int y = 0; y < w; ++y) {
            int cy = int((int64_t(4) * y) / w);
            for (int x = 0; x < h; ++x) {
                int c = g.at(x, y, z);
                count[size_t(c)] += 1.0;
                double u[3] = {(x + 0.5) / double(h), (y + 0.5) / double(w),
                               (z + 0.5) / double(d)};
                for (int a = 0; a < 3; ++a) {
                    sum[size_t(c) * 3 + size_t(a)] += u[a];
                    sum_sq[size_t(c) * 3 + size_t(a)] += u[a] * u[a];
                }
                if (c != ignore_index) z_occ[size_t(z)] += 1.0;
                int cx = int((int64_t(4) * x) / h);
                cell_count[size_t(cx + 4 * cy + 16 * cz) * size_t(K) + size_t(c)] += 1.0;
            }
        }
    }

    FeatureVector f;
    f.reserve(size_t(7 * K + d + 32));
    for (int c = 0; c < K; ++c) f.push_back(count[size_t(c)] / n);
    for (int c = 0; c < K; ++c) {
        double cnt = count[size_t(c)];
        double com[3] = {0, 0, 0}, sd[3] = {0, 0, 0};
        if (cnt > 0.0) {
            for (int a = 0; a < 3; ++a) {
                com[a] = sum[size_t(c) * 3 + size_t(a)] / cnt;
                double var = sum_sq[size_t(c) * 3 + size_t(a)] / cnt - com[a] * com[a];
                sd[a] = std::sqrt(var > 0.0 ? var : 0.0);
            }
        }
        for (int a = 0; a < 3; ++a) f.push_back(com[a]);
        for (int a = 0; a < 3; ++a) f.push_back(sd[a]);
    }
    double layer = double(h) * double(w);
    for (int z = 0; z < d; ++z) f.push_back(z_occ[size_t(z)] / layer);
    for (int cell = 0; cell < 32; ++cell) {
        double total = 0.0;
        for (int c = 0; c < K; ++c) total += cell_count[size_t(cell) * size_t(K) + size_t(c)];
        double entropy = 0.0;
        if (total > 0.0)
            for (int c = 0; c < K; ++c) {
                double p = cell_count[size_t(cell) * size_t(K) + size_t(c)] / total;
                if (p > 0.0) entropy -= p * std::log(p);
            }
        f.push_back(entropy);
    }
    return f;
}

std::vector<FeatureVector> extract_all(const std::vector<SemanticGrid>& grids,
                                       const FeatureExtractor& extractor) {
    if (!extractor) throw ConfigError("extract_all: null extractor");
    std::vector<FeatureVector> out(grids.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int64_t i = 0; i < int64_t(grids.size()); ++i)
        out[size_t(i)] = extractor(grids[size_t(i)]);
    return out;
}

GaussianStats gaussian_stats(const std::vector<FeatureVector>& features) {
    check_feature_set(features, "gaussian_stats");
    if (features.size() < 2)
        throw ConfigError("gaussian_stats: need at least two samples, got " +
                          std::to_string(features.size()));
    const int dim = int(features[0].size());
    const double n = double(features.size());

    GaussianStats s;
    s.dim = dim;
    s.mu.assign(size_t(dim), 0.0);
    s.sigma.assign(size_t(dim) * size_t(dim), 0.0);
    for (const FeatureVector& v : features)
        for (int i = 0; i < dim; ++i) s.mu[size_t(i)] += v[size_t(i)];
    for (int i = 0; i < dim; ++i) s.mu[size_t(i)] /= n;
    for (const FeatureVector& v : features)
        for (int r = 0; r < dim; ++r) {
            double dr = v[size_t(r)] - s.mu[size_t(r)];
            for (int c = r; c < dim; ++c)
                s.at(r, c) += dr * (v[size_t(c)] - s.mu[size_t(c)]);
        }
    for (int r = 0; r < dim; ++r)
        for (int c = r; c < dim; ++c) {
            s.at(r, c) /= (n - 1.0);
            s.at(c, r) = s.at(r, c);
        }
    return s;
}

double frechet_distance(const GaussianStats& g, const GaussianStats& r) {
    if (g.dim != r.dim)
        throw ConfigError("frechet_distance: dim " + std::to_string(g.dim) + " vs " +
                          std::to_string(r.dim));
    for (double v : g.mu)
        if (!std::isfinite(v)) throw NumericalError("frechet_distance: non-finite mean");
    for (double v : r.mu)
        if (!std::isfinite(v)) throw NumericalError("frechet_distance: non-finite mean");
    Eigen::MatrixXd sg = to_eigen(g, "frechet_distance");
    Eigen::MatrixXd sr = to_eigen(r, "frechet_distance");

    double mean_term = 0.0;
    for (int i = 0; i < g.dim; ++i) {
        double diff = g.mu[size_t(i)] - r.mu[size_t(i)];
        mean_term += diff * diff;
    }

    Eigen::MatrixXd sg_half = psd_sqrt(sg, "frechet_distance");
    Eigen::MatrixXd sr_half = psd_sqrt(sr, "frechet_distance");
    // M M^T equals S_g^{1/2} S_r S_g^{1/2} and is symmetric PSD by
    // construction, so roundoff cannot manufacture spurious negatives.
    Eigen::MatrixXd m = sg_half * sr_half;
    Eigen::MatrixXd inner = m * m.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    if (es.info() != Eigen::Success)
        throw NumericalError("frechet_distance: eigendecomposition failed");
    double trace_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        double ev = es.eigenvalues()[i];
        trace_sqrt += ev > 0.0 ? std::sqrt(ev) : 0.0;
    }
    // Nonnegative in exact arithmetic; trace cancellation can leak a tiny
    // negative, so clamp like mmd2 does.
    return std::max(mean_term + sg.trace() + sr.trace() - 2.0 * trace_sqrt, 0.0);
}

double mmd2(const std::vector<FeatureVector>& g, const std::vector<FeatureVector>& r,
            double sigma_sq) {
    check_feature_set(g, "mmd2");
    check_feature_set(r, "mmd2");
    if (g[0].size() != r[0].size())
        throw ConfigError("mmd2: feature length " + std::to_string(g[0].size()) + " vs " +
                          std::to_string(r[0].size()));
    if (std::isnan(sigma_sq) || std::isinf(sigma_sq))
        throw ConfigError("mmd2: bandwidth must be finite");

    if (sigma_sq <= 0.0) {
        // Median heuristic over all unordered pooled pairs.
        std::vector<const FeatureVector*> pool;
        for (const FeatureVector& v : g) pool.push_back(&v);
        for (const FeatureVector& v : r) pool.push_back(&v);
        size_t np = pool.size();
        std::vector<double> dists;
        dists.reserve(np * (np - 1) / 2);
        for (size_t i = 0; i < np; ++i)
            for (size_t j = i + 1; j < np; ++j) dists.push_back(sq_dist(*pool[i], *pool[j]));
        if (dists.empty())
            throw ConfigError("mmd2: need at least two pooled samples for the median "
                              "heuristic; pass a fixed bandwidth");
        std::sort(dists.begin(), dists.end());
        double median = dists.size() % 2 == 1
                            ? dists[dists.size() / 2]
                            : 0.5 * (dists[dists.size() / 2 - 1] + dists[dists.size() / 2]);
        if (median <= 0.0)
            throw NumericalError("mmd2: zero median pairwise distance (all features "
                                 "identical); jitter the inputs or pass a fixed bandwidth");
        sigma_sq = 0.5 * median;
    }

    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma_sq);
    auto kernel_mean = [&](const std::vector<FeatureVector>& a,
                           const std::vector<FeatureVector>& b) {
        std::vector<double> row_sums(a.size(), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int64_t i = 0; i < int64_t(a.size()); ++i) {
            double acc = 0.0;
            for (size_t j = 0; j < b.size(); ++j)
                acc += std::exp(-sq_dist(a[size_t(i)], b[j]) * inv_two_sigma_sq);
            row_sums[size_t(i)] = acc;
        }
        double total = 0.0;
        for (double v : row_sums) total += v;
        return total / (double(a.size()) * double(b.size()));
    };

    double v = kernel_mean(g, g) + kernel_mean(r, r) - 2.0 * kernel_mean(g, r);
    return v > 0.0 ? v : 0.0;
}

ConfusionMatrix accumulate_confusion(const std::vector<SemanticGrid>& truth,
                                     const std::vector<SemanticGrid>& pred) {
    if (truth.empty() || truth.size() != pred.size())
        throw ConfigError("confusion: need equally many truth and prediction grids");
    ConfusionMatrix m;
    m.num_classes = truth[0].num_classes;
    m.counts.assign(size_t(m.num_classes) * size_t(m.num_classes), 0);
    for (size_t i = 0; i < truth.size(); ++i) {
        check_grid_pair(truth[i], pred[i], "confusion");
        if (truth[i].num_classes != m.num_classes)
            throw ConfigError("confusion: inconsistent K across pairs");
        for (int64_t v = 0; v < truth[i].voxels(); ++v)
            ++m.at(truth[i].labels[size_t(v)], pred[i].labels[size_t(v)]);
    }
    return m;
}

SegmentationReport segmentation_metrics(const std::vector<SemanticGrid>& truth,
                                        const std::vector<SemanticGrid>& pred,
                                        int ignore_index) {
    SegmentationReport rep;
    rep.confusion = accumulate_confusion(truth, pred);
    const int K = rep.confusion.num_classes;
    if (ignore_index < 0 || ignore_index >= K)
        throw ConfigError("segmentation_metrics: ignore_index " +
                          std::to_string(ignore_index) + " outside [0, " +
                          std::to_string(K) + ")");
    rep.per_class_iou.assign(size_t(K), -1.0);

    double iou_sum = 0.0, recall_sum = 0.0;
    int present = 0;
    for (int c = 0; c < K; ++c) {
        if (c == ignore_index) continue;
        int64_t tp = rep.confusion.at(c, c);
        int64_t row = 0, col = 0;
        for (int j = 0; j < K; ++j) row += rep.confusion.at(c, j);
        for (int r = 0; r < K; ++r)
            if (r != ignore_index) col += rep.confusion.at(r, c);
        if (row == 0) continue; // absent from truth
        int64_t fn = row - tp;
        int64_t fp = col - tp;
        double iou = double(tp) / double(tp + fp + fn);
        rep.per_class_iou[size_t(c)] = iou;
        iou_sum += iou;
        recall_sum += double(tp) / double(row);
        ++present;
    }
    if (present == 0)
        throw ConfigError("segmentation_metrics: no non-ignored class present in truth");
    rep.miou = iou_sum / double(present);
    rep.ma = recall_sum / double(present);
    return rep;
}

double ssim3d(const SemanticGrid& a, const SemanticGrid& b) {
    validate_grid(a);
    validate_grid(b);
    check_grid_pair(a, b, "ssim3d");
    const int K = a.num_classes;
    double class_sum = 0.0;
    IntegralVolume sa, sb, sab;
    for (int c = 0; c < K; ++c) {
        sa.build(a, nullptr, c);
        sb.build(b, nullptr, c);
        sab.build(a, &b, c);
        class_sum += ssim_class_sum(sa, sb, sab) / double(a.voxels());
    }
    return class_sum / double(K);
}

RetrievalReport retrieve_nearest(const std::vector<SemanticGrid>& queries,
                                 const std::vector<SemanticGrid>& corpus) {
    if (corpus.empty()) throw ConfigError("retrieve_nearest: empty corpus");
    if (queries.empty()) throw ConfigError("retrieve_nearest: no queries");
    for (const SemanticGrid& q : queries) check_grid_pair(q, corpus[0], "retrieve_nearest");
    for (const SemanticGrid& c : corpus) check_grid_pair(c, corpus[0], "retrieve_nearest");

    RetrievalReport rep;
    rep.matches.assign(queries.size(), RetrievalMatch{});
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int64_t qi = 0; qi < int64_t(queries.size()); ++qi) {
        RetrievalMatch best;
        for (size_t ci = 0; ci < corpus.size(); ++ci) {
            double v = ssim3d(queries[size_t(qi)], corpus[ci]);
            if (v > best.ssim) {
                best.ssim = v;
                best.index = int(ci);
            }
        }
        rep.matches[size_t(qi)] = best;
    }

    std::vector<double> bests;
    bests.reserve(rep.matches.size());
    for (const RetrievalMatch& m : rep.matches) bests.push_back(m.ssim);
    std::sort(bests.begin(), bests.end());
    rep.p10 = percentile_nearest_rank(bests, 10.0);
    rep.p50 = percentile_nearest_rank(bests, 50.0);
    rep.p90 = percentile_nearest_rank(bests, 90.0);
    return rep;
}

} // namespace voxdiff
