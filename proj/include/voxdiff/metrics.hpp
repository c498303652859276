#pragma once

// Evaluation stack: deterministic scene features, Frechet distance between
// Gaussian feature statistics, Gaussian-kernel MMD^2 with median-heuristic
// bandwidth, confusion-matrix segmentation metrics, and SSIM-based retrieval.
//
// The feature extractor is a fixed hand-crafted function, so absolute
// Frechet/MMD numbers are only comparable between runs of this code base.
// Anything downstream of extract_features is pluggable: the statistics and
// kernel operations accept any externally produced feature vectors.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxdiff/grid.hpp"

namespace voxdiff {

using FeatureVector = std::vector<double>;
using FeatureExtractor = std::function<FeatureVector(const SemanticGrid&)>;

// Deterministic per-scene descriptor, concatenating
//   [0, K)          normalized class histogram
//   [K, 7K)         per class: center of mass (x, y, z) then standard
//                   deviation (x, y, z) of normalized voxel centers
//                   ((x + 0.5) / h and likewise per axis); zeros when the
//                   class is absent
//   [7K, 7K + d)    per z-layer fraction of voxels outside ignore_index
//   [7K + d, +32)   Shannon entropy (nats) of the label distribution inside
//                   each cell of a fixed 4x4x2 partition of (x, y, z), cell
//                   index cx + 4*cy + 16*cz; empty cells contribute zero
FeatureVector extract_features(const SemanticGrid& g, int ignore_index = 0);

std::vector<FeatureVector> extract_all(const std::vector<SemanticGrid>& grids,
                                       const FeatureExtractor& extractor);

struct GaussianStats {
    std::vector<double> mu;
    std::vector<double> sigma; // row-major dim x dim, symmetric
    int dim = 0;
    double& at(int r, int c) { return sigma[size_t(r) * size_t(dim) + size_t(c)]; }
    double at(int r, int c) const { return sigma[size_t(r) * size_t(dim) + size_t(c)]; }
};

// Sample mean and (n-1)-normalized covariance; needs at least two vectors of
// identical finite contents.
GaussianStats gaussian_stats(const std::vector<FeatureVector>& features);

// ||mu_g - mu_r||^2 + Tr(S_g + S_r - 2 (S_g S_r)^{1/2}) with the matrix root
// taken through the symmetric product S_g^{1/2} S_r S_g^{1/2}; eigenvalues may
// dip to -1e-9 from roundoff and are clamped to zero, anything lower is an
// error. Returns the raw distance; reports scale it by 1e-3 as "f3d".
double frechet_distance(const GaussianStats& g, const GaussianStats& r);

// Biased-estimator squared maximum mean discrepancy under a Gaussian kernel.
// sigma_sq <= 0 selects the median heuristic: half the median squared
// pairwise distance over the pooled set; a zero median is an error telling
// the caller to jitter the features or pass a fixed bandwidth.
double mmd2(const std::vector<FeatureVector>& g, const std::vector<FeatureVector>& r,
            double sigma_sq = 0.0);

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<int64_t> counts; // truth-major K x K

    int64_t& at(int truth, int pred) {
        return counts[size_t(truth) * size_t(num_classes) + size_t(pred)];
    }
    int64_t at(int truth, int pred) const {
        return counts[size_t(truth) * size_t(num_classes) + size_t(pred)];
    }
};

ConfusionMatrix accumulate_confusion(const std::vector<SemanticGrid>& truth,
                                     const std::vector<SemanticGrid>& pred);

struct SegmentationReport {
    double miou = 0.0;
    double ma = 0.0;
    // IoU per class; -1 marks the ignored class and classes absent from the
    // truth, which do not enter miou/ma.
    std::vector<double> per_class_iou;
    ConfusionMatrix confusion;
};

// Accumulates one confusion matrix over all pairs. IoU_c = TP/(TP+FP+FN) with
// false positives not counting voxels whose truth is ignore_index; miou and
// ma (mean per-class recall) average over non-ignored classes present in the
// truth.
SegmentationReport segmentation_metrics(const std::vector<SemanticGrid>& truth,
                                        const std::vector<SemanticGrid>& pred,
                                        int ignore_index = 0);

// Mean over the K binary class volumes of windowed SSIM with a uniform
// 7x7x3 (x, y, z) window clamped at the boundaries, C1 = 1e-4, C2 = 9e-4,
// data range 1. Symmetric, bounded by [-1, 1], and exactly 1 on identical
// grids.
double ssim3d(const SemanticGrid& a, const SemanticGrid& b);

struct RetrievalMatch {
    double ssim = -2.0;
    int index = -1;
};

struct RetrievalReport {
    std::vector<RetrievalMatch> matches; // one per query, in query order
    // Nearest-rank percentiles of the best-SSIM distribution.
    double p10 = 0.0, p50 = 0.0, p90 = 0.0;
};

// Exhaustive best-SSIM search of every query against the corpus; ties go to
// the lowest corpus index.
RetrievalReport retrieve_nearest(const std::vector<SemanticGrid>& queries,
                                 const std::vector<SemanticGrid>& corpus);

} // namespace voxdiff
