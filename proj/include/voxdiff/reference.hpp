#pragma once

// Serial mirrors of every OpenMP kernel in the main library. Each function
// reproduces its parallel counterpart bit for bit; tests diff the two paths
// and the benchmark tool times them side by side.

#include "voxdiff/diffusion.hpp"
#include "voxdiff/grid.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/pyramid.hpp"
#include "voxdiff/schedule.hpp"

namespace voxdiff::ref {

SemanticGrid downsample_majority(const SemanticGrid& g, Dims3 target);

SemanticGrid forward_sample(const SemanticGrid& x0, const NoiseSchedule& s, int t,
                            const VoxelRng& rng, uint64_t stream);

SemanticGrid sample_reverse_step(const Field& x0_logits, const SemanticGrid& x_t,
                                 const NoiseSchedule& s, int t, const VoxelRng& rng,
                                 uint64_t stream, bool deterministic);

Field saf_upsample(const Field& coarse, Dims3 target, SafMode mode);

double ssim3d(const SemanticGrid& a, const SemanticGrid& b);

double mmd2(const std::vector<FeatureVector>& g, const std::vector<FeatureVector>& r,
            double sigma_sq = 0.0);

} // namespace voxdiff::ref
