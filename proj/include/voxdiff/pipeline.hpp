#pragma once

// Coarse-to-fine generation: an unconditional reverse chain at the coarsest
// scale, then one conditional chain per finer scale, each conditioned on the
// upsampled output of the previous one.

#include <vector>

#include "voxdiff/denoiser.hpp"
#include "voxdiff/diffusion.hpp"
#include "voxdiff/pyramid.hpp"

namespace voxdiff {

struct GenerateOptions {
    int start_from_scale = 0;             // index of the first scale to sample
    const SemanticGrid* coarse = nullptr; // provided scene at the scale before it
    bool deterministic = false;
    bool keep_intermediate = false;       // fill GenerateResult::per_scale
    SafMode saf_mode = SafMode::kTrilinear;
};

struct GenerateResult {
    SemanticGrid scene;                  // finest scale
    std::vector<SemanticGrid> per_scale; // outputs of every generated scale, coarse first
};

// One full T-step reverse chain at fixed dims. `scale` and `tile` separate
// the rng streams of different chains in one run; (ox, oy, oz) locate the
// volume in the scene frame for origin-aware denoisers.
SemanticGrid reverse_chain(Denoiser& model, const NoiseSchedule& schedule, Dims3 dims,
                           const Field* condition, bool deterministic, const VoxelRng& rng,
                           uint64_t scale, uint64_t tile, int ox = 0, int oy = 0, int oz = 0);

// Runs the chain of scales. Model 0 must be unconditioned and every later
// model conditioned on K channels. With start_from_scale > 0 the provided
// coarse scene replaces the outputs of all earlier scales.
GenerateResult generate(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid,
                        const NoiseSchedule& schedule, const GenerateOptions& opt,
                        const VoxelRng& rng);

// Shared validation for the pipeline drivers: every model present, one per
// scale, all with the same class count. Returns K.
int check_pyramid_models(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid);

} // namespace voxdiff
