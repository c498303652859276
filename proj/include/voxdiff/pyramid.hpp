#pragma once

#include <vector>

#include "voxdiff/grid.hpp"

namespace voxdiff {

// Resampling used to lift a coarse result onto a finer lattice. Voxels are
// treated as cells whose centers sit at (i + 0.5) / extent in each axis
// (align-corners = false); trilinear blends the eight surrounding centers of
// each target center, nearest snaps to the closest one. Arbitrary target
// shapes are allowed, including non-integer ratios.
enum class SafMode { kTrilinear, kNearest };

SafMode saf_mode_from_string(const std::string& name);
const char* to_string(SafMode mode);

// Channel-wise resampling of a field (e.g. one-hot labels) onto `target`.
Field saf_upsample(const Field& coarse, Dims3 target, SafMode mode);

// Label-level convenience: one-hot, resample, argmax (ties -> lowest class).
SemanticGrid upsample_labels(const SemanticGrid& g, Dims3 target, SafMode mode);

// Ladder of scales from coarsest to finest. Each scale must divide the next
// one axis-wise so that majority pooling between adjacent levels is exact.
struct PyramidSpec {
    std::vector<Dims3> scales;

    int levels() const { return int(scales.size()); }
};

void validate_pyramid(const PyramidSpec& spec);

// Ground-truth levels for one scene: the finest level is the input itself and
// every coarser level is pooled from the level directly above it. Chaining
// (rather than pooling each level straight from the input) keeps adjacent
// levels consistent with each other, which is what conditioning needs;
// majority votes do not compose across skipped levels.
std::vector<SemanticGrid> build_pyramid(const SemanticGrid& fine, const PyramidSpec& spec);

} // namespace voxdiff
