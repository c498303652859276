#pragma once

// Overlapped tiling of the finest scale: split a scene into sub-scenes,
// generate them autoregressively with overlap conditioning, and fuse by
// voting. The same machinery extends to an unbounded canvas where tile
// edges condition their east/south neighbours.

#include <utility>
#include <vector>

#include "voxdiff/pipeline.hpp"

namespace voxdiff {

struct Tile {
    int ox = 0, oy = 0; // z always spans the full height
    Dims3 dims;
};

struct TileLayout {
    Dims3 parent;
    int rows = 1, cols = 1;
    double overlap = 0.0;
    std::vector<Tile> tiles; // row-major
};

// Tile extents are ceil((1+overlap)*parent/parts) per horizontal axis
// (clamped to the parent), origins spread evenly so the first tile starts at
// 0 and the last ends flush with the parent.
TileLayout make_layout(Dims3 parent, int rows, int cols, double overlap);

std::vector<SemanticGrid> split(const SemanticGrid& g, const TileLayout& layout);

// Majority vote on overlaps; ties go to the lowest-index covering tile.
SemanticGrid fuse(const std::vector<SemanticGrid>& subs, const TileLayout& layout);

// Same fusion over arbitrarily placed windows of a parent volume.
SemanticGrid fuse_at(Dims3 parent, int num_classes,
                     const std::vector<std::pair<Tile, const SemanticGrid*>>& placed);

// Labels already generated elsewhere in the parent frame; voxels with
// known=0 carry no information and condition as a uniform distribution.
struct KnownCanvas {
    std::vector<uint8_t> labels;
    std::vector<uint8_t> known;
};

// Test/debug hook: a copy of every assembled condition volume and every
// chain output, recorded in generation order with windows in the caller's
// frame. Replaying the outputs reconstructs exactly the known-label state
// each condition was assembled from.
struct ProbeRecord {
    int scale = 0;
    uint64_t tile = 0; // rng tile coordinate (scene tile << 16 | sub tile)
    Tile window;       // in the same frame as SubdivideContext origins
    Field condition;
};

struct OutputRecord {
    int scale = 0;
    uint64_t tile = 0;
    Tile window;
    SemanticGrid grid;
};

struct ConditionProbe {
    std::vector<ProbeRecord> records;
    std::vector<OutputRecord> outputs;
};

struct SubdivideContext {
    uint64_t scale_tag = 0;     // rng stream scale coordinate
    uint64_t tile_base = 0;     // rng tile coordinate of sub-tile 0
    int ox = 0, oy = 0, oz = 0; // origin of the parent window in the scene frame
    const KnownCanvas* seed = nullptr; // labels known before the first tile
    KnownCanvas* canvas_out = nullptr; // final known-label state, for callers that stitch
    ConditionProbe* probe = nullptr;
};

// Autoregressive tile generation: tile i is conditioned on the SAF-upsampled
// coarse crop (channels [0, K)) plus one-hot labels of every already-known
// voxel in its window (channels [K, 2K), uniform where unknown), then all
// tiles are fused. The model must accept 2K condition channels.
SemanticGrid generate_subdivided(Denoiser& model, const NoiseSchedule& schedule,
                                 const SemanticGrid& coarse, const TileLayout& layout,
                                 SafMode mode, bool deterministic, const VoxelRng& rng,
                                 const SubdivideContext& ctx = {});

// generate() with the finest scale routed through generate_subdivided.
GenerateResult generate_tiled(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid,
                              const NoiseSchedule& schedule, int rows, int cols, double overlap,
                              const GenerateOptions& opt, const VoxelRng& rng,
                              ConditionProbe* probe = nullptr);

struct InfiniteOptions {
    int rows = 1, cols = 1;      // scene tiles on the canvas
    double strip_overlap = 0.0625; // fraction of a tile shared with a neighbour
    int sub_rows = 2, sub_cols = 2; // finest-scale subdivision inside each tile
    double sub_overlap = 0.0625;
    bool deterministic = false;
    SafMode saf_mode = SafMode::kTrilinear;
};

// Raster-order scene tiles on a canvas where adjacent tiles share an overlap
// strip: each tile's chain at every scale is conditioned on the labels its
// west/north neighbours already generated in that strip (plus the usual SAF
// coarse condition at finer scales), and the finest scale additionally runs
// the sub-tile subdivision. Scale-0 models may declare K condition channels
// (strip conditioning) or 0 (strips ignored); finer models K or 2K.
SemanticGrid generate_infinite(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid,
                               const NoiseSchedule& schedule, const InfiniteOptions& opt,
                               const VoxelRng& rng, ConditionProbe* probe = nullptr);

} // namespace voxdiff
