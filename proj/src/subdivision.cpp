#include "voxdiff/subdivision.hpp"

#include <cmath>

namespace voxdiff {

namespace {

int tile_extent(int parent, int parts, double overlap) {
    int e = int(std::ceil((1.0 + overlap) * double(parent) / double(parts)));
    return std::min(parent, e);
}

int tile_origin(int index, int parts, int parent, int extent) {
    if (parts == 1) return 0;
    return int(std::lround(double(index) * double(parent - extent) / double(parts - 1)));
}

void check_placement(Dims3 parent, int num_classes,
                     const std::vector<std::pair<Tile, const SemanticGrid*>>& placed) {
    for (const auto& [tile, grid] : placed) {
        if (!grid) throw ConfigError("fuse: missing sub-scene");
        if (!(grid->dims == tile.dims))
            throw ConfigError("fuse: sub-scene dims " + to_string(grid->dims) +
                              " do not match tile dims " + to_string(tile.dims));
        if (grid->num_classes != num_classes)
            throw ConfigError("fuse: sub-scene class count mismatch");
        if (tile.ox < 0 || tile.oy < 0 || tile.ox + tile.dims.h > parent.h ||
            tile.oy + tile.dims.w > parent.w || tile.dims.d != parent.d)
            throw ConfigError("fuse: tile leaves the parent volume");
    }
}

// One-hot rows for known voxels, uniform rows elsewhere, over a window of a
// parent-frame canvas.
Field strip_condition(const KnownCanvas& canvas, Dims3 parent, int num_classes, Tile window) {
    Field cond = new_field<float>(window.dims, num_classes);
    float uniform = 1.0f / float(num_classes);
    for (int z = 0; z < window.dims.d; ++z)
        for (int y = 0; y < window.dims.w; ++y)
            for (int x = 0; x < window.dims.h; ++x) {
                int64_t p = (window.ox + x) +
                            int64_t(parent.h) * ((window.oy + y) + int64_t(parent.w) * z);
                int64_t v = x + int64_t(window.dims.h) * (y + int64_t(window.dims.w) * z);
                float* row = cond.row(v);
                if (canvas.known[size_t(p)]) {
                    row[canvas.labels[size_t(p)]] = 1.0f;
                } else {
                    for (int c = 0; c < num_classes; ++c) row[c] = uniform;
                }
            }
    return cond;
}

void stamp(KnownCanvas& canvas, Dims3 parent, const SemanticGrid& g, int ox, int oy) {
    for (int z = 0; z < g.dims.d; ++z)
        for (int y = 0; y < g.dims.w; ++y)
            for (int x = 0; x < g.dims.h; ++x) {
                int64_t p = (ox + x) + int64_t(parent.h) * ((oy + y) + int64_t(parent.w) * z);
                canvas.labels[size_t(p)] = g.at(x, y, z);
                canvas.known[size_t(p)] = 1;
            }
}

} // namespace

TileLayout make_layout(Dims3 parent, int rows, int cols, double overlap) {
    if (parent.voxels() <= 0) throw ConfigError("tile layout needs a non-empty parent");
    if (rows < 1 || cols < 1) throw ConfigError("tile grid must be at least 1x1");
    if (!(overlap >= 0.0 && overlap < 1.0))
        throw ConfigError("overlap ratio must be in [0, 1), got " + std::to_string(overlap));
    TileLayout layout;
    layout.parent = parent;
    layout.rows = rows;
    layout.cols = cols;
    layout.overlap = overlap;
    int th = tile_extent(parent.h, rows, overlap);
    int tw = tile_extent(parent.w, cols, overlap);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            layout.tiles.push_back(Tile{tile_origin(r, rows, parent.h, th),
                                        tile_origin(c, cols, parent.w, tw),
                                        Dims3{th, tw, parent.d}});
    std::vector<uint8_t> covered(size_t(parent.h) * parent.w, 0);
    for (const Tile& t : layout.tiles)
        for (int y = t.oy; y < t.oy + t.dims.w; ++y)
            for (int x = t.ox; x < t.ox + t.dims.h; ++x)
                covered[size_t(x) + size_t(parent.h) * size_t(y)] = 1;
    for (uint8_t c : covered)
        if (!c) throw ConfigError("tile layout does not cover the parent volume");
    return layout;
}

std::vector<SemanticGrid> split(const SemanticGrid& g, const TileLayout& layout) {
    if (!(g.dims == layout.parent))
        throw ConfigError("layout parent " + to_string(layout.parent) +
                          " does not match grid " + to_string(g.dims));
    std::vector<SemanticGrid> subs;
    subs.reserve(layout.tiles.size());
    for (const Tile& t : layout.tiles) subs.push_back(crop(g, t.ox, t.oy, 0, t.dims));
    return subs;
}

SemanticGrid fuse_at(Dims3 parent, int num_classes,
                     const std::vector<std::pair<Tile, const SemanticGrid*>>& placed) {
    check_placement(parent, num_classes, placed);
    constexpr int kMaxCover = 16;
    // Coverage is constant along z, so validate it on the horizontal plane
    // before the parallel vote.
    std::vector<uint8_t> cover(size_t(parent.h) * size_t(parent.w), 0);
    for (const auto& [tile, grid] : placed) {
        (void)grid;
        for (int y = tile.oy; y < tile.oy + tile.dims.w; ++y)
            for (int x = tile.ox; x < tile.ox + tile.dims.h; ++x)
                ++cover[size_t(x) + size_t(parent.h) * size_t(y)];
    }
    for (uint8_t c : cover) {
        if (c == 0) throw ConfigError("fuse: tiles do not cover the parent volume");
        if (c > kMaxCover) throw ConfigError("fuse: more than 16 tiles overlap");
    }
    SemanticGrid out = new_grid(parent, num_classes);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parent.voxels() > 4096)
#endif
    for (int64_t zy = 0; zy < int64_t(parent.d) * parent.w; ++zy) {
        int z = int(zy / parent.w);
        int y = int(zy % parent.w);
        for (int x = 0; x < parent.h; ++x) {
            uint8_t votes[kMaxCover];
            int n = 0;
            for (const auto& [tile, grid] : placed) {
                if (x < tile.ox || x >= tile.ox + tile.dims.h) continue;
                if (y < tile.oy || y >= tile.oy + tile.dims.w) continue;
                votes[n++] = grid->at(x - tile.ox, y - tile.oy, z);
            }
            // Majority, ties to the earliest (= lowest-index) voter.
            int best = 0, best_count = 0;
            for (int i = 0; i < n; ++i) {
                bool first = true;
                for (int j = 0; j < i; ++j) first = first && votes[j] != votes[i];
                if (!first) continue;
                int count = 0;
                for (int j = 0; j < n; ++j) count += votes[j] == votes[i];
                if (count > best_count) {
                    best_count = count;
                    best = votes[i];
                }
            }
            out.labels[size_t(x + int64_t(parent.h) * (y + int64_t(parent.w) * z))] =
                uint8_t(best);
        }
    }
    return out;
}

SemanticGrid fuse(const std::vector<SemanticGrid>& subs, const TileLayout& layout) {
    if (subs.size() != layout.tiles.size())
        throw ConfigError("fuse: layout has " + std::to_string(layout.tiles.size()) +
                          " tiles but " + std::to_string(subs.size()) + " sub-scenes given");
    if (subs.empty()) throw ConfigError("fuse: no sub-scenes");
    std::vector<std::pair<Tile, const SemanticGrid*>> placed;
    placed.reserve(subs.size());
    for (size_t i = 0; i < subs.size(); ++i) placed.emplace_back(layout.tiles[i], &subs[i]);
    return fuse_at(layout.parent, subs[0].num_classes, placed);
}

SemanticGrid generate_subdivided(Denoiser& model, const NoiseSchedule& schedule,
                                 const SemanticGrid& coarse, const TileLayout& layout,
                                 SafMode mode, bool deterministic, const VoxelRng& rng,
                                 const SubdivideContext& ctx) {
    int num_classes = model.num_classes();
    if (model.condition_channels() != 2 * num_classes)
        throw ConfigError("subdivision needs a model conditioned on " +
                          std::to_string(2 * num_classes) + " channels, got " +
                          std::to_string(model.condition_channels()));
    if (coarse.num_classes != num_classes)
        throw ConfigError("coarse scene class count does not match the model");
    Field coarse_cond = saf_upsample(one_hot(coarse), layout.parent, mode);

    KnownCanvas canvas;
    if (ctx.seed) {
        if (int64_t(ctx.seed->labels.size()) != layout.parent.voxels() ||
            int64_t(ctx.seed->known.size()) != layout.parent.voxels())
            throw ConfigError("known-canvas size does not match the parent volume");
        canvas = *ctx.seed;
    } else {
        canvas.labels.assign(size_t(layout.parent.voxels()), 0);
        canvas.known.assign(size_t(layout.parent.voxels()), 0);
    }

    std::vector<SemanticGrid> subs;
    subs.reserve(layout.tiles.size());
    for (size_t i = 0; i < layout.tiles.size(); ++i) {
        const Tile& tile = layout.tiles[i];
        Field cond = new_field<float>(tile.dims, 2 * num_classes);
        Field overlap = strip_condition(canvas, layout.parent, num_classes, tile);
        for (int z = 0; z < tile.dims.d; ++z)
            for (int y = 0; y < tile.dims.w; ++y)
                for (int x = 0; x < tile.dims.h; ++x) {
                    int64_t p = (tile.ox + x) +
                                int64_t(layout.parent.h) *
                                    ((tile.oy + y) + int64_t(layout.parent.w) * z);
                    int64_t v = x + int64_t(tile.dims.h) * (y + int64_t(tile.dims.w) * z);
                    float* row = cond.row(v);
                    const float* saf = coarse_cond.row(p);
                    const float* ov = overlap.row(v);
                    for (int c = 0; c < num_classes; ++c) row[c] = saf[c];
                    for (int c = 0; c < num_classes; ++c) row[num_classes + c] = ov[c];
                }
        if (ctx.probe)
            ctx.probe->records.push_back(
                ProbeRecord{int(ctx.scale_tag), ctx.tile_base + i,
                            Tile{ctx.ox + tile.ox, ctx.oy + tile.oy, tile.dims}, cond});
        SemanticGrid out =
            reverse_chain(model, schedule, tile.dims, &cond, deterministic, rng, ctx.scale_tag,
                          ctx.tile_base + i, ctx.ox + tile.ox, ctx.oy + tile.oy, ctx.oz);
        stamp(canvas, layout.parent, out, tile.ox, tile.oy);
        if (ctx.probe)
            ctx.probe->outputs.push_back(
                OutputRecord{int(ctx.scale_tag), ctx.tile_base + i,
                             Tile{ctx.ox + tile.ox, ctx.oy + tile.oy, tile.dims}, out});
        subs.push_back(std::move(out));
    }
    if (ctx.canvas_out) *ctx.canvas_out = std::move(canvas);
    return fuse(subs, layout);
}

GenerateResult generate_tiled(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid,
                              const NoiseSchedule& schedule, int rows, int cols, double overlap,
                              const GenerateOptions& opt, const VoxelRng& rng,
                              ConditionProbe* probe) {
    check_pyramid_models(models, pyramid);
    int levels = int(pyramid.scales.size());
    if (levels < 2)
        throw ConfigError("subdivided generation needs a coarser scale to condition on");

    GenerateResult res;
    SemanticGrid prev;
    if (opt.start_from_scale == levels - 1) {
        if (!opt.coarse)
            throw ConfigError("start_from_scale > 0 needs a coarse scene to condition on");
        if (!(opt.coarse->dims == pyramid.scales[size_t(levels - 2)]))
            throw ConfigError("coarse scene dims " + to_string(opt.coarse->dims) +
                              " do not match scale " + std::to_string(levels - 2) + " dims " +
                              to_string(pyramid.scales[size_t(levels - 2)]));
        prev = *opt.coarse;
    } else {
        PyramidSpec head;
        head.scales.assign(pyramid.scales.begin(), pyramid.scales.end() - 1);
        std::vector<Denoiser*> head_models(models.begin(), models.end() - 1);
        GenerateOptions head_opt = opt;
        head_opt.keep_intermediate = true;
        GenerateResult mid = generate(head_models, head, schedule, head_opt, rng);
        prev = std::move(mid.scene);
        if (opt.keep_intermediate) res.per_scale = std::move(mid.per_scale);
    }

    TileLayout layout = make_layout(pyramid.scales.back(), rows, cols, overlap);
    SubdivideContext ctx;
    ctx.scale_tag = uint64_t(levels - 1);
    ctx.probe = probe;
    res.scene = generate_subdivided(*models.back(), schedule, prev, layout, opt.saf_mode,
                                    opt.deterministic, rng, ctx);
    if (opt.keep_intermediate) res.per_scale.push_back(res.scene);
    return res;
}

SemanticGrid generate_infinite(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid,
                               const NoiseSchedule& schedule, const InfiniteOptions& opt,
                               const VoxelRng& rng, ConditionProbe* probe) {
    int num_classes = check_pyramid_models(models, pyramid);
    if (opt.rows < 1 || opt.cols < 1) throw ConfigError("infinite extent must be at least 1x1");
    if (!(opt.strip_overlap >= 0.0 && opt.strip_overlap < 1.0))
        throw ConfigError("strip overlap must be in [0, 1)");
    int levels = int(pyramid.scales.size());
    if (levels < 2)
        throw ConfigError("infinite generation needs at least two scales");

    // Per-scale canvas geometry: tiles of the scale's dims, neighbours offset
    // by (dim - strip) so adjacent tiles share a strip of the given fraction.
    std::vector<Dims3> canvas_dims(static_cast<size_t>(levels));
    std::vector<int> strip_h(static_cast<size_t>(levels));
    std::vector<int> strip_w(static_cast<size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        Dims3 d = pyramid.scales[size_t(l)];
        strip_h[size_t(l)] = int(std::lround(opt.strip_overlap * double(d.h)));
        strip_w[size_t(l)] = int(std::lround(opt.strip_overlap * double(d.w)));
        canvas_dims[size_t(l)] = Dims3{d.h + (opt.rows - 1) * (d.h - strip_h[size_t(l)]),
                                       d.w + (opt.cols - 1) * (d.w - strip_w[size_t(l)]), d.d};
    }
    std::vector<KnownCanvas> canvases(static_cast<size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        canvases[size_t(l)].labels.assign(size_t(canvas_dims[size_t(l)].voxels()), 0);
        canvases[size_t(l)].known.assign(size_t(canvas_dims[size_t(l)].voxels()), 0);
    }

    std::vector<SemanticGrid> top_grids;
    std::vector<Tile> top_tiles;
    for (int s = 0; s < opt.rows * opt.cols; ++s) {
        int r = s / opt.cols, c = s % opt.cols;
        SemanticGrid prev;
        for (int l = 0; l < levels; ++l) {
            Dims3 dims = pyramid.scales[size_t(l)];
            Tile window{r * (dims.h - strip_h[size_t(l)]), c * (dims.w - strip_w[size_t(l)]),
                        dims};
            uint64_t tile_tag = uint64_t(s) << 16;
            SemanticGrid out;
            if (l == levels - 1) {
                TileLayout sub =
                    make_layout(dims, opt.sub_rows, opt.sub_cols, opt.sub_overlap);
                KnownCanvas seed;
                seed.labels.assign(size_t(dims.voxels()), 0);
                seed.known.assign(size_t(dims.voxels()), 0);
                const KnownCanvas& canvas = canvases[size_t(l)];
                Dims3 cd = canvas_dims[size_t(l)];
                for (int z = 0; z < dims.d; ++z)
                    for (int y = 0; y < dims.w; ++y)
                        for (int x = 0; x < dims.h; ++x) {
                            int64_t p = (window.ox + x) +
                                        int64_t(cd.h) * ((window.oy + y) + int64_t(cd.w) * z);
                            int64_t v = x + int64_t(dims.h) * (y + int64_t(dims.w) * z);
                            seed.labels[size_t(v)] = canvas.labels[size_t(p)];
                            seed.known[size_t(v)] = canvas.known[size_t(p)];
                        }
                SubdivideContext ctx;
                ctx.scale_tag = uint64_t(l);
                ctx.tile_base = tile_tag;
                ctx.ox = window.ox;
                ctx.oy = window.oy;
                ctx.seed = &seed;
                KnownCanvas local_final;
                ctx.canvas_out = &local_final;
                ctx.probe = probe;
                out = generate_subdivided(*models[size_t(l)], schedule, prev, sub, opt.saf_mode,
                                          opt.deterministic, rng, ctx);
                // Propagate the per-sub-tile label state (not the fused
                // grid), so neighbour strips see exactly what was generated
                // last at each voxel.
                KnownCanvas& global = canvases[size_t(l)];
                for (int z = 0; z < dims.d; ++z)
                    for (int y = 0; y < dims.w; ++y)
                        for (int x = 0; x < dims.h; ++x) {
                            int64_t p = (window.ox + x) +
                                        int64_t(cd.h) * ((window.oy + y) + int64_t(cd.w) * z);
                            int64_t v = x + int64_t(dims.h) * (y + int64_t(dims.w) * z);
                            global.labels[size_t(p)] = local_final.labels[size_t(v)];
                            global.known[size_t(p)] = 1;
                        }
            } else {
                Denoiser& model = *models[size_t(l)];
                Field cond;
                const Field* cond_ptr = nullptr;
                Field strips =
                    strip_condition(canvases[size_t(l)], canvas_dims[size_t(l)], num_classes,
                                    window);
                if (l == 0) {
                    if (model.condition_channels() == num_classes) {
                        cond = std::move(strips);
                        cond_ptr = &cond;
                    } else if (model.condition_channels() != 0) {
                        throw ConfigError("scale-0 model must take 0 or K condition channels");
                    }
                } else {
                    Field saf = saf_upsample(one_hot(prev), dims, opt.saf_mode);
                    if (model.condition_channels() == 2 * num_classes) {
                        cond = new_field<float>(dims, 2 * num_classes);
                        for (int64_t v = 0; v < dims.voxels(); ++v) {
                            float* row = cond.row(v);
                            const float* sf = saf.row(v);
                            const float* st = strips.row(v);
                            for (int k = 0; k < num_classes; ++k) row[k] = sf[k];
                            for (int k = 0; k < num_classes; ++k) row[num_classes + k] = st[k];
                        }
                    } else if (model.condition_channels() == num_classes) {
                        cond = std::move(saf);
                    } else {
                        throw ConfigError(
                            "scale " + std::to_string(l) +
                            " model must take K or 2K condition channels for infinite mode");
                    }
                    cond_ptr = &cond;
                }
                if (probe && cond_ptr)
                    probe->records.push_back(ProbeRecord{l, tile_tag, window, *cond_ptr});
                out = reverse_chain(model, schedule, dims, cond_ptr, opt.deterministic, rng,
                                    uint64_t(l), tile_tag, window.ox, window.oy, 0);
                if (probe) probe->outputs.push_back(OutputRecord{l, tile_tag, window, out});
            }
            if (l == levels - 1) {
                top_grids.push_back(out);
                top_tiles.push_back(window);
            } else {
                stamp(canvases[size_t(l)], canvas_dims[size_t(l)], out, window.ox, window.oy);
            }
            prev = std::move(out);
        }
    }

    std::vector<std::pair<Tile, const SemanticGrid*>> placed;
    placed.reserve(top_grids.size());
    for (size_t i = 0; i < top_grids.size(); ++i)
        placed.emplace_back(top_tiles[i], &top_grids[i]);
    return fuse_at(canvas_dims[size_t(levels - 1)], num_classes, placed);
}

} // namespace voxdiff
