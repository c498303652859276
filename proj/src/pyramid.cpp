#include "voxdiff/pyramid.hpp"

#include <cmath>
#include <string>

#include "voxdiff/detail/resample.hpp"

namespace voxdiff {

SafMode saf_mode_from_string(const std::string& name) {
    if (name == "trilinear") return SafMode::kTrilinear;
    if (name == "nearest") return SafMode::kNearest;
    throw ConfigError("unknown upsample mode '" + name + "' (trilinear|nearest)");
}

const char* to_string(SafMode mode) {
    return mode == SafMode::kTrilinear ? "trilinear" : "nearest";
}

Field saf_upsample(const Field& coarse, Dims3 target, SafMode mode) {
    if (coarse.dims.h < 1 || coarse.dims.w < 1 || coarse.dims.d < 1 || coarse.channels < 1)
        throw ConfigError("saf_upsample: empty source field");
    if (int64_t(coarse.values.size()) != coarse.voxels() * coarse.channels)
        throw ConfigError("saf_upsample: source buffer size mismatch");
    if (target.h < 1 || target.w < 1 || target.d < 1)
        throw ConfigError("saf_upsample: target must be positive, got " + to_string(target));

    std::vector<detail::AxisTap> tx = detail::axis_taps(coarse.dims.h, target.h, mode);
    std::vector<detail::AxisTap> ty = detail::axis_taps(coarse.dims.w, target.w, mode);
    std::vector<detail::AxisTap> tz = detail::axis_taps(coarse.dims.d, target.d, mode);

    Field out = new_field<float>(target, coarse.channels);
    int64_t n = target.voxels();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 2048)
#endif
    for (int64_t v = 0; v < n; ++v) {
        int x = int(v % target.h);
        int y = int((v / target.h) % target.w);
        int z = int(v / (int64_t(target.h) * target.w));
        detail::blend_voxel(coarse, tx[size_t(x)], ty[size_t(y)], tz[size_t(z)], out.row(v));
    }
    return out;
}

SemanticGrid upsample_labels(const SemanticGrid& g, Dims3 target, SafMode mode) {
    validate_grid(g);
    Field lifted = saf_upsample(one_hot(g), target, mode);
    SemanticGrid out = argmax_labels(lifted);
    out.num_classes = g.num_classes;
    return out;
}

void validate_pyramid(const PyramidSpec& spec) {
    if (spec.scales.empty()) throw ConfigError("pyramid needs at least one scale");
    for (const Dims3& s : spec.scales)
        if (s.h < 1 || s.w < 1 || s.d < 1)
            throw ConfigError("pyramid scale must be positive, got " + to_string(s));
    for (size_t l = 0; l + 1 < spec.scales.size(); ++l) {
        const Dims3& a = spec.scales[l];
        const Dims3& b = spec.scales[l + 1];
        if (b.h < a.h || b.w < a.w || b.d < a.d)
            throw ConfigError("pyramid scales must be non-decreasing");
        if (b.h % a.h || b.w % a.w || b.d % a.d)
            throw ConfigError("pyramid scale " + to_string(a) + " does not divide the next scale " +
                              to_string(b));
    }
}

std::vector<SemanticGrid> build_pyramid(const SemanticGrid& fine, const PyramidSpec& spec) {
    validate_pyramid(spec);
    validate_grid(fine);
    if (!(fine.dims == spec.scales.back()))
        throw ConfigError("scene is " + to_string(fine.dims) + " but the finest pyramid scale is " +
                          to_string(spec.scales.back()));
    std::vector<SemanticGrid> levels(spec.scales.size());
    levels.back() = fine;
    for (int l = int(spec.scales.size()) - 2; l >= 0; --l)
        levels[size_t(l)] = downsample_majority(levels[size_t(l + 1)], spec.scales[size_t(l)]);
    return levels;
}

} // namespace voxdiff
