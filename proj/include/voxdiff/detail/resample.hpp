#pragma once

// Per-voxel resampling arithmetic shared by the parallel SAF kernel and its
// serial mirror; the two paths differ only in loop scheduling.

#include <algorithm>
#include <cmath>
#include <vector>

#include "voxdiff/grid.hpp"
#include "voxdiff/pyramid.hpp"

namespace voxdiff::detail {

// Source taps for one target coordinate along one axis. Trilinear brackets
// the source-center coordinate with weight `frac` on `hi`; nearest collapses
// to lo == hi.
struct AxisTap {
    int lo = 0, hi = 0;
    double frac = 0;
};

inline std::vector<AxisTap> axis_taps(int src, int dst, SafMode mode) {
    std::vector<AxisTap> taps(static_cast<size_t>(dst));
    for (int i = 0; i < dst; ++i) {
        double center = (double(i) + 0.5) * double(src) / double(dst);
        if (mode == SafMode::kNearest) {
            int j = int(std::floor(center));
            j = std::min(std::max(j, 0), src - 1);
            taps[size_t(i)] = AxisTap{j, j, 0.0};
        } else {
            double coord = center - 0.5;
            double f = std::floor(coord);
            int lo = int(f);
            double frac = coord - f;
            int hi = lo + 1;
            lo = std::min(std::max(lo, 0), src - 1);
            hi = std::min(std::max(hi, 0), src - 1);
            taps[size_t(i)] = AxisTap{lo, hi, frac};
        }
    }
    return taps;
}

// Blend all channels of one target voxel from the eight bracketing source
// rows. Blending runs in double and is truncated to float once at the end.
inline void blend_voxel(const Field& src, const AxisTap& ax, const AxisTap& ay,
                        const AxisTap& az, float* dst) {
    auto src_row = [&](int sx, int sy, int sz) {
        return src.row(int64_t(sx) + int64_t(src.dims.h) * (int64_t(sy) + int64_t(src.dims.w) * sz));
    };
    const float* r000 = src_row(ax.lo, ay.lo, az.lo);
    const float* r100 = src_row(ax.hi, ay.lo, az.lo);
    const float* r010 = src_row(ax.lo, ay.hi, az.lo);
    const float* r110 = src_row(ax.hi, ay.hi, az.lo);
    const float* r001 = src_row(ax.lo, ay.lo, az.hi);
    const float* r101 = src_row(ax.hi, ay.lo, az.hi);
    const float* r011 = src_row(ax.lo, ay.hi, az.hi);
    const float* r111 = src_row(ax.hi, ay.hi, az.hi);
    for (int c = 0; c < src.channels; ++c) {
        double x00 = r000[c] + ax.frac * (double(r100[c]) - r000[c]);
        double x10 = r010[c] + ax.frac * (double(r110[c]) - r010[c]);
        double x01 = r001[c] + ax.frac * (double(r101[c]) - r001[c]);
        double x11 = r011[c] + ax.frac * (double(r111[c]) - r011[c]);
        double y0 = x00 + ay.frac * (x10 - x00);
        double y1 = x01 + ay.frac * (x11 - x01);
        dst[c] = float(y0 + az.frac * (y1 - y0));
    }
}

// Majority vote over one pooling block; ties keep the lowest class index.
inline uint8_t majority_block(const SemanticGrid& g, int tx, int ty, int tz, int fx, int fy,
                              int fz) {
    int count[kMaxClasses] = {};
    for (int dz = 0; dz < fz; ++dz)
        for (int dy = 0; dy < fy; ++dy)
            for (int dx = 0; dx < fx; ++dx)
                ++count[g.at(tx * fx + dx, ty * fy + dy, tz * fz + dz)];
    int best = 0;
    for (int c = 1; c < g.num_classes; ++c)
        if (count[c] > count[best]) best = c;
    return uint8_t(best);
}

} // namespace voxdiff::detail
