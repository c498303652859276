#pragma once

// Per-plane 3d convolution arithmetic (stride 1, zero 'same' padding) shared
// by the parallel drivers in autodiff and the serial mirrors in ref. Each
// helper touches exactly one output plane, so drivers can parallelize over
// planes without changing any result.

#include <algorithm>

#include "voxdiff/tensor.hpp"

namespace voxdiff::detail {

// out(bn, oc) := bias[oc] + sum_{ic, taps} w(oc, ic, tap) * x(bn, ic, shifted).
// Weights are shaped (oc, ic, k, k, k); k must be odd.
template <typename T>
void conv3d_plane_forward(const TensorT<T>& x, const TensorT<T>& wgt, const TensorT<T>* bias,
                          int bn, int oc, TensorT<T>& out) {
    int k = wgt.h, pad = k / 2;
    int H = x.h, W = x.w, D = x.d;
    T* o = out.v.data() + out.plane(bn, oc);
    T b = bias ? bias->v[size_t(oc)] : T(0);
    for (int64_t i = 0; i < out.spatial(); ++i) o[i] = b;
    for (int ic = 0; ic < x.c; ++ic) {
        const T* in = x.v.data() + x.plane(bn, ic);
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T wv = wgt.at(oc, ic, kx, ky, kz);
                    if (wv == T(0)) continue;
                    int dx = kx - pad, dy = ky - pad, dz = kz - pad;
                    int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                    int y0 = std::max(0, -dy), y1 = std::min(W, W - dy);
                    int x0 = std::max(0, -dx), x1 = std::min(H, H - dx);
                    for (int z = z0; z < z1; ++z)
                        for (int y = y0; y < y1; ++y) {
                            T* orow = o + int64_t(H) * (y + int64_t(W) * z);
                            const T* irow =
                                in + dx + int64_t(H) * (y + dy + int64_t(W) * (z + dz));
                            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                        }
                }
    }
}

// gx(bn, ic) += sum_{oc, taps} w(oc, ic, tap) * gout(bn, oc, shifted back).
template <typename T>
void conv3d_plane_backward_input(const TensorT<T>& gout, const TensorT<T>& wgt, int bn, int ic,
                                 TensorT<T>& gx) {
    int k = wgt.h, pad = k / 2;
    int H = gx.h, W = gx.w, D = gx.d;
    T* g = gx.v.data() + gx.plane(bn, ic);
    for (int oc = 0; oc < gout.c; ++oc) {
        const T* go = gout.v.data() + gout.plane(bn, oc);
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T wv = wgt.at(oc, ic, kx, ky, kz);
                    if (wv == T(0)) continue;
                    // forward read x[p + dk] into out[p]; reverse scatters the
                    // same pairing, i.e. gx[p + dk] += w * gout[p].
                    int dx = kx - pad, dy = ky - pad, dz = kz - pad;
                    int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                    int y0 = std::max(0, -dy), y1 = std::min(W, W - dy);
                    int x0 = std::max(0, -dx), x1 = std::min(H, H - dx);
                    for (int z = z0; z < z1; ++z)
                        for (int y = y0; y < y1; ++y) {
                            const T* grow = go + int64_t(H) * (y + int64_t(W) * z);
                            T* xrow = g + dx + int64_t(H) * (y + dy + int64_t(W) * (z + dz));
                            for (int xx = x0; xx < x1; ++xx) xrow[xx] += wv * grow[xx];
                        }
                }
    }
}

// gw(oc, ic, :) += sum_{bn, positions} gout(bn, oc, p) * x(bn, ic, p + dk).
template <typename T>
void conv3d_pair_backward_weight(const TensorT<T>& gout, const TensorT<T>& x, int oc, int ic,
                                 TensorT<T>& gw) {
    int k = gw.h, pad = k / 2;
    int H = x.h, W = x.w, D = x.d;
    for (int kz = 0; kz < k; ++kz)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                int dx = kx - pad, dy = ky - pad, dz = kz - pad;
                int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                int y0 = std::max(0, -dy), y1 = std::min(W, W - dy);
                int x0 = std::max(0, -dx), x1 = std::min(H, H - dx);
                T acc = 0;
                for (int bn = 0; bn < x.n; ++bn) {
                    const T* go = gout.v.data() + gout.plane(bn, oc);
                    const T* in = x.v.data() + x.plane(bn, ic);
                    for (int z = z0; z < z1; ++z)
                        for (int y = y0; y < y1; ++y) {
                            const T* grow = go + int64_t(H) * (y + int64_t(W) * z);
                            const T* irow =
                                in + dx + int64_t(H) * (y + dy + int64_t(W) * (z + dz));
                            for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                        }
                }
                gw.at(oc, ic, kx, ky, kz) += acc;
            }
}

} // namespace voxdiff::detail
