#pragma once

// Reverse-mode autodiff over TensorT, sized for the denoiser and nothing
// else: a fixed op set, activations saved by value, no broadcasting rules
// beyond the specific patterns the network uses. Templated on the scalar so
// the whole graph can run in double for finite-difference checks.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "voxdiff/detail/conv.hpp"
#include "voxdiff/tensor.hpp"

namespace voxdiff {

// Sinusoidal step embedding: (sin(t * f_i), cos(t * f_i)) pairs with
// geometrically spaced frequencies f_i = 10000^(-i / (dim/2)).
template <typename T>
std::vector<T> time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dim must be even and >= 2");
    int half = dim / 2;
    std::vector<T> e(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[size_t(i)] = T(std::sin(double(t) * freq));
        e[size_t(half + i)] = T(std::cos(double(t) * freq));
    }
    return e;
}

template <typename T>
class TapeT {
public:
    using Tensor = TensorT<T>;

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    // Leaf owned by the tape (network input). Gradients are tracked so tests
    // can differentiate with respect to inputs too.
    int input(Tensor value) {
        nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, nullptr});
        init_grad(int(nodes_.size()) - 1);
        return int(nodes_.size()) - 1;
    }

    // Leaf referencing external parameter storage; backward accumulates into
    // *grad, which must already have the parameter's shape.
    int param(Tensor* value, Tensor* grad) {
        if (!value || !grad || !value->same_shape(*grad))
            throw ConfigError("tape param needs matching value/grad tensors");
        nodes_.push_back(Node{Tensor{}, Tensor{}, value, grad});
        return int(nodes_.size()) - 1;
    }

    const Tensor& value(int id) const { return nodes_[size_t(id)].ext_value
                                                   ? *nodes_[size_t(id)].ext_value
                                                   : nodes_[size_t(id)].value; }
    Tensor& grad(int id) {
        Node& nd = nodes_[size_t(id)];
        return nd.ext_grad ? *nd.ext_grad : nd.grad;
    }

    // ------------------------------------------------------------------
    // Ops
    // ------------------------------------------------------------------

    int conv3d(int x_id, int w_id, int b_id) {
        const Tensor& x = value(x_id);
        const Tensor& wgt = value(w_id);
        const Tensor& bias = value(b_id);
        if (wgt.h != wgt.w || wgt.h != wgt.d || wgt.h % 2 == 0)
            throw ConfigError("conv3d kernel must be cubic with odd size, got " +
                              wgt.shape_string());
        if (wgt.c != x.c)
            throw ConfigError("conv3d expects " + std::to_string(wgt.c) + " input channels, got " +
                              std::to_string(x.c));
        if (bias.n != 1 || bias.c != wgt.n || bias.spatial() != 1)
            throw ConfigError("conv3d bias must be (1, out_channels, 1, 1, 1)");
        Tensor out = Tensor::zeros(x.n, wgt.n, x.h, x.w, x.d);
        int64_t planes = int64_t(x.n) * wgt.n;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (planes * out.spatial() > 8192)
#endif
        for (int64_t pl = 0; pl < planes; ++pl)
            detail::conv3d_plane_forward(x, wgt, &bias, int(pl / wgt.n), int(pl % wgt.n), out);
        int out_id = push(std::move(out));
        record([this, x_id, w_id, b_id, out_id] {
            const Tensor& xv = value(x_id);
            const Tensor& wv = value(w_id);
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            Tensor& gw = grad(w_id);
            Tensor& gb = grad(b_id);
            int64_t in_planes = int64_t(xv.n) * xv.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_planes * xv.spatial() > 8192)
#endif
            for (int64_t pl = 0; pl < in_planes; ++pl)
                detail::conv3d_plane_backward_input(go, wv, int(pl / xv.c), int(pl % xv.c), gx);
            int64_t pairs = int64_t(wv.n) * wv.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (pairs > 4)
#endif
            for (int64_t pr = 0; pr < pairs; ++pr)
                detail::conv3d_pair_backward_weight(go, xv, int(pr / wv.c), int(pr % wv.c), gw);
            for (int oc = 0; oc < wv.n; ++oc) {
                T acc = 0;
                for (int bn = 0; bn < xv.n; ++bn) {
                    const T* g = go.v.data() + go.plane(bn, oc);
                    for (int64_t i = 0; i < go.spatial(); ++i) acc += g[i];
                }
                gb.v[size_t(oc)] += acc;
            }
        });
        return out_id;
    }

    int relu(int x_id) {
        const Tensor& x = value(x_id);
        Tensor out = x;
        for (auto& v : out.v) v = v > T(0) ? v : T(0);
        int out_id = push(std::move(out));
        record([this, x_id, out_id] {
            const Tensor& xv = value(x_id);
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            for (size_t i = 0; i < gx.v.size(); ++i)
                if (xv.v[i] > T(0)) gx.v[i] += go.v[i];
        });
        return out_id;
    }

    int add(int a_id, int b_id) {
        const Tensor& a = value(a_id);
        const Tensor& b = value(b_id);
        if (!a.same_shape(b))
            throw ConfigError("add: shapes differ, " + a.shape_string() + " vs " +
                              b.shape_string());
        Tensor out = a;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
        int out_id = push(std::move(out));
        record([this, a_id, b_id, out_id] {
            const Tensor& go = grad(out_id);
            Tensor& ga = grad(a_id);
            Tensor& gb = grad(b_id);
            for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i];
            for (size_t i = 0; i < go.v.size(); ++i) gb.v[i] += go.v[i];
        });
        return out_id;
    }

    // Per-channel y = x * scale_c + shift_c; scale/shift are (1, C, 1, 1, 1).
    int affine(int x_id, int scale_id, int shift_id) {
        const Tensor& x = value(x_id);
        const Tensor& sc = value(scale_id);
        const Tensor& sh = value(shift_id);
        if (sc.n != 1 || sc.c != x.c || sc.spatial() != 1 || !sc.same_shape(sh))
            throw ConfigError("affine: scale/shift must be (1, C, 1, 1, 1) matching x channels");
        Tensor out = Tensor::zeros(x.n, x.c, x.h, x.w, x.d);
        for (int bn = 0; bn < x.n; ++bn)
            for (int bc = 0; bc < x.c; ++bc) {
                const T* xi = x.v.data() + x.plane(bn, bc);
                T* oi = out.v.data() + out.plane(bn, bc);
                T s = sc.v[size_t(bc)], b = sh.v[size_t(bc)];
                for (int64_t i = 0; i < x.spatial(); ++i) oi[i] = xi[i] * s + b;
            }
        int out_id = push(std::move(out));
        record([this, x_id, scale_id, shift_id, out_id] {
            const Tensor& xv = value(x_id);
            const Tensor& sc = value(scale_id);
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            Tensor& gs = grad(scale_id);
            Tensor& gb = grad(shift_id);
            for (int bc = 0; bc < xv.c; ++bc) {
                T s = sc.v[size_t(bc)];
                T acc_s = 0, acc_b = 0;
                for (int bn = 0; bn < xv.n; ++bn) {
                    const T* xi = xv.v.data() + xv.plane(bn, bc);
                    const T* g = go.v.data() + go.plane(bn, bc);
                    T* gxi = gx.v.data() + gx.plane(bn, bc);
                    for (int64_t i = 0; i < xv.spatial(); ++i) {
                        gxi[i] += g[i] * s;
                        acc_s += g[i] * xi[i];
                        acc_b += g[i];
                    }
                }
                gs.v[size_t(bc)] += acc_s;
                gb.v[size_t(bc)] += acc_b;
            }
        });
        return out_id;
    }

    int concat_channels(int a_id, int b_id) {
        const Tensor& a = value(a_id);
        const Tensor& b = value(b_id);
        if (a.n != b.n || a.h != b.h || a.w != b.w || a.d != b.d)
            throw ConfigError("concat: spatial/batch shapes differ, " + a.shape_string() +
                              " vs " + b.shape_string());
        Tensor out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w, a.d);
        for (int bn = 0; bn < a.n; ++bn) {
            for (int bc = 0; bc < a.c; ++bc)
                std::copy_n(a.v.data() + a.plane(bn, bc), a.spatial(),
                            out.v.data() + out.plane(bn, bc));
            for (int bc = 0; bc < b.c; ++bc)
                std::copy_n(b.v.data() + b.plane(bn, bc), b.spatial(),
                            out.v.data() + out.plane(bn, a.c + bc));
        }
        int out_id = push(std::move(out));
        record([this, a_id, b_id, out_id] {
            const Tensor& av = value(a_id);
            const Tensor& bv = value(b_id);
            const Tensor& go = grad(out_id);
            Tensor& ga = grad(a_id);
            Tensor& gb = grad(b_id);
            for (int bn = 0; bn < av.n; ++bn) {
                for (int bc = 0; bc < av.c; ++bc) {
                    const T* g = go.v.data() + go.plane(bn, bc);
                    T* gi = ga.v.data() + ga.plane(bn, bc);
                    for (int64_t i = 0; i < av.spatial(); ++i) gi[i] += g[i];
                }
                for (int bc = 0; bc < bv.c; ++bc) {
                    const T* g = go.v.data() + go.plane(bn, av.c + bc);
                    T* gi = gb.v.data() + gb.plane(bn, bc);
                    for (int64_t i = 0; i < bv.spatial(); ++i) gi[i] += g[i];
                }
            }
        });
        return out_id;
    }

    // Halve every spatial extent by averaging 2x2x2 blocks.
    int avg_pool2(int x_id) {
        const Tensor& x = value(x_id);
        if (x.h % 2 || x.w % 2 || x.d % 2)
            throw ConfigError("avg_pool2: extents must be even, got " + x.shape_string());
        Tensor out = Tensor::zeros(x.n, x.c, x.h / 2, x.w / 2, x.d / 2);
        for (int bn = 0; bn < x.n; ++bn)
            for (int bc = 0; bc < x.c; ++bc)
                for (int z = 0; z < out.d; ++z)
                    for (int y = 0; y < out.w; ++y)
                        for (int xx = 0; xx < out.h; ++xx) {
                            T acc = 0;
                            for (int dz = 0; dz < 2; ++dz)
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx = 0; dx < 2; ++dx)
                                        acc += x.at(bn, bc, 2 * xx + dx, 2 * y + dy, 2 * z + dz);
                            out.at(bn, bc, xx, y, z) = acc / T(8);
                        }
        int out_id = push(std::move(out));
        record([this, x_id, out_id] {
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            for (int bn = 0; bn < go.n; ++bn)
                for (int bc = 0; bc < go.c; ++bc)
                    for (int z = 0; z < go.d; ++z)
                        for (int y = 0; y < go.w; ++y)
                            for (int xx = 0; xx < go.h; ++xx) {
                                T g = go.at(bn, bc, xx, y, z) / T(8);
                                for (int dz = 0; dz < 2; ++dz)
                                    for (int dy = 0; dy < 2; ++dy)
                                        for (int dx = 0; dx < 2; ++dx)
                                            gx.at(bn, bc, 2 * xx + dx, 2 * y + dy, 2 * z + dz) +=
                                                g;
                            }
        });
        return out_id;
    }

    // Double every spatial extent by repetition.
    int upsample_nearest2(int x_id) {
        const Tensor& x = value(x_id);
        Tensor out = Tensor::zeros(x.n, x.c, 2 * x.h, 2 * x.w, 2 * x.d);
        for (int bn = 0; bn < x.n; ++bn)
            for (int bc = 0; bc < x.c; ++bc)
                for (int z = 0; z < out.d; ++z)
                    for (int y = 0; y < out.w; ++y)
                        for (int xx = 0; xx < out.h; ++xx)
                            out.at(bn, bc, xx, y, z) = x.at(bn, bc, xx / 2, y / 2, z / 2);
        int out_id = push(std::move(out));
        record([this, x_id, out_id] {
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            for (int bn = 0; bn < go.n; ++bn)
                for (int bc = 0; bc < go.c; ++bc)
                    for (int z = 0; z < go.d; ++z)
                        for (int y = 0; y < go.w; ++y)
                            for (int xx = 0; xx < go.h; ++xx)
                                gx.at(bn, bc, xx / 2, y / 2, z / 2) += go.at(bn, bc, xx, y, z);
        });
        return out_id;
    }

    // y(bn, c, p) = x(bn, c, p) + e(bn, c); e is (N, C, 1, 1, 1).
    int broadcast_spatial_add(int x_id, int e_id) {
        const Tensor& x = value(x_id);
        const Tensor& e = value(e_id);
        if (e.n != x.n || e.c != x.c || e.spatial() != 1)
            throw ConfigError("broadcast_spatial_add: embedding must be (N, C, 1, 1, 1)");
        Tensor out = x;
        for (int bn = 0; bn < x.n; ++bn)
            for (int bc = 0; bc < x.c; ++bc) {
                T ev = e.v[size_t(bn * e.c + bc)];
                T* oi = out.v.data() + out.plane(bn, bc);
                for (int64_t i = 0; i < x.spatial(); ++i) oi[i] += ev;
            }
        int out_id = push(std::move(out));
        record([this, x_id, e_id, out_id] {
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            Tensor& ge = grad(e_id);
            for (size_t i = 0; i < go.v.size(); ++i) gx.v[i] += go.v[i];
            for (int bn = 0; bn < go.n; ++bn)
                for (int bc = 0; bc < go.c; ++bc) {
                    const T* g = go.v.data() + go.plane(bn, bc);
                    T acc = 0;
                    for (int64_t i = 0; i < go.spatial(); ++i) acc += g[i];
                    ge.v[size_t(bn * go.c + bc)] += acc;
                }
        });
        return out_id;
    }

    // Mean over batch and voxels of -log softmax_c(x)[label]; labels run in
    // grid linear order within each batch element. Returns a scalar node.
    int softmax_cross_entropy(int x_id, std::vector<uint8_t> labels) {
        const Tensor& x = value(x_id);
        if (int64_t(labels.size()) != int64_t(x.n) * x.spatial())
            throw ConfigError("softmax_cross_entropy: need one label per batch voxel");
        for (uint8_t l : labels)
            if (int(l) >= x.c) throw ConfigError("softmax_cross_entropy: label out of range");
        Tensor probs = Tensor::zeros(x.n, x.c, x.h, x.w, x.d);
        double total = 0.0;
        int64_t count = int64_t(x.n) * x.spatial();
        for (int bn = 0; bn < x.n; ++bn)
            for (int64_t i = 0; i < x.spatial(); ++i) {
                T m = x.v[size_t(x.plane(bn, 0) + i)];
                for (int bc = 1; bc < x.c; ++bc)
                    m = std::max(m, x.v[size_t(x.plane(bn, bc) + i)]);
                double z = 0.0;
                for (int bc = 0; bc < x.c; ++bc)
                    z += std::exp(double(x.v[size_t(x.plane(bn, bc) + i)] - m));
                double logz = std::log(z);
                for (int bc = 0; bc < x.c; ++bc)
                    probs.v[size_t(probs.plane(bn, bc) + i)] =
                        T(std::exp(double(x.v[size_t(x.plane(bn, bc) + i)] - m) - logz));
                int lab = labels[size_t(bn * x.spatial() + i)];
                total -= double(x.v[size_t(x.plane(bn, lab) + i)] - m) - logz;
            }
        Tensor out = Tensor::zeros(1, 1, 1, 1, 1);
        out.v[0] = T(total / double(count));
        int out_id = push(std::move(out));
        record([this, x_id, out_id, probs = std::move(probs), labels = std::move(labels)] {
            const Tensor& go = grad(out_id);
            Tensor& gx = grad(x_id);
            T scale = go.v[0] / T(double(probs.n) * double(probs.spatial()));
            for (int bn = 0; bn < probs.n; ++bn)
                for (int64_t i = 0; i < probs.spatial(); ++i) {
                    int lab = labels[size_t(bn * probs.spatial() + i)];
                    for (int bc = 0; bc < probs.c; ++bc) {
                        T p = probs.v[size_t(probs.plane(bn, bc) + i)];
                        gx.v[size_t(gx.plane(bn, bc) + i)] +=
                            scale * (p - (bc == lab ? T(1) : T(0)));
                    }
                }
        });
        return out_id;
    }

    // Seed the output gradient (default: 1 for scalars) and replay the tape.
    void backward(int out_id, const Tensor* seed = nullptr) {
        Tensor& g = grad(out_id);
        if (seed) {
            if (!seed->same_shape(value(out_id)))
                throw ConfigError("backward: seed shape " + seed->shape_string() +
                                  " does not match output " + value(out_id).shape_string());
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += seed->v[i];
        } else {
            if (value(out_id).size() != 1)
                throw ConfigError("backward: non-scalar output needs an explicit seed");
            g.v[0] += T(1);
        }
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    int num_nodes() const { return int(nodes_.size()); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Tensor* ext_value = nullptr;
        Tensor* ext_grad = nullptr;
    };

    int push(Tensor value) {
        nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, nullptr});
        int id = int(nodes_.size()) - 1;
        init_grad(id);
        return id;
    }

    void init_grad(int id) {
        Node& nd = nodes_[size_t(id)];
        const Tensor& val = nd.ext_value ? *nd.ext_value : nd.value;
        nd.grad = Tensor::zeros(val.n, val.c, val.h, val.w, val.d);
    }

    void record(std::function<void()> op) { ops_.push_back(std::move(op)); }

    std::deque<Node> nodes_;
    std::vector<std::function<void()>> ops_;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

} // namespace voxdiff
