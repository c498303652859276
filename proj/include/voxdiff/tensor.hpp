#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxdiff/errors.hpp"

namespace voxdiff {

// Dense 5-axis tensor (batch, channels, x, y, z) with x fastest, so the
// spatial part of a (batch, channel) plane uses the same linear order as
// SemanticGrid: index = x + h*(y + w*z).
template <typename T>
struct TensorT {
    int n = 0, c = 0, h = 0, w = 0, d = 0;
    std::vector<T> v;

    int64_t spatial() const { return int64_t(h) * w * d; }
    int64_t size() const { return int64_t(n) * c * spatial(); }
    int64_t plane(int bn, int bc) const { return (int64_t(bn) * c + bc) * spatial(); }

    T& at(int bn, int bc, int x, int y, int z) {
        return v[size_t(plane(bn, bc) + x + int64_t(h) * (y + int64_t(w) * z))];
    }
    T at(int bn, int bc, int x, int y, int z) const {
        return v[size_t(plane(bn, bc) + x + int64_t(h) * (y + int64_t(w) * z))];
    }

    bool same_shape(const TensorT& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w && d == o.d;
    }

    std::string shape_string() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
               "," + std::to_string(w) + "," + std::to_string(d) + ")";
    }

    static TensorT zeros(int n, int c, int h, int w, int d) {
        if (n < 1 || c < 1 || h < 1 || w < 1 || d < 1)
            throw ConfigError("tensor dims must be positive");
        TensorT t;
        t.n = n;
        t.c = c;
        t.h = h;
        t.w = w;
        t.d = d;
        t.v.assign(size_t(t.size()), T(0));
        return t;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

} // namespace voxdiff
