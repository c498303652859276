#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "voxdiff/errors.hpp"

namespace voxdiff {

constexpr int kMaxClasses = 256;

struct Dims3 {
    int h = 0; // x extent
    int w = 0; // y extent
    int d = 0; // z extent

    int64_t voxels() const { return int64_t(h) * w * d; }
    bool operator==(const Dims3&) const = default;
};

std::string to_string(const Dims3& dims);

// Dense semantic voxel volume over labels [0, K). Storage order is x-fastest:
// linear index = x + h*(y + w*z). Plain value type; copy freely.
struct SemanticGrid {
    Dims3 dims;
    int num_classes = 0;
    std::vector<uint8_t> labels; // dims.voxels() entries

    int64_t voxels() const { return dims.voxels(); }

    int64_t index(int x, int y, int z) const {
        return int64_t(x) + int64_t(dims.h) * (int64_t(y) + int64_t(dims.w) * z);
    }
    uint8_t at(int x, int y, int z) const { return labels[index(x, y, z)]; }
    void set(int x, int y, int z, uint8_t v) { labels[index(x, y, z)] = v; }
};

// Construct a grid filled with one label; validates shape and label range.
SemanticGrid new_grid(Dims3 dims, int num_classes, uint8_t fill_label = 0);

// Throws ConfigError unless dims are positive, K is in [2, 256], the label
// buffer has the right size, and every label is < K.
void validate_grid(const SemanticGrid& g);

// Class names plus the index excluded from quality metrics (-1 for none).
struct LabelSpec {
    std::vector<std::string> names;
    int ignore_index = -1;

    int num_classes() const { return int(names.size()); }
};

// Per-voxel channel rows: values[voxel*channels + c]. Spatial order matches
// SemanticGrid so voxel <-> row is the identity.
template <typename T>
struct FieldT {
    Dims3 dims;
    int channels = 0;
    std::vector<T> values;

    int64_t voxels() const { return dims.voxels(); }
    T* row(int64_t voxel) { return values.data() + voxel * channels; }
    const T* row(int64_t voxel) const { return values.data() + voxel * channels; }
};

using Field = FieldT<float>;
using FieldD = FieldT<double>;

template <typename T>
FieldT<T> new_field(Dims3 dims, int channels, T fill = T(0)) {
    FieldT<T> f;
    f.dims = dims;
    f.channels = channels;
    f.values.assign(size_t(dims.voxels()) * channels, fill);
    return f;
}

// One-hot expansion of the labels into a K-channel field.
template <typename T>
FieldT<T> one_hot_field(const SemanticGrid& g) {
    FieldT<T> f = new_field<T>(g.dims, g.num_classes);
    for (int64_t v = 0; v < g.voxels(); ++v) f.values[v * g.num_classes + g.labels[v]] = T(1);
    return f;
}
inline Field one_hot(const SemanticGrid& g) { return one_hot_field<float>(g); }

// Per-voxel argmax back to labels; ties go to the lowest class index.
template <typename T>
SemanticGrid argmax_labels(const FieldT<T>& f) {
    SemanticGrid g = new_grid(f.dims, f.channels);
    for (int64_t v = 0; v < f.voxels(); ++v) {
        const T* row = f.row(v);
        int best = 0;
        for (int c = 1; c < f.channels; ++c)
            if (row[c] > row[best]) best = c;
        g.labels[v] = uint8_t(best);
    }
    return g;
}

// ---------------------------------------------------------------------------
// .sgrid container: little-endian header + raw or run-length payload.
//   magic "SGRD" | version u16 = 1 | flags u16 (bit0 = RLE) |
//   h u32 | w u32 | d u32 | num_classes u16 | reserved u16 = 0 | payload
// Raw payload: voxels() label bytes in linear order. RLE payload: a sequence
// of (count u32 > 0, label u8) runs; adjacent runs must differ in label and
// counts must sum to voxels(). Those restrictions make the encoding canonical,
// so writing a parsed file reproduces it byte for byte.
// ---------------------------------------------------------------------------

SemanticGrid read_sgrid(std::istream& in, const std::string& origin = "<stream>");
void write_sgrid(std::ostream& out, const SemanticGrid& g, bool rle);

// Path convenience wrappers. Loading throws MissingArtifactError if the file
// cannot be opened and ConfigError if its contents are malformed.
SemanticGrid load_sgrid(const std::string& path);
void save_sgrid(const std::string& path, const SemanticGrid& g, bool rle = false);

// Majority-vote pooling onto a coarser shape. Every source dimension must be
// an integer multiple of its target; ties pick the lowest class index.
SemanticGrid downsample_majority(const SemanticGrid& g, Dims3 target);

// Crop a sub-box starting at (x0, y0, z0); the box must lie inside the grid.
SemanticGrid crop(const SemanticGrid& g, int x0, int y0, int z0, Dims3 shape);

} // namespace voxdiff
