#include "voxdiff/grid.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "voxdiff/detail/byteio.hpp"
#include "voxdiff/detail/resample.hpp"

namespace voxdiff {

std::string to_string(const Dims3& dims) {
    std::ostringstream os;
    os << dims.h << "x" << dims.w << "x" << dims.d;
    return os.str();
}

SemanticGrid new_grid(Dims3 dims, int num_classes, uint8_t fill_label) {
    SemanticGrid g;
    g.dims = dims;
    g.num_classes = num_classes;
    if (dims.h < 1 || dims.w < 1 || dims.d < 1)
        throw ConfigError("grid dims must be positive, got " + to_string(dims));
    if (num_classes < 1 || num_classes > kMaxClasses)
        throw ConfigError("num_classes must be in [1, 256], got " + std::to_string(num_classes));
    if (fill_label >= num_classes)
        throw ConfigError("fill label " + std::to_string(fill_label) + " out of range for K=" +
                          std::to_string(num_classes));
    g.labels.assign(size_t(dims.voxels()), fill_label);
    return g;
}

void validate_grid(const SemanticGrid& g) {
    if (g.dims.h < 1 || g.dims.w < 1 || g.dims.d < 1)
        throw ConfigError("grid dims must be positive, got " + to_string(g.dims));
    if (g.num_classes < 1 || g.num_classes > kMaxClasses)
        throw ConfigError("num_classes must be in [1, 256], got " + std::to_string(g.num_classes));
    if (int64_t(g.labels.size()) != g.voxels())
        throw ConfigError("label buffer holds " + std::to_string(g.labels.size()) +
                          " entries, expected " + std::to_string(g.voxels()));
    for (size_t i = 0; i < g.labels.size(); ++i)
        if (g.labels[i] >= g.num_classes)
            throw ConfigError("label " + std::to_string(g.labels[i]) + " at voxel " +
                              std::to_string(i) + " out of range for K=" +
                              std::to_string(g.num_classes));
}

// ---------------------------------------------------------------------------
// .sgrid serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'G', 'R', 'D'};
constexpr uint16_t kVersion = 1;
constexpr uint16_t kFlagRle = 1;

using detail::get_u16;
using detail::get_u32;
using detail::malformed;
using detail::put_u16;
using detail::put_u32;

} // namespace

SemanticGrid read_sgrid(std::istream& in, const std::string& origin) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        malformed(origin, "not an .sgrid file (bad magic)");
    uint16_t version = get_u16(in, origin);
    if (version != kVersion)
        malformed(origin, "unsupported version " + std::to_string(version));
    uint16_t flags = get_u16(in, origin);
    if (flags & ~kFlagRle)
        malformed(origin, "unknown flag bits " + std::to_string(flags));
    uint32_t h = get_u32(in, origin);
    uint32_t w = get_u32(in, origin);
    uint32_t d = get_u32(in, origin);
    uint16_t num_classes = get_u16(in, origin);
    uint16_t reserved = get_u16(in, origin);
    if (reserved != 0) malformed(origin, "reserved field must be zero");
    if (h == 0 || w == 0 || d == 0) malformed(origin, "zero-sized dimension");
    if (num_classes < 1 || num_classes > kMaxClasses)
        malformed(origin, "num_classes " + std::to_string(num_classes) + " out of range");
    int64_t voxels = int64_t(h) * w * d;
    if (h > (1u << 20) || w > (1u << 20) || d > (1u << 20) || voxels > (int64_t(1) << 31))
        malformed(origin, "volume too large: " + std::to_string(voxels) + " voxels");

    SemanticGrid g;
    g.dims = Dims3{int(h), int(w), int(d)};
    g.num_classes = num_classes;
    g.labels.resize(size_t(voxels));

    if (flags & kFlagRle) {
        int64_t filled = 0;
        int last_label = -1;
        while (filled < voxels) {
            uint32_t count = get_u32(in, origin);
            char label_byte;
            if (!in.read(&label_byte, 1)) malformed(origin, "truncated run");
            uint8_t label = uint8_t(label_byte);
            if (count == 0) malformed(origin, "zero-length run");
            if (label >= num_classes)
                malformed(origin, "run label " + std::to_string(label) + " out of range");
            if (int(label) == last_label)
                malformed(origin, "adjacent runs share label " + std::to_string(label));
            if (filled + count > voxels) malformed(origin, "runs overflow the volume");
            std::memset(g.labels.data() + filled, label, count);
            filled += count;
            last_label = label;
        }
    } else {
        if (!in.read(reinterpret_cast<char*>(g.labels.data()), voxels))
            malformed(origin, "truncated payload");
        for (int64_t i = 0; i < voxels; ++i)
            if (g.labels[size_t(i)] >= num_classes)
                malformed(origin, "label " + std::to_string(g.labels[size_t(i)]) +
                                      " at voxel " + std::to_string(i) + " out of range");
    }
    if (in.peek() != std::istream::traits_type::eof())
        malformed(origin, "trailing bytes after payload");
    return g;
}

void write_sgrid(std::ostream& out, const SemanticGrid& g, bool rle) {
    validate_grid(g);
    out.write(kMagic, 4);
    put_u16(out, kVersion);
    put_u16(out, rle ? kFlagRle : 0);
    put_u32(out, uint32_t(g.dims.h));
    put_u32(out, uint32_t(g.dims.w));
    put_u32(out, uint32_t(g.dims.d));
    put_u16(out, uint16_t(g.num_classes));
    put_u16(out, 0);
    if (!rle) {
        out.write(reinterpret_cast<const char*>(g.labels.data()), g.voxels());
        return;
    }
    // Maximal runs; this is the only encoding the reader accepts, which keeps
    // parse -> write a byte identity.
    int64_t i = 0;
    while (i < g.voxels()) {
        uint8_t label = g.labels[size_t(i)];
        int64_t j = i;
        while (j < g.voxels() && g.labels[size_t(j)] == label) ++j;
        put_u32(out, uint32_t(j - i));
        out.put(char(label));
        i = j;
    }
}

SemanticGrid load_sgrid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open scene file: " + path);
    return read_sgrid(in, path);
}

void save_sgrid(const std::string& path, const SemanticGrid& g, bool rle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot create scene file: " + path);
    write_sgrid(out, g, rle);
    if (!out) throw ConfigError("failed writing scene file: " + path);
}

// ---------------------------------------------------------------------------
// Pooling and cropping
// ---------------------------------------------------------------------------

SemanticGrid downsample_majority(const SemanticGrid& g, Dims3 target) {
    validate_grid(g);
    if (target.h < 1 || target.w < 1 || target.d < 1)
        throw ConfigError("downsample target must be positive, got " + to_string(target));
    if (g.dims.h % target.h || g.dims.w % target.w || g.dims.d % target.d)
        throw ConfigError("downsample target " + to_string(target) +
                          " does not divide source " + to_string(g.dims));
    int fx = g.dims.h / target.h, fy = g.dims.w / target.w, fz = g.dims.d / target.d;
    SemanticGrid out = new_grid(target, g.num_classes);
    int64_t n = target.voxels();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 4096)
#endif
    for (int64_t v = 0; v < n; ++v) {
        int tx = int(v % target.h);
        int ty = int((v / target.h) % target.w);
        int tz = int(v / (int64_t(target.h) * target.w));
        out.labels[size_t(v)] = detail::majority_block(g, tx, ty, tz, fx, fy, fz);
    }
    return out;
}

SemanticGrid crop(const SemanticGrid& g, int x0, int y0, int z0, Dims3 shape) {
    if (x0 < 0 || y0 < 0 || z0 < 0 || x0 + shape.h > g.dims.h || y0 + shape.w > g.dims.w ||
        z0 + shape.d > g.dims.d)
        throw ConfigError("crop " + to_string(shape) + " at (" + std::to_string(x0) + "," +
                          std::to_string(y0) + "," + std::to_string(z0) + ") exceeds " +
                          to_string(g.dims));
    SemanticGrid out = new_grid(shape, g.num_classes);
    for (int z = 0; z < shape.d; ++z)
        for (int y = 0; y < shape.w; ++y)
            std::memcpy(out.labels.data() + out.index(0, y, z),
                        g.labels.data() + g.index(x0, y0 + y, z0 + z), size_t(shape.h));
    return out;
}

} // namespace voxdiff
