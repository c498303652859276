#include "voxdiff/export.hpp"

#include <fstream>
#include <ostream>

#include "voxdiff/errors.hpp"

namespace voxdiff {

namespace {

// Distinct hues with class 0 (air/unclassified) a dark gray for the rare
// viewer that renders it anyway.
constexpr std::array<std::array<uint8_t, 3>, 24> kPalette{{
    {60, 60, 60},    // 0
    {70, 70, 220},   // 1
    {190, 153, 153}, // 2
    {250, 170, 160}, // 3
    {220, 20, 60},   // 4
    {153, 153, 153}, // 5
    {128, 64, 128},  // 6
    {81, 0, 81},     // 7
    {244, 35, 232},  // 8
    {107, 142, 35},  // 9
    {0, 0, 142},     // 10
    {102, 102, 156}, // 11
    {220, 220, 0},   // 12
    {70, 130, 180},  // 13
    {255, 140, 0},   // 14
    {0, 200, 200},   // 15
    {150, 100, 100}, // 16
    {180, 165, 180}, // 17
    {250, 128, 114}, // 18
    {145, 170, 100}, // 19
    {230, 150, 140}, // 20
    {0, 60, 100},    // 21
    {110, 190, 160}, // 22
    {170, 120, 50},  // 23
}};

std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError(path + ": cannot create " + std::string(what));
    return out;
}

} // namespace

std::array<uint8_t, 3> class_color(int label) {
    if (label < 0)
        throw ConfigError("class_color: negative label");
    return kPalette[size_t(label) % kPalette.size()];
}

int64_t occupied_voxels(const SemanticGrid& g) {
    int64_t n = 0;
    for (uint8_t l : g.labels) n += l != 0;
    return n;
}

void write_ply(std::ostream& out, const SemanticGrid& g) {
    validate_grid(g);
    out << "ply\n"
        << "format ascii 1.0\n"
        << "element vertex " << occupied_voxels(g) << "\n"
        << "property float x\n"
        << "property float y\n"
        << "property float z\n"
        << "property uchar red\n"
        << "property uchar green\n"
        << "property uchar blue\n"
        << "property uchar label\n"
        << "end_header\n";
    for (int z = 0; z < g.dims.d; ++z)
        for (int y = 0; y < g.dims.w; ++y)
            for (int x = 0; x < g.dims.h; ++x) {
                uint8_t l = g.at(x, y, z);
                if (l == 0)
                    continue;
                std::array<uint8_t, 3> c = class_color(l);
                out << x << ' ' << y << ' ' << z << ' ' << int(c[0]) << ' ' << int(c[1])
                    << ' ' << int(c[2]) << ' ' << int(l) << '\n';
            }
    if (!out)
        throw ConfigError("ply export: write failed");
}

void export_ply(const std::string& path, const SemanticGrid& g) {
    std::ofstream out = open_out(path, "PLY file");
    write_ply(out, g);
}

std::vector<std::string> export_slice_csv(const std::string& prefix, const SemanticGrid& g) {
    validate_grid(g);
    std::vector<std::string> paths;
    for (int z = 0; z < g.dims.d; ++z) {
        std::string path = prefix + "_z" + std::to_string(z) + ".csv";
        std::ofstream out = open_out(path, "CSV file");
        for (int y = 0; y < g.dims.w; ++y) {
            for (int x = 0; x < g.dims.h; ++x) {
                if (x)
                    out << ',';
                out << int(g.at(x, y, z));
            }
            out << '\n';
        }
        if (!out)
            throw ConfigError(path + ": write failed");
        paths.push_back(path);
    }
    return paths;
}

} // namespace voxdiff
