#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "voxdiff/dataset.hpp"
#include "voxdiff/errors.hpp"
#include "voxdiff/export.hpp"

using namespace voxdiff;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("voxdiff_export_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        lines.push_back(line);
    return lines;
}

} // namespace

TEST_CASE("ply export writes one vertex per occupied voxel") {
    ToySceneConfig cfg;
    cfg.seed = 21;
    SemanticGrid g = generate_toy_scenes(cfg, 1)[0];

    std::ostringstream out;
    write_ply(out, g);
    std::vector<std::string> lines = lines_of(out.str());

    int64_t occupied = occupied_voxels(g);
    REQUIRE(occupied > 0);
    CHECK(lines[0] == "ply");
    CHECK(lines[1] == "format ascii 1.0");
    CHECK(lines[2] == "element vertex " + std::to_string(occupied));

    size_t header_end = 0;
    while (header_end < lines.size() && lines[header_end] != "end_header")
        ++header_end;
    REQUIRE(header_end < lines.size());
    CHECK(int64_t(lines.size()) - int64_t(header_end) - 1 == occupied);

    SUBCASE("every vertex carries its voxel's coordinates, palette color, and label") {
        bool all_match = true;
        size_t row = header_end + 1;
        for (int z = 0; z < g.dims.d; ++z)
            for (int y = 0; y < g.dims.w; ++y)
                for (int x = 0; x < g.dims.h; ++x) {
                    int l = g.at(x, y, z);
                    if (l == 0)
                        continue;
                    std::array<uint8_t, 3> c = class_color(l);
                    std::ostringstream want;
                    want << x << ' ' << y << ' ' << z << ' ' << int(c[0]) << ' ' << int(c[1])
                         << ' ' << int(c[2]) << ' ' << l;
                    all_match = all_match && lines[row++] == want.str();
                }
        CHECK(all_match);
        CHECK(row == lines.size());
    }
}

TEST_CASE("an all-air grid exports an empty ply") {
    SemanticGrid g = new_grid({3, 3, 2}, 4);
    std::ostringstream out;
    write_ply(out, g);
    std::vector<std::string> lines = lines_of(out.str());
    CHECK(lines[2] == "element vertex 0");
    CHECK(lines.back() == "end_header");
}

TEST_CASE("the palette is stable and cycles past its end") {
    CHECK(class_color(1) == class_color(1));
    CHECK(class_color(0) != class_color(1));
    CHECK(class_color(24) == class_color(0));
    CHECK(class_color(25) == class_color(1));
    CHECK_THROWS_AS(class_color(-1), ConfigError);
}

TEST_CASE("slice csv files hold raw label matrices") {
    TempDir td;
    SemanticGrid g = new_grid({3, 2, 2}, 5);
    // z = 0: rows y of labels along x.
    g.set(0, 0, 0, 1);
    g.set(1, 0, 0, 2);
    g.set(2, 0, 0, 3);
    g.set(0, 1, 0, 4);
    // z = 1 stays all zero.
    std::vector<std::string> files = export_slice_csv(td.file("scene"), g);
    REQUIRE(files.size() == 2);
    CHECK(files[0] == td.file("scene_z0.csv"));
    CHECK(files[1] == td.file("scene_z1.csv"));

    std::ifstream z0(files[0]);
    std::string line;
    std::getline(z0, line);
    CHECK(line == "1,2,3");
    std::getline(z0, line);
    CHECK(line == "4,0,0");
    CHECK(!std::getline(z0, line));

    std::ifstream z1(files[1]);
    std::getline(z1, line);
    CHECK(line == "0,0,0");
    std::getline(z1, line);
    CHECK(line == "0,0,0");
}

TEST_CASE("export file errors are config errors") {
    SemanticGrid g = new_grid({2, 2, 1}, 3, 1);
    CHECK_THROWS_AS(export_ply("/nonexistent-dir/x.ply", g), ConfigError);
    CHECK_THROWS_AS(export_slice_csv("/nonexistent-dir/x", g), ConfigError);
}
