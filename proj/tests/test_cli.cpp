#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#include "voxdiff/checkpoint.hpp"
#include "voxdiff/dataset.hpp"
#include "voxdiff/grid.hpp"
#include "voxdiff/pyramid.hpp"

using namespace voxdiff;
using nlohmann::json;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("voxdiff_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

struct CmdResult {
    int code = -1;
    std::string out, err;
};

CmdResult run_cli(const TempDir& td, const std::string& args) {
    std::string out = td.file("__stdout.txt"), err = td.file("__stderr.txt");
    std::string cmd = std::string(VOXDIFF_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
    int rc = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

// A two-scale oracle setup: checkpoints that replay a fixed toy scene and its
// majority-pooled coarse level.
struct OracleFixture {
    SemanticGrid fine, coarse;
    std::string config;

    explicit OracleFixture(const TempDir& td, int fine_condition_channels) {
        ToySceneConfig toy;
        toy.dims = {16, 16, 4};
        toy.seed = 99;
        fine = generate_toy_scenes(toy, 1)[0];
        coarse = downsample_majority(fine, {8, 8, 2});
        save_sgrid(td.file("fine.sgrid"), fine);
        save_sgrid(td.file("coarse.sgrid"), coarse);
        save_oracle_model(td.file("m0.vdck"), td.file("fine.sgrid"), 0);
        save_oracle_model(td.file("m1.vdck"), td.file("fine.sgrid"), fine_condition_channels);
        config = td.file("run.json");
        write_text(config, R"({
            "schedule": { "T": 6 },
            "pyramid": { "scales": [[8, 8, 2], [16, 16, 4]], "deterministic": true },
            "paths": { "models": ["m0.vdck", "m1.vdck"] }
        })");
    }
};

} // namespace

TEST_CASE("sample with a fixed seed is byte-identical across runs") {
    TempDir td;
    // Fresh (zero-head) networks emit uniform logits, so stochastic sampling
    // is driven purely by the seed.
    UNetConfig ucfg;
    ucfg.base_channels = 4;
    ucfg.depth = 1;
    ucfg.time_embed_dim = 4;
    save_model(td.file("u0.vdck"), UNet(ucfg, 6, 0, VoxelRng{1}));
    save_model(td.file("u1.vdck"), UNet(ucfg, 6, 6, VoxelRng{2}));
    write_text(td.file("run.json"), R"({
        "schedule": { "T": 4 },
        "pyramid": { "scales": [[8, 8, 2], [16, 16, 4]] },
        "paths": { "models": ["u0.vdck", "u1.vdck"] }
    })");
    std::string config = td.file("run.json");

    CmdResult a = run_cli(td, "--config " + config + " sample --seed 7 --out " +
                                  td.file("a.sgrid"));
    CmdResult b = run_cli(td, "--config " + config + " sample --seed 7 --threads 1 --out " +
                                  td.file("b.sgrid"));
    CAPTURE(a.err);
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    std::string bytes_a = read_file(td.file("a.sgrid"));
    CHECK(!bytes_a.empty());
    CHECK(bytes_a == read_file(td.file("b.sgrid")));

    SUBCASE("a different seed changes the bytes") {
        CmdResult c =
            run_cli(td, "--config " + config + " sample --seed 8 --out " + td.file("c.sgrid"));
        REQUIRE(c.code == 0);
        CHECK(read_file(td.file("c.sgrid")) != bytes_a);
    }
}

TEST_CASE("refine with oracle checkpoints reproduces the oracle scene") {
    TempDir td;
    OracleFixture fx(td, 6);
    CmdResult r = run_cli(td, "--config " + fx.config + " refine --coarse " +
                                  td.file("coarse.sgrid") + " --out " + td.file("refined.sgrid"));
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    SemanticGrid refined = load_sgrid(td.file("refined.sgrid"));
    CHECK(refined.labels == fx.fine.labels);

    SUBCASE("a coarse scene at no pyramid scale is a config error") {
        save_sgrid(td.file("odd.sgrid"), new_grid({5, 5, 2}, 6));
        CmdResult bad = run_cli(td, "--config " + fx.config + " refine --coarse " +
                                        td.file("odd.sgrid") + " --out " + td.file("x.sgrid"));
        CHECK(bad.code == 2);
        CHECK(bad.err.find("run.json") != std::string::npos);
    }
}

TEST_CASE("sample --tiled and infinite run the subdivision paths") {
    TempDir td;
    OracleFixture fx(td, 12); // overlap conditioning: 2K channels
    CmdResult t = run_cli(td, "--config " + fx.config + " sample --tiled --out " +
                                  td.file("tiled.sgrid"));
    CAPTURE(t.err);
    REQUIRE(t.code == 0);
    CHECK(load_sgrid(td.file("tiled.sgrid")).labels == fx.fine.labels);

    // Tiles beyond the base scene need the periodic (wrap) oracle.
    save_oracle_model(td.file("w0.vdck"), td.file("fine.sgrid"), 0, true);
    save_oracle_model(td.file("w1.vdck"), td.file("fine.sgrid"), 12, true);
    write_text(td.file("wrap.json"), R"({
        "schedule": { "T": 6 },
        "pyramid": { "scales": [[8, 8, 2], [16, 16, 4]], "deterministic": true },
        "paths": { "models": ["w0.vdck", "w1.vdck"] }
    })");
    CmdResult i = run_cli(td, "--config " + td.file("wrap.json") +
                                  " infinite --rows 1 --cols 2 --out " + td.file("canvas.sgrid"));
    CAPTURE(i.err);
    REQUIRE(i.code == 0);
    SemanticGrid canvas = load_sgrid(td.file("canvas.sgrid"));
    // One 16-wide tile plus a second sharing a 1-voxel strip (0.0625 * 16).
    CHECK(canvas.dims == Dims3{16, 31, 4});
}

TEST_CASE("eval of a directory against itself is a perfect score") {
    TempDir td;
    ToySceneConfig toy;
    toy.seed = 4;
    std::filesystem::create_directories(td.file("scenes"));
    std::vector<SemanticGrid> scenes = generate_toy_scenes(toy, 5);
    for (size_t i = 0; i < scenes.size(); ++i)
        save_sgrid(td.file("scenes/s" + std::to_string(i) + ".sgrid"), scenes[i]);

    CmdResult r = run_cli(td, "eval --gen " + td.file("scenes") + " --ref " + td.file("scenes") +
                                  " --out " + td.file("report.json"));
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    json report = json::parse(read_file(td.file("report.json")));
    CHECK(report["f3d"].get<double>() == 0.0);
    CHECK(report["mmd2"].get<double>() == 0.0);
    CHECK(report["ssim_percentiles"]["p10"].get<double>() == 1.0);
    CHECK(report["miou"].get<double>() == 1.0);
    CHECK(report["ma"].get<double>() == 1.0);
    CHECK(report["per_class_iou"].is_array());
    json printed = json::parse(r.out);
    CHECK(printed == report);
}

TEST_CASE("retrieve reports the exact match with ssim 1") {
    TempDir td;
    ToySceneConfig toy;
    toy.seed = 8;
    std::filesystem::create_directories(td.file("corpus"));
    std::vector<SemanticGrid> scenes = generate_toy_scenes(toy, 4);
    for (size_t i = 0; i < scenes.size(); ++i)
        save_sgrid(td.file("corpus/c" + std::to_string(i) + ".sgrid"), scenes[i]);
    save_sgrid(td.file("q.sgrid"), scenes[2]);

    CmdResult r = run_cli(td, "retrieve --query " + td.file("q.sgrid") + " --corpus " +
                                  td.file("corpus") + " --out " + td.file("matches.json"));
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    json report = json::parse(read_file(td.file("matches.json")));
    CHECK(report["matches"][0]["match"].get<std::string>() == td.file("corpus/c2.sgrid"));
    CHECK(report["matches"][0]["ssim"].get<double>() == 1.0);
    CHECK(report["p10"].get<double>() == 1.0);
}

TEST_CASE("export writes a ply whose vertex count equals the occupied voxels") {
    TempDir td;
    ToySceneConfig toy;
    toy.seed = 15;
    SemanticGrid g = generate_toy_scenes(toy, 1)[0];
    save_sgrid(td.file("scene.sgrid"), g);

    CmdResult r = run_cli(td, "export --in " + td.file("scene.sgrid") + " --out " +
                                  td.file("scene"));
    CAPTURE(r.err);
    REQUIRE(r.code == 0);

    int64_t occupied = 0;
    for (uint8_t l : g.labels) occupied += l != 0;
    std::string ply = read_file(td.file("scene.ply"));
    CHECK(ply.find("element vertex " + std::to_string(occupied) + "\n") != std::string::npos);
    int64_t points = 0;
    size_t header = ply.find("end_header\n") + 11;
    for (size_t i = header; i < ply.size(); ++i) points += ply[i] == '\n';
    CHECK(points == occupied);
    CHECK(std::filesystem::exists(td.file("scene_z0.csv")));
    CHECK(std::filesystem::exists(td.file("scene_z3.csv")));
}

TEST_CASE("cli failures map to the documented exit codes") {
    TempDir td;
    SUBCASE("missing config file -> 3") {
        CmdResult r = run_cli(td, "--config " + td.file("absent.json") + " sample --out x");
        CHECK(r.code == 3);
        CHECK(r.err.find("absent.json") != std::string::npos);
    }
    SUBCASE("malformed config -> 2, naming the file") {
        write_text(td.file("bad.json"), R"({ "schedule": { "T": -1 } })");
        CmdResult r = run_cli(td, "--config " + td.file("bad.json") + " sample --out x");
        CHECK(r.code == 2);
        CHECK(r.err.find("bad.json") != std::string::npos);
    }
    SUBCASE("missing checkpoint -> 3") {
        write_text(td.file("run.json"),
                   R"({ "paths": { "models": ["gone.vdck"] } })");
        CmdResult r = run_cli(td, "--config " + td.file("run.json") + " sample --out " +
                                      td.file("x.sgrid"));
        CHECK(r.code == 3);
        CHECK(r.err.find("gone.vdck") != std::string::npos);
    }
    SUBCASE("unknown flag -> 2") {
        CmdResult r = run_cli(td, "sample --frobnicate");
        CHECK(r.code == 2);
    }
    SUBCASE("make-toy determinism") {
        CmdResult a = run_cli(td, "make-toy --seed 3 --count 2 --out " + td.file("ta"));
        CmdResult b = run_cli(td, "make-toy --seed 3 --count 2 --out " + td.file("tb"));
        REQUIRE(a.code == 0);
        REQUIRE(b.code == 0);
        CHECK(read_file(td.file("ta/scene_0000.sgrid")) ==
              read_file(td.file("tb/scene_0000.sgrid")));
        CHECK(read_file(td.file("ta/scene_0001.sgrid")) ==
              read_file(td.file("tb/scene_0001.sgrid")));
    }
}

TEST_CASE("preprocess remaps a directory through a preset") {
    TempDir td;
    std::filesystem::create_directories(td.file("raw"));
    SemanticGrid g = new_grid({4, 4, 4}, 256);
    g.labels.assign(g.labels.size(), 40); // road in the lidar label set
    g.set(0, 0, 0, 50);                   // building
    g.set(1, 0, 3, 11);                   // removed class, top layer
    save_sgrid(td.file("raw/a.sgrid"), g);

    CmdResult r = run_cli(td, "preprocess --in " + td.file("raw") + " --out " + td.file("cooked") +
                                  " --preset kitti-to-carla --keep-layers 2");
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    SemanticGrid cooked = load_sgrid(td.file("cooked/a.sgrid"));
    CHECK(cooked.dims == Dims3{4, 4, 2});
    CHECK(cooked.num_classes == 11);
    CHECK(cooked.at(0, 0, 0) == 1); // 50 -> building
    CHECK(cooked.at(1, 0, 0) == 6); // 40 -> road
}
