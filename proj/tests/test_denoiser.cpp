#include <cstdio>
#include <filesystem>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "voxdiff/checkpoint.hpp"
#include "voxdiff/denoiser.hpp"
#include "voxdiff/diffusion.hpp"

using namespace voxdiff;

namespace {

SemanticGrid checker_grid(Dims3 dims, int num_classes) {
    SemanticGrid g = new_grid(dims, num_classes);
    for (int z = 0; z < dims.d; ++z)
        for (int y = 0; y < dims.w; ++y)
            for (int x = 0; x < dims.h; ++x)
                g.set(x, y, z, uint8_t((x + 2 * y + 3 * z) % num_classes));
    return g;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("voxdiff_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

} // namespace

TEST_CASE("oracle denoiser boosts the true label only") {
    SemanticGrid g = checker_grid({4, 3, 2}, 5);
    OracleDenoiser oracle(g);
    Field x_t = one_hot(g); // contents are ignored by the oracle
    Field logits = oracle.predict_x0_logits(DenoiserInput{&x_t, 3, nullptr});
    REQUIRE(logits.channels == 5);
    REQUIRE(logits.dims == g.dims);
    for (int64_t v = 0; v < g.dims.voxels(); ++v)
        for (int c = 0; c < 5; ++c)
            CHECK(logits.row(v)[c] == (c == g.labels[size_t(v)] ? 10.0f : 0.0f));
}

TEST_CASE("oracle denoiser answers for offset windows") {
    SemanticGrid g = checker_grid({6, 5, 4}, 4);
    OracleDenoiser oracle(g);
    SemanticGrid window = crop(g, 2, 1, 3, {3, 2, 1});
    Field x_t = one_hot(window);
    DenoiserInput in{&x_t, 1, nullptr};
    in.ox = 2;
    in.oy = 1;
    in.oz = 3;
    Field logits = oracle.predict_x0_logits(in);
    for (int64_t v = 0; v < window.dims.voxels(); ++v)
        CHECK(logits.row(v)[window.labels[size_t(v)]] == 10.0f);

    in.ox = 5; // 5 + 3 > 6: window leaves the scene
    CHECK_THROWS_AS((void)oracle.predict_x0_logits(in), ConfigError);
}

TEST_CASE("oracle denoiser wraps when periodic") {
    SemanticGrid g = checker_grid({4, 4, 2}, 3);
    OracleDenoiser oracle(g, 0, /*wrap=*/true);
    SemanticGrid window = new_grid({4, 4, 2}, 3);
    Field x_t = one_hot(window);
    DenoiserInput in{&x_t, 1, nullptr};
    in.ox = 4; // one full period to the east
    in.oy = -4;
    Field logits = oracle.predict_x0_logits(in);
    for (int64_t v = 0; v < g.dims.voxels(); ++v)
        CHECK(logits.row(v)[g.labels[size_t(v)]] == 10.0f);
}

TEST_CASE("fresh unet emits all-zero logits and uniform reverse weights") {
    UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.time_embed_dim = 8;
    UNet net(cfg, 6, 0, VoxelRng{11});
    UNetDenoiser model(std::move(net));
    SemanticGrid g = checker_grid({8, 8, 4}, 6);
    Field x_t = one_hot(g);
    Field logits = model.predict_x0_logits(DenoiserInput{&x_t, 2, nullptr});
    REQUIRE(logits.channels == 6);
    for (float v : logits.values) CHECK(v == 0.0f);
}

TEST_CASE("unet input width: conditioned doubles class channels") {
    UNetConfig cfg;
    cfg.base_channels = 16;
    cfg.depth = 2;
    UNet plain(cfg, 6, 0, VoxelRng{1});
    UNet cond(cfg, 6, 6, VoxelRng{1});
    CHECK(plain.input_channels() == 6);
    CHECK(cond.input_channels() == 12);
    // Only the stem differs in size.
    CHECK(cond.num_parameters() - plain.num_parameters() ==
          int64_t(16) * 6 * 27); // extra stem weights for 6 more input channels
}

TEST_CASE("unet parameter count is a pure function of config") {
    UNetConfig cfg;
    cfg.base_channels = 8;
    cfg.depth = 1;
    cfg.time_embed_dim = 16;
    UNet a(cfg, 4, 4, VoxelRng{3});
    UNet b(cfg, 4, 4, VoxelRng{99});
    CHECK(a.num_parameters() == b.num_parameters());
    REQUIRE(a.params().size() == b.params().size());
    for (size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].name == b.params()[i].name);
        CHECK(a.params()[i].value.same_shape(b.params()[i].value));
    }
}

TEST_CASE("unet init is reproducible for equal seeds and differs across seeds") {
    UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 1;
    cfg.time_embed_dim = 8;
    UNet a(cfg, 3, 0, VoxelRng{42});
    UNet b(cfg, 3, 0, VoxelRng{42});
    UNet c(cfg, 3, 0, VoxelRng{43});
    bool all_equal = true, any_diff_seed = false;
    for (size_t i = 0; i < a.params().size(); ++i) {
        all_equal = all_equal && a.params()[i].value.v == b.params()[i].value.v;
        any_diff_seed = any_diff_seed || a.params()[i].value.v != c.params()[i].value.v;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
}

TEST_CASE("unet forward is deterministic and batch-consistent") {
    UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 1;
    cfg.time_embed_dim = 8;
    UNet net(cfg, 3, 0, VoxelRng{7});
    // Nonzero weights in the head so outputs are informative.
    for (auto& v : net.param("head.w").value.v) v = 0.01f;
    SemanticGrid g = checker_grid({4, 4, 2}, 3);
    Tensor x1 = field_to_tensor(one_hot(g));

    Tape t1;
    int o1 = net.forward(t1, x1, {5});
    Tape t2;
    int o2 = net.forward(t2, x1, {5});
    CHECK(t1.value(o1).v == t2.value(o2).v);

    // Same example twice in one batch with equal timesteps -> equal planes.
    Tensor x2 = Tensor::zeros(2, 3, 4, 4, 2);
    std::copy(x1.v.begin(), x1.v.end(), x2.v.begin());
    std::copy(x1.v.begin(), x1.v.end(), x2.v.begin() + x1.size());
    Tape t3;
    int o3 = net.forward(t3, x2, {5, 5});
    const Tensor& out = t3.value(o3);
    for (int c = 0; c < out.c; ++c)
        for (int64_t i = 0; i < out.spatial(); ++i)
            CHECK(out.v[size_t(out.plane(0, c) + i)] ==
                  out.v[size_t(out.plane(1, c) + i)]);

    // Different timesteps change the output.
    Tape t4;
    int o4 = net.forward(t4, x1, {6});
    CHECK(t4.value(o4).v != t1.value(o1).v);
}

TEST_CASE("unet rejects bad inputs") {
    UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.time_embed_dim = 8;
    UNet net(cfg, 3, 0, VoxelRng{7});
    Tape tape;
    Tensor bad_dims = Tensor::zeros(1, 3, 6, 8, 4); // 6 not divisible by 4
    CHECK_THROWS_AS((void)net.forward(tape, bad_dims, {1}), ConfigError);
    Tensor bad_ch = Tensor::zeros(1, 4, 8, 8, 4);
    CHECK_THROWS_AS((void)net.forward(tape, bad_ch, {1}), ConfigError);
    Tensor ok = Tensor::zeros(2, 3, 8, 8, 4);
    CHECK_THROWS_AS((void)net.forward(tape, ok, {1}), ConfigError); // one t per element
    CHECK_THROWS_AS(UNet(UNetConfig{0, 2, 8}, 3, 0, VoxelRng{0}), ConfigError);
    CHECK_THROWS_AS(UNet(UNetConfig{4, 0, 8}, 3, 0, VoxelRng{0}), ConfigError);
    CHECK_THROWS_AS(UNet(UNetConfig{4, 2, 7}, 3, 0, VoxelRng{0}), ConfigError);
}

TEST_CASE("denoiser input validation") {
    SemanticGrid g = checker_grid({4, 4, 2}, 3);
    OracleDenoiser plain(g);
    OracleDenoiser cond(g, 3);
    Field x_t = one_hot(g);
    Field condition = one_hot(g);
    Field narrow = new_field<float>(g.dims, 2);
    DenoiserInput no_cond{&x_t, 1, nullptr};
    DenoiserInput with_cond{&x_t, 1, &condition};
    CHECK_THROWS_AS((void)plain.predict_x0_logits(with_cond), ConfigError);
    CHECK_THROWS_AS((void)cond.predict_x0_logits(no_cond), ConfigError);
    DenoiserInput bad_ch{&narrow, 1, nullptr};
    CHECK_THROWS_AS((void)plain.predict_x0_logits(bad_ch), ConfigError);
}

TEST_CASE("field/tensor round trip preserves layout") {
    SemanticGrid g = checker_grid({3, 2, 2}, 4);
    Field f = one_hot(g);
    Tensor t = field_to_tensor(f);
    REQUIRE(t.n == 1);
    REQUIRE(t.c == 4);
    CHECK(t.at(0, g.at(2, 1, 1), 2, 1, 1) == 1.0f);
    Field back = tensor_to_field(t);
    CHECK(back.values == f.values);
    Field cond = new_field<float>(g.dims, 2, 0.5f);
    Tensor packed = pack_input_tensor(f, &cond);
    REQUIRE(packed.c == 6);
    CHECK(packed.at(0, 4, 0, 0, 0) == 0.5f);
    CHECK(packed.at(0, g.at(1, 0, 1), 1, 0, 1) == 1.0f);
}

TEST_CASE("vdck round trip is byte exact") {
    std::vector<NamedTensor> tensors;
    Tensor a = Tensor::zeros(2, 3, 1, 1, 1);
    for (size_t i = 0; i < a.v.size(); ++i) a.v[i] = float(i) * 0.25f - 0.6f;
    Tensor b = Tensor::zeros(1, 2, 3, 3, 3);
    for (size_t i = 0; i < b.v.size(); ++i) b.v[i] = float(int(i % 7) - 3) / 3.0f;
    tensors.push_back({"alpha.w", a});
    tensors.push_back({"beta.b", b});

    std::ostringstream out;
    write_vdck(out, tensors);
    std::string bytes = out.str();
    CHECK(bytes.substr(0, 4) == "VDCK");

    std::istringstream in(bytes);
    auto parsed = read_vdck(in, "mem");
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].name == "alpha.w");
    CHECK(parsed[0].value.v == a.v);
    CHECK(parsed[1].name == "beta.b");
    CHECK(parsed[1].value.v == b.v);

    std::ostringstream again;
    write_vdck(again, parsed);
    CHECK(again.str() == bytes);
}

TEST_CASE("vdck rejects malformed input") {
    std::vector<NamedTensor> tensors{{"x", Tensor::zeros(1, 1, 1, 1, 1)}};
    std::ostringstream out;
    write_vdck(out, tensors);
    std::string good = out.str();

    auto parse = [](std::string bytes) {
        std::istringstream in(std::move(bytes));
        return read_vdck(in, "mem");
    };
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS((void)parse(bad_magic), ConfigError);
    std::string bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS((void)parse(bad_version), ConfigError);
    CHECK_THROWS_AS((void)parse(good.substr(0, good.size() - 2)), ConfigError);
    CHECK_THROWS_AS((void)parse(good + "zz"), ConfigError);
    std::string bad_rank = good;
    bad_rank[4 + 2 + 4 + 2 + 1] = 4; // rank byte after header + name-len + name
    CHECK_THROWS_AS((void)parse(bad_rank), ConfigError);
}

TEST_CASE("unet model save/load reproduces predictions exactly") {
    TempDir dir;
    UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 1;
    cfg.time_embed_dim = 8;
    UNet net(cfg, 3, 3, VoxelRng{21});
    for (auto& v : net.param("head.w").value.v) v = 0.02f;
    UNetDenoiser model(std::move(net));

    SemanticGrid g = checker_grid({4, 4, 2}, 3);
    Field x_t = one_hot(g);
    Field condition = one_hot(g);
    DenoiserInput in{&x_t, 3, &condition};
    Field before = model.predict_x0_logits(in);

    save_model(dir.file("model.vdck"), model.model());
    auto loaded = load_model(dir.file("model.vdck"));
    CHECK(loaded->num_classes() == 3);
    CHECK(loaded->condition_channels() == 3);
    Field after = loaded->predict_x0_logits(in);
    CHECK(after.values == before.values);
}

TEST_CASE("oracle model save/load round trips through the scene file") {
    TempDir dir;
    SemanticGrid g = checker_grid({5, 4, 3}, 4);
    save_sgrid(dir.file("scene.sgrid"), g);
    save_oracle_model(dir.file("oracle.vdck"), "scene.sgrid");
    auto loaded = load_model(dir.file("oracle.vdck"));
    CHECK(loaded->num_classes() == 4);
    Field x_t = one_hot(g);
    Field logits = loaded->predict_x0_logits(DenoiserInput{&x_t, 1, nullptr});
    for (int64_t v = 0; v < g.dims.voxels(); ++v)
        CHECK(logits.row(v)[g.labels[size_t(v)]] == 10.0f);
}

TEST_CASE("model loading failure modes") {
    TempDir dir;
    CHECK_THROWS_AS((void)load_model(dir.file("absent.vdck")), MissingArtifactError);

    // Weights present but sidecar missing.
    save_vdck(dir.file("orphan.vdck"), {});
    CHECK_THROWS_AS((void)load_model(dir.file("orphan.vdck")), MissingArtifactError);

    // Sidecar disagrees with the tensor list.
    UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 1;
    cfg.time_embed_dim = 8;
    UNet net(cfg, 3, 0, VoxelRng{5});
    save_model(dir.file("model.vdck"), net);
    save_vdck(dir.file("model.vdck"), {}); // overwrite weights with empty list
    CHECK_THROWS_AS((void)load_model(dir.file("model.vdck")), ConfigError);
}
