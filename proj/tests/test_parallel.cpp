#include "doctest.h"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "voxdiff/dataset.hpp"
#include "voxdiff/denoiser.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/pipeline.hpp"
#include "voxdiff/reference.hpp"
#include "voxdiff/subdivision.hpp"
#include "voxdiff/training.hpp"

using namespace voxdiff;

namespace {

// On a small box OpenMP still oversubscribes happily, so running the same
// kernel at several thread counts exercises genuinely different schedules;
// order-dependent reductions would show up as label or bit flips.
void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

SemanticGrid toy(Dims3 dims, uint64_t seed) {
    ToySceneConfig cfg;
    cfg.dims = dims;
    cfg.seed = seed;
    return generate_toy_scenes(cfg, 1)[0];
}

std::vector<std::vector<float>> weights_of(const UNetDenoiser& model) {
    std::vector<std::vector<float>> snap;
    for (const auto& p : const_cast<UNetDenoiser&>(model).model().params())
        snap.push_back(p.value.v);
    return snap;
}

} // namespace

TEST_CASE("every kernel matches its serial mirror at any thread count") {
    SemanticGrid x0 = toy({24, 24, 4}, 5);
    const int K = x0.num_classes;
    NoiseSchedule schedule = default_schedule(8);
    VoxelRng rng{31};
    uint64_t fwd = stream_id(RngStream::kForward);
    uint64_t rev = stream_id(RngStream::kReverse);

    Field logits;
    logits.dims = x0.dims;
    logits.channels = K;
    logits.values.assign(size_t(x0.dims.voxels()) * K, 0.0f);
    VoxelRng lrng{77};
    for (size_t i = 0; i < logits.values.size(); ++i)
        logits.values[i] = float(lrng.normal(stream_id(RngStream::kToy, 4), 0, uint64_t(i)));

    SemanticGrid other = toy({24, 24, 4}, 6);
    std::vector<FeatureVector> fa, fb;
    for (uint64_t s = 0; s < 6; ++s) {
        fa.push_back(extract_features(toy({12, 12, 4}, 100 + s), 0));
        fb.push_back(extract_features(toy({12, 12, 4}, 200 + s), 0));
    }
    Field coarse = one_hot(toy({6, 6, 2}, 7));

    set_threads(1);
    SemanticGrid down_ref = ref::downsample_majority(x0, {6, 6, 2});
    SemanticGrid fwd_ref = ref::forward_sample(x0, schedule, 5, rng, fwd);
    SemanticGrid rev_ref = ref::sample_reverse_step(logits, fwd_ref, schedule, 5, rng, rev, false);
    Field saf_ref = ref::saf_upsample(coarse, {24, 24, 4}, SafMode::kTrilinear);
    double ssim_ref = ref::ssim3d(x0, other);
    double mmd_ref = ref::mmd2(fa, fb);

    for (int threads : {1, 3, 8}) {
        CAPTURE(threads);
        set_threads(threads);
        CHECK(downsample_majority(x0, {6, 6, 2}).labels == down_ref.labels);
        SemanticGrid f = forward_sample(x0, schedule, 5, rng, fwd);
        CHECK(f.labels == fwd_ref.labels);
        CHECK(sample_reverse_step(logits, f, schedule, 5, rng, rev, false).labels ==
              rev_ref.labels);
        CHECK(saf_upsample(coarse, {24, 24, 4}, SafMode::kTrilinear).values == saf_ref.values);
        CHECK(ssim3d(x0, other) == ssim_ref);
        CHECK(mmd2(fa, fb) == mmd_ref);
    }
    set_threads(1);
}

TEST_CASE("stochastic tiled generation is thread-count invariant") {
    SemanticGrid fine = toy({16, 16, 4}, 9);
    SemanticGrid coarse = downsample_majority(fine, {8, 8, 2});
    PyramidSpec pyramid{{Dims3{8, 8, 2}, Dims3{16, 16, 4}}};

    auto run = [&] {
        OracleDenoiser m0(coarse, 0);
        OracleDenoiser m1(fine, 2 * fine.num_classes);
        std::vector<Denoiser*> models{&m0, &m1};
        GenerateOptions opt; // stochastic transitions
        return generate_tiled(models, pyramid, default_schedule(6), 2, 2, 0.125, opt,
                              VoxelRng{44});
    };

    set_threads(1);
    SemanticGrid first = run().scene;
    for (int threads : {2, 6}) {
        CAPTURE(threads);
        set_threads(threads);
        CHECK(run().scene.labels == first.labels);
    }
    set_threads(1);
}

TEST_CASE("a training epoch is thread-count invariant") {
    std::vector<SemanticGrid> scenes;
    for (uint64_t s = 0; s < 2; ++s)
        scenes.push_back(toy({8, 8, 2}, 300 + s));
    PyramidSpec pyramid{{Dims3{8, 8, 2}}};
    UNetConfig ucfg;
    ucfg.base_channels = 4;
    ucfg.depth = 1;
    ucfg.time_embed_dim = 4;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.T = 3;

    auto run = [&] {
        UNetDenoiser model(UNet(ucfg, scenes[0].num_classes, 0, VoxelRng{12}));
        train_scale(model, 0, scenes, pyramid, default_schedule(3), cfg, VoxelRng{13});
        return weights_of(model);
    };

    set_threads(1);
    std::vector<std::vector<float>> first = run();
    set_threads(5);
    CHECK(run() == first);
    set_threads(1);
}
