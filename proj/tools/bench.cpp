// Times every OpenMP kernel against its serial mirror on identical inputs
// and verifies that the two paths agree bit for bit while at it.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"

#include "voxdiff/diffusion.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/pyramid.hpp"
#include "voxdiff/reference.hpp"
#include "voxdiff/rng.hpp"
#include "voxdiff/schedule.hpp"

using namespace voxdiff;

namespace {

double seconds(const std::function<void()>& fn, int repeats) {
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i)
        fn();
    auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(stop - start).count() / repeats;
}

struct Row {
    std::string name;
    double serial = 0, parallel = 0;
    bool equal = false;
};

void print_rows(const std::vector<Row>& rows) {
    std::printf("%-24s %12s %12s %9s %s\n", "kernel", "serial (ms)", "parallel (ms)", "speedup",
                "bit-equal");
    for (const Row& r : rows)
        std::printf("%-24s %12.3f %12.3f %8.2fx %s\n", r.name.c_str(), r.serial * 1e3,
                    r.parallel * 1e3, r.serial / r.parallel, r.equal ? "yes" : "NO");
}

SemanticGrid random_grid(Dims3 dims, int K, uint64_t tag) {
    SemanticGrid g = new_grid(dims, K);
    VoxelRng rng{424242};
    uint64_t stream = stream_id(RngStream::kToy, tag);
    for (int64_t i = 0; i < dims.voxels(); ++i)
        g.labels[size_t(i)] = uint8_t(rng.bits(stream, 0, uint64_t(i)) % uint64_t(K));
    return g;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parallel vs serial kernel benchmark"};
    int repeats = 3;
    int dim = 96;
    app.add_option("--repeats", repeats, "timed repetitions per kernel");
    app.add_option("--dim", dim, "horizontal extent of the benchmark volume");
    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP unavailable; both columns run serially\n");
#endif

    const int K = 8;
    Dims3 dims{dim, dim, 16};
    Dims3 coarse_dims{dim / 4, dim / 4, 4};
    SemanticGrid x0 = random_grid(dims, K, 1);
    NoiseSchedule schedule = default_schedule(20);
    VoxelRng rng{7};
    uint64_t stream = stream_id(RngStream::kForward);

    std::vector<Row> rows;

    {
        Row r{"downsample_majority"};
        SemanticGrid a, b;
        r.parallel = seconds([&] { a = downsample_majority(x0, coarse_dims); }, repeats);
        r.serial = seconds([&] { b = ref::downsample_majority(x0, coarse_dims); }, repeats);
        r.equal = a.labels == b.labels;
        rows.push_back(r);
    }
    {
        Row r{"forward_sample"};
        SemanticGrid a, b;
        r.parallel = seconds([&] { a = forward_sample(x0, schedule, 10, rng, stream); }, repeats);
        r.serial =
            seconds([&] { b = ref::forward_sample(x0, schedule, 10, rng, stream); }, repeats);
        r.equal = a.labels == b.labels;
        rows.push_back(r);
    }
    {
        Row r{"sample_reverse_step"};
        Field logits;
        logits.dims = dims;
        logits.channels = K;
        logits.values.assign(size_t(dims.voxels()) * K, 0.0f);
        VoxelRng lr{99};
        uint64_t ls = stream_id(RngStream::kToy, 9);
        for (size_t i = 0; i < logits.values.size(); ++i)
            logits.values[i] = float(lr.normal(ls, 1, uint64_t(i)));
        SemanticGrid x_t = forward_sample(x0, schedule, 10, rng, stream);
        uint64_t rs = stream_id(RngStream::kReverse);
        SemanticGrid a, b;
        r.parallel = seconds(
            [&] { a = sample_reverse_step(logits, x_t, schedule, 10, rng, rs, false); }, repeats);
        r.serial = seconds(
            [&] { b = ref::sample_reverse_step(logits, x_t, schedule, 10, rng, rs, false); },
            repeats);
        r.equal = a.labels == b.labels;
        rows.push_back(r);
    }
    {
        Row r{"saf_upsample"};
        SemanticGrid small = random_grid(coarse_dims, K, 2);
        Field onehot;
        onehot.dims = coarse_dims;
        onehot.channels = K;
        onehot.values.assign(size_t(coarse_dims.voxels()) * K, 0.0f);
        for (int64_t i = 0; i < coarse_dims.voxels(); ++i)
            onehot.values[size_t(i) * K + small.labels[size_t(i)]] = 1.0f;
        Field a, b;
        r.parallel =
            seconds([&] { a = saf_upsample(onehot, dims, SafMode::kTrilinear); }, repeats);
        r.serial =
            seconds([&] { b = ref::saf_upsample(onehot, dims, SafMode::kTrilinear); }, repeats);
        r.equal = a.values == b.values;
        rows.push_back(r);
    }
    {
        Row r{"ssim3d"};
        SemanticGrid other = random_grid(dims, K, 3);
        double a = 0, b = 0;
        r.parallel = seconds([&] { a = ssim3d(x0, other); }, repeats);
        r.serial = seconds([&] { b = ref::ssim3d(x0, other); }, repeats);
        r.equal = a == b;
        rows.push_back(r);
    }
    {
        Row r{"mmd2"};
        std::vector<SemanticGrid> gs, rs;
        for (uint64_t i = 0; i < 48; ++i) {
            gs.push_back(random_grid({24, 24, 8}, K, 100 + i));
            rs.push_back(random_grid({24, 24, 8}, K, 200 + i));
        }
        std::vector<FeatureVector> gf = extract_all(
            gs, [](const SemanticGrid& g) { return extract_features(g, 0); });
        std::vector<FeatureVector> rf = extract_all(
            rs, [](const SemanticGrid& g) { return extract_features(g, 0); });
        double a = 0, b = 0;
        r.parallel = seconds([&] { a = mmd2(gf, rf, 1.0); }, repeats);
        r.serial = seconds([&] { b = ref::mmd2(gf, rf, 1.0); }, repeats);
        r.equal = a == b;
        rows.push_back(r);
    }

    print_rows(rows);
    for (const Row& r : rows)
        if (!r.equal) {
            std::printf("mismatch: %s\n", r.name.c_str());
            return 1;
        }
    return 0;
}
