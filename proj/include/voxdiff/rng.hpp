#pragma once

#include <cmath>
#include <cstdint>

namespace voxdiff {

// Counter-based random numbers: every draw is a pure hash of
// (seed, stream, step, index), so results do not depend on thread count or
// evaluation order. Any voxel can be sampled independently of all others.
//
// The hash is a chain of splitmix64 finalizer rounds, one absorb per word.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

struct VoxelRng {
    uint64_t seed = 0;

    uint64_t bits(uint64_t stream, uint64_t step, uint64_t index) const {
        uint64_t h = mix64(seed);
        h = mix64(h ^ stream);
        h = mix64(h ^ step);
        h = mix64(h ^ index);
        return h;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform(uint64_t stream, uint64_t step, uint64_t index) const {
        return double(bits(stream, step, index) >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes indices 2k and 2k+1.
    double normal(uint64_t stream, uint64_t step, uint64_t index) const {
        double u1 = uniform(stream, step, 2 * index);
        double u2 = uniform(stream, step, 2 * index + 1);
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

// Purpose tags for independent draw streams. Extra coordinates (scale index,
// tile index) are packed next to the tag so no two call sites collide.
enum class RngStream : uint64_t {
    kInit = 1,       // t=T initialization of a reverse chain
    kForward = 2,    // forward corruption q(x_t | x_0)
    kReverse = 3,    // reverse transition sampling
    kTrainTime = 4,  // per-example timestep draws
    kTrainAug = 5,   // per-example augmentation draws
    kWeights = 6,    // parameter initialization
    kShuffle = 7,    // epoch shuffling
    kToy = 8,        // toy scene synthesis
};

inline uint64_t stream_id(RngStream kind, uint64_t a = 0, uint64_t b = 0) {
    return static_cast<uint64_t>(kind) | (a << 8) | (b << 32);
}

} // namespace voxdiff
