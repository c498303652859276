#pragma once

// Dataset preprocessing: label remap/merge tables, height cropping, raw
// volume ingestion, and a seeded procedural toy-scene generator used as the
// desk-scale stand-in for real outdoor datasets.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voxdiff/grid.hpp"
#include "voxdiff/rng.hpp"

namespace voxdiff {

// Special remap targets: both land on class 0 in the grid. kRemapRemove marks
// classes with no downstream counterpart; kRemapExclude marks classes that
// stay out of segmentation scoring (the metric layer owns that exclusion via
// ignore_index when exclude_marks_ignore is set).
inline constexpr int kRemapRemove = -1;
inline constexpr int kRemapExclude = -2;

struct LabelRemap {
    std::map<int, int> map; // raw id -> target id, kRemapRemove, or kRemapExclude
    LabelSpec target;
    bool exclude_marks_ignore = false;

    // Final grid label for a raw id; throws naming the id when unmapped.
    int apply(int raw) const;
};

void validate_remap(const LabelRemap& r);

struct RemapPreset {
    std::string name;
    int version = 0;
    LabelRemap remap;
};

// Shipped presets: "carla-merge" (23-class simulator palette down to the
// merged 11) and "kitti-to-carla" (outdoor lidar labels onto the same 11).
const RemapPreset& remap_preset(const std::string& name);
std::vector<std::string> remap_preset_names();

// Rewrites every voxel through the map; the result carries the target spec's
// class count.
SemanticGrid remap(const SemanticGrid& g, const LabelRemap& r);

// Keeps the bottom keep_layers z-slices.
SemanticGrid height_crop(const SemanticGrid& g, int keep_layers);

inline constexpr int kToyAir = 0;
inline constexpr int kToyGround = 1;
inline constexpr int kToyRoad = 2;
inline constexpr int kToyBuilding = 3;
inline constexpr int kToyVehicle = 4;
inline constexpr int kToyPole = 5;
inline constexpr int kToyClasses = 6;

const LabelSpec& toy_label_spec();

struct ToySceneConfig {
    Dims3 dims{16, 16, 4};
    uint64_t seed = 0;
    double ground_density = 1.0;   // per-column ground coverage probability
    double road_density = 0.5;     // scales the number of road strips
    double building_density = 0.5; // scales the number of building boxes
    double vehicle_density = 0.5;  // scales the number of vehicles on roads
    double pole_density = 0.5;     // scales the number of 1-voxel poles
    // Class-frequency multipliers for transfer experiments, indexed by toy
    // class id; slot 0 (air) is unused.
    std::array<double, kToyClasses> class_shift{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
};

void validate_toy_config(const ToySceneConfig& cfg);

// Deterministic in (seed, scene index): flat ground, road strips across x,
// axis-aligned building boxes, vehicles sitting on road cells, and 1-voxel
// pole columns. Primitives reaching past the grid are clipped and reported
// through *warnings.
std::vector<SemanticGrid> generate_toy_scenes(const ToySceneConfig& cfg, int count,
                                              std::vector<std::string>* warnings = nullptr);

// Reads a raw label volume of exactly h*w*d bytes in grid linear order
// (x fastest, then y, then z); every byte must be below num_classes.
SemanticGrid import_raw(const std::string& labels_file, Dims3 dims, int num_classes);

} // namespace voxdiff
