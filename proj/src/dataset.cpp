#include "voxdiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "voxdiff/errors.hpp"

namespace voxdiff {

namespace {

LabelSpec merged_11_spec() {
    return LabelSpec{{"unclassified", "building", "fences", "other", "pedestrian", "pole",
                      "road", "ground", "sidewalk", "vegetation", "vehicle"},
                     0};
}

RemapPreset make_carla_merge() {
    RemapPreset p;
    p.name = "carla-merge";
    p.version = 1;
    p.remap.target = merged_11_spec();
    p.remap.exclude_marks_ignore = false;
    // Simulator palette (23 raw classes) onto the merged 11.
    p.remap.map = {
        {0, 0},   // unlabeled
        {1, 1},   // building
        {2, 2},   // fence
        {3, 3},   // other
        {4, 4},   // pedestrian
        {5, 5},   // pole
        {6, 6},   // road line -> road
        {7, 6},   // road
        {8, 8},   // sidewalk
        {9, 9},   // vegetation
        {10, 10}, // vehicle
        {11, 1},  // wall -> building
        {12, 5},  // traffic sign -> pole
        {13, 0},  // sky -> unclassified
        {14, 7},  // ground
        {15, 1},  // bridge -> building
        {16, 6},  // rail track -> road
        {17, 2},  // guard rail -> fence
        {18, 5},  // traffic light -> pole
        {19, 3},  // static -> other
        {20, 3},  // dynamic -> other
        {21, 3},  // water -> other
        {22, 7},  // terrain -> ground
    };
    return p;
}

RemapPreset make_kitti_to_carla() {
    RemapPreset p;
    p.name = "kitti-to-carla";
    p.version = 1;
    p.remap.target = merged_11_spec();
    p.remap.exclude_marks_ignore = true;
    p.remap.map = {
        {0, 0},               // unlabeled
        {1, kRemapExclude},   // outlier
        {10, 10},             // car -> vehicle
        {11, kRemapRemove},   // bicycle
        {13, kRemapRemove},   // bus
        {15, kRemapRemove},   // motorcycle
        {16, kRemapRemove},   // on-rails
        {18, kRemapRemove},   // truck
        {20, kRemapRemove},   // other-vehicle
        {30, 4},              // person -> pedestrian
        {31, kRemapRemove},   // bicyclist
        {32, kRemapRemove},   // motorcyclist
        {40, 6},              // road
        {44, 7},              // parking -> ground
        {48, 8},              // sidewalk
        {49, 7},              // other-ground -> ground
        {50, 1},              // building
        {51, 2},              // fence -> fences
        {52, 3},              // other-structure -> other
        {60, 6},              // lane-marking -> road
        {70, 9},              // vegetation
        {71, 9},              // trunk -> vegetation
        {72, 7},              // terrain -> ground
        {80, 5},              // pole
        {81, 5},              // traffic-sign -> pole
        {99, 3},              // other-object -> other
        {252, kRemapExclude}, // moving-car
        {253, kRemapExclude}, // moving-bicyclist
        {254, kRemapExclude}, // moving-person
        {255, kRemapExclude}, // moving-motorcyclist
        {256, kRemapExclude}, // moving-on-rails
        {257, kRemapExclude}, // moving-bus
        {258, kRemapExclude}, // moving-truck
        {259, kRemapExclude}, // moving-other
    };
    return p;
}

} // namespace

int LabelRemap::apply(int raw) const {
    auto it = map.find(raw);
    if (it == map.end())
        throw ConfigError("raw label " + std::to_string(raw) + " has no remap entry");
    if (it->second == kRemapRemove || it->second == kRemapExclude) return 0;
    return it->second;
}

void validate_remap(const LabelRemap& r) {
    if (r.target.names.empty()) throw ConfigError("remap target has no classes");
    if (r.target.ignore_index < 0 || r.target.ignore_index >= r.target.num_classes())
        throw ConfigError("remap target ignore_index out of range");
    for (const auto& [raw, tgt] : r.map) {
        if (raw < 0) throw ConfigError("negative raw label " + std::to_string(raw));
        if (tgt != kRemapRemove && tgt != kRemapExclude &&
            (tgt < 0 || tgt >= r.target.num_classes()))
            throw ConfigError("remap of raw label " + std::to_string(raw) + " to " +
                              std::to_string(tgt) + " exceeds target K=" +
                              std::to_string(r.target.num_classes()));
    }
}

const RemapPreset& remap_preset(const std::string& name) {
    static const RemapPreset carla = make_carla_merge();
    static const RemapPreset kitti = make_kitti_to_carla();
    if (name == carla.name) return carla;
    if (name == kitti.name) return kitti;
    throw ConfigError("unknown remap preset '" + name +
                      "' (available: carla-merge, kitti-to-carla)");
}

std::vector<std::string> remap_preset_names() { return {"carla-merge", "kitti-to-carla"}; }

SemanticGrid remap(const SemanticGrid& g, const LabelRemap& r) {
    validate_grid(g);
    validate_remap(r);
    // Raw grids carry 8-bit ids, so a 256-entry table resolves every voxel;
    // unmapped ids are rejected up front to keep the rewrite loop total.
    std::array<int, 256> lut;
    std::array<bool, 256> present{};
    for (uint8_t l : g.labels) present[l] = true;
    for (int raw = 0; raw < 256; ++raw) lut[size_t(raw)] = present[size_t(raw)] ? r.apply(raw) : 0;

    SemanticGrid out = new_grid(g.dims, r.target.num_classes());
    for (size_t v = 0; v < g.labels.size(); ++v)
        out.labels[v] = uint8_t(lut[g.labels[v]]);
    return out;
}

SemanticGrid height_crop(const SemanticGrid& g, int keep_layers) {
    validate_grid(g);
    if (keep_layers < 1 || keep_layers > g.dims.d)
        throw ConfigError("height_crop keep_layers=" + std::to_string(keep_layers) +
                          " outside [1, " + std::to_string(g.dims.d) + "]");
    SemanticGrid out = new_grid({g.dims.h, g.dims.w, keep_layers}, g.num_classes);
    int64_t slice = int64_t(g.dims.h) * g.dims.w;
    std::copy_n(g.labels.begin(), slice * keep_layers, out.labels.begin());
    return out;
}

const LabelSpec& toy_label_spec() {
    static const LabelSpec spec{{"air", "ground", "road", "building", "vehicle", "pole"}, 0};
    return spec;
}

void validate_toy_config(const ToySceneConfig& cfg) {
    if (cfg.dims.h < 1 || cfg.dims.w < 1 || cfg.dims.d < 2)
        throw ConfigError("toy scenes need positive dims with d >= 2, got " +
                          to_string(cfg.dims));
    auto check = [](double v, const char* what) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ConfigError(std::string("toy ") + what + " must be finite and >= 0");
    };
    check(cfg.ground_density, "ground_density");
    check(cfg.road_density, "road_density");
    check(cfg.building_density, "building_density");
    check(cfg.vehicle_density, "vehicle_density");
    check(cfg.pole_density, "pole_density");
    for (double s : cfg.class_shift) check(s, "class_shift");
}

namespace {

// Per-primitive rng stream tags; the scene index rides in the b slot.
enum ToyStream : uint64_t {
    kToyGroundDraw = 1,
    kToyRoadDraw = 2,
    kToyBuildingDraw = 3,
    kToyVehicleDraw = 4,
    kToyPoleDraw = 5,
};

void warn_once(std::vector<std::string>* warnings, bool& flagged, const std::string& msg) {
    if (!warnings || flagged) return;
    warnings->push_back(msg);
    flagged = true;
}

SemanticGrid toy_scene(const ToySceneConfig& cfg, int scene, const VoxelRng& rng,
                       std::vector<std::string>* warnings) {
    const int h = cfg.dims.h, w = cfg.dims.w, d = cfg.dims.d;
    SemanticGrid g = new_grid(cfg.dims, kToyClasses, kToyAir);
    bool clipped = false;
    auto stream = [&](ToyStream t) {
        return stream_id(RngStream::kToy, uint64_t(t), uint64_t(scene));
    };

    // Ground sheet at z = 0.
    double ground_p = std::min(1.0, cfg.ground_density * cfg.class_shift[kToyGround]);
    for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x)
            if (rng.uniform(stream(kToyGroundDraw), 0, uint64_t(x + h * y)) < ground_p)
                g.set(x, y, 0, kToyGround);

    // Road strips of width 2 running along x, evenly spaced with a random
    // phase so strips never overlap.
    double road_eff = cfg.road_density * cfg.class_shift[kToyRoad];
    long roads = std::lround(road_eff * double(w) / 4.0);
    if (roads > w / 2) {
        warn_once(warnings, clipped,
                  "scene " + std::to_string(scene) + ": primitives clipped at " +
                      to_string(cfg.dims));
        roads = w / 2;
    }
    if (roads > 0) {
        double phase = rng.uniform(stream(kToyRoadDraw), 0, 0);
        for (long i = 0; i < roads; ++i) {
            int y0 = int((double(i) + phase) * double(w) / double(roads));
            for (int dy = 0; dy < 2; ++dy) {
                int y = y0 + dy;
                if (y >= w) {
                    warn_once(warnings, clipped,
                              "scene " + std::to_string(scene) + ": primitives clipped at " +
                                  to_string(cfg.dims));
                    continue;
                }
                for (int x = 0; x < h; ++x) g.set(x, y, 0, kToyRoad);
            }
        }
    }

    // Building boxes from z = 1 upward.
    double building_eff = cfg.building_density * cfg.class_shift[kToyBuilding];
    long buildings = std::lround(building_eff * double(h) * double(w) / 64.0);
    for (long i = 0; i < buildings; ++i) {
        uint64_t b0 = rng.bits(stream(kToyBuildingDraw), uint64_t(i), 0);
        uint64_t b1 = rng.bits(stream(kToyBuildingDraw), uint64_t(i), 1);
        int px = int(b0 % uint64_t(h)), py = int(b1 % uint64_t(w));
        int bx = 3 + int((b0 >> 32) % 3), by = 3 + int((b1 >> 32) % 3);
        int bh = 2 + int(rng.bits(stream(kToyBuildingDraw), uint64_t(i), 2) % 3);
        if (px + bx > h || py + by > w || 1 + bh > d)
            warn_once(warnings, clipped,
                      "scene " + std::to_string(scene) + ": primitives clipped at " +
                          to_string(cfg.dims));
        for (int z = 1; z < std::min(d, 1 + bh); ++z)
            for (int y = py; y < std::min(w, py + by); ++y)
                for (int x = px; x < std::min(h, px + bx); ++x)
                    g.set(x, y, z, kToyBuilding);
    }

    // Vehicles occupy two cells along x at z = 1, anchored on distinct road
    // cells drawn without replacement.
    std::vector<int64_t> road_cells;
    for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x)
            if (g.at(x, y, 0) == kToyRoad) road_cells.push_back(int64_t(x) + int64_t(h) * y);
    double vehicle_eff = cfg.vehicle_density * cfg.class_shift[kToyVehicle];
    long vehicles = std::lround(vehicle_eff * double(road_cells.size()) / 32.0);
    if (vehicles > long(road_cells.size())) {
        warn_once(warnings, clipped,
                  "scene " + std::to_string(scene) + ": primitives clipped at " +
                      to_string(cfg.dims));
        vehicles = long(road_cells.size());
    }
    for (size_t i = road_cells.size(); i > 1; --i) {
        uint64_t j = rng.bits(stream(kToyVehicleDraw), uint64_t(i), 0) % uint64_t(i);
        std::swap(road_cells[i - 1], road_cells[size_t(j)]);
    }
    for (long i = 0; i < vehicles; ++i) {
        int x = int(road_cells[size_t(i)] % h), y = int(road_cells[size_t(i)] / h);
        g.set(x, y, 1, kToyVehicle);
        if (x + 1 < h)
            g.set(x + 1, y, 1, kToyVehicle);
        else
            warn_once(warnings, clipped,
                      "scene " + std::to_string(scene) + ": primitives clipped at " +
                          to_string(cfg.dims));
    }

    // 1-voxel pole columns over the full height above ground.
    double pole_eff = cfg.pole_density * cfg.class_shift[kToyPole];
    long poles = std::lround(pole_eff * double(h) * double(w) / 128.0);
    for (long i = 0; i < poles; ++i) {
        uint64_t b = rng.bits(stream(kToyPoleDraw), uint64_t(i), 0);
        int px = int(b % uint64_t(h)), py = int((b >> 32) % uint64_t(w));
        for (int z = 1; z < d; ++z) g.set(px, py, z, kToyPole);
    }
    return g;
}

} // namespace

std::vector<SemanticGrid> generate_toy_scenes(const ToySceneConfig& cfg, int count,
                                              std::vector<std::string>* warnings) {
    validate_toy_config(cfg);
    if (count < 1) throw ConfigError("toy scene count must be >= 1");
    VoxelRng rng{cfg.seed};
    std::vector<SemanticGrid> out;
    out.reserve(size_t(count));
    for (int i = 0; i < count; ++i) out.push_back(toy_scene(cfg, i, rng, warnings));
    return out;
}

SemanticGrid import_raw(const std::string& labels_file, Dims3 dims, int num_classes) {
    if (dims.h < 1 || dims.w < 1 || dims.d < 1)
        throw ConfigError("import_raw: dims must be positive, got " + to_string(dims));
    if (num_classes < 1 || num_classes > 256)
        throw ConfigError("import_raw: num_classes must be in [1, 256]");
    std::ifstream in(labels_file, std::ios::binary | std::ios::ate);
    if (!in) throw MissingArtifactError("import_raw: cannot open " + labels_file);
    int64_t size = int64_t(in.tellg());
    if (size != dims.voxels())
        throw ConfigError("import_raw: " + labels_file + " holds " + std::to_string(size) +
                          " bytes but " + to_string(dims) + " needs " +
                          std::to_string(dims.voxels()));
    in.seekg(0);
    SemanticGrid g = new_grid(dims, num_classes);
    in.read(reinterpret_cast<char*>(g.labels.data()), size);
    if (!in) throw MissingArtifactError("import_raw: short read from " + labels_file);
    for (int64_t v = 0; v < g.voxels(); ++v)
        if (int(g.labels[size_t(v)]) >= num_classes)
            throw ConfigError("import_raw: label " + std::to_string(int(g.labels[size_t(v)])) +
                              " at voxel " + std::to_string(v) + " exceeds K=" +
                              std::to_string(num_classes));
    return g;
}

} // namespace voxdiff
