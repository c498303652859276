#pragma once

// Run configuration: one JSON file drives every CLI command. Sections map
// onto the library modules (schedule / pyramid / layout / train / eval) plus
// shared paths and the top-level seed; flags override individual fields.
// Format reference: docs/config.md.

#include <string>
#include <vector>

#include "voxdiff/pyramid.hpp"
#include "voxdiff/schedule.hpp"
#include "voxdiff/training.hpp"

namespace voxdiff {

struct ScheduleConfig {
    int T = 20;
    std::vector<double> betas; // empty -> the default 1/(T-t+1) schedule
};

struct PyramidConfig {
    PyramidSpec spec{{Dims3{16, 16, 4}}};
    SafMode saf_mode = SafMode::kTrilinear;
    int start_from_scale = 0;
    bool deterministic = false;
    bool keep_intermediate = false;
};

struct LayoutConfig {
    int rows = 1, cols = 1;
    double overlap = 0.0625;
};

struct EvalConfig {
    int sample_count = 1000;   // scenes drawn for distribution metrics
    double mmd_bandwidth = 0.0; // <= 0 -> median heuristic
    int ignore_index = 0;      // class excluded from segmentation scores; -1 for none
};

struct PathsConfig {
    std::vector<std::string> models; // one checkpoint per pyramid scale
    std::string data;                // dataset directory of .sgrid files
    std::string out;                 // output directory
};

struct RunConfig {
    uint64_t seed = 0;
    ScheduleConfig schedule;
    PyramidConfig pyramid;
    LayoutConfig layout;
    TrainConfig train;
    EvalConfig eval;
    PathsConfig paths;
    std::string origin = "<builtin>"; // config file path, quoted in errors
};

// Parses JSON text; `origin` prefixes every error and anchors relative paths
// (paths in a file resolve against the file's directory). Unknown keys are
// rejected. The result is validated.
RunConfig parse_run_config(const std::string& json_text, const std::string& origin);

// parse_run_config over the file's contents.
RunConfig load_run_config(const std::string& path);

// Cross-section consistency: schedule well formed (given betas fix T),
// pyramid scales divisible, layout sane, eval bounds, and the train section
// re-checked after it inherits seed / T / saf_mode from the other sections.
void validate_run_config(RunConfig& cfg);

// Builds the schedule the config describes.
NoiseSchedule make_schedule(const ScheduleConfig& s);

} // namespace voxdiff
