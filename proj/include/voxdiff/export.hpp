#pragma once

// Viewer-friendly exports: an ASCII PLY point cloud (one vertex per voxel
// whose label is not class 0, colored from a fixed palette) and per-z-slice
// CSV matrices of raw label ids.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "voxdiff/grid.hpp"

namespace voxdiff {

// Fixed palette, cycled when K exceeds its size.
std::array<uint8_t, 3> class_color(int label);

// Counts every voxel with a label other than 0; the PLY vertex count equals
// this exactly.
int64_t occupied_voxels(const SemanticGrid& g);

void write_ply(std::ostream& out, const SemanticGrid& g);
void export_ply(const std::string& path, const SemanticGrid& g);

// One CSV per z-slice at <prefix>_z<k>.csv: w lines of h comma-separated
// label ids (x varies along a line, y across lines). Returns the file paths.
std::vector<std::string> export_slice_csv(const std::string& prefix, const SemanticGrid& g);

} // namespace voxdiff
