#pragma once

// Parameter checkpoints (.vdck) and model loading. A .vdck file holds named
// f32 tensors; a JSON sidecar at <path>.json records what kind of model the
// weights belong to, so `load_model` can reconstruct either a trained network
// or an oracle wired to a ground-truth scene.

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "voxdiff/denoiser.hpp"

namespace voxdiff {

struct NamedTensor {
    std::string name;
    Tensor value;
};

void write_vdck(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_vdck(std::istream& in, const std::string& origin);
void save_vdck(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_vdck(const std::string& path);

// Network weights + sidecar metadata. Load restores config, class counts and
// every parameter tensor by name, rejecting missing/extra/mis-shaped entries.
void save_model(const std::string& path, const UNet& model);

// Oracle checkpoint: no tensors, sidecar points at the scene file. A relative
// scene path is resolved against the checkpoint's directory on load.
void save_oracle_model(const std::string& path, const std::string& scene_path,
                       int condition_channels = 0, bool wrap = false, float boost = 10.0f);

std::unique_ptr<Denoiser> load_model(const std::string& path);

} // namespace voxdiff
