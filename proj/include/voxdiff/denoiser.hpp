#pragma once

// Clean-label predictor interface used by the reverse chain: given the noisy
// one-hot volume, the step index, and optional condition channels, produce
// K-channel logits over the clean label per voxel. Two implementations: an
// oracle that reads the ground truth (testing) and a trained U-Net.

#include <memory>

#include "voxdiff/grid.hpp"
#include "voxdiff/unet.hpp"

namespace voxdiff {

struct DenoiserInput {
    const Field* x_t = nullptr;       // one-hot, K channels
    int t = 0;                        // diffusion step index
    const Field* condition = nullptr; // optional, model's condition_channels wide
    // Origin of this volume in the scene frame; lets oracles answer for tile
    // crops without copying the scene. Whole-scene callers leave it at 0.
    int ox = 0, oy = 0, oz = 0;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual int num_classes() const = 0;
    virtual int condition_channels() const = 0; // 0 = unconditioned
    virtual Field predict_x0_logits(const DenoiserInput& in) = 0;
};

// Ignores x_t and condition entirely: emits `boost` on the true label at each
// voxel (offset by the input origin) and 0 elsewhere. With `wrap`, lookups
// wrap around the scene, giving a periodic infinite ground truth.
class OracleDenoiser final : public Denoiser {
public:
    OracleDenoiser(SemanticGrid truth, int condition_channels = 0, bool wrap = false,
                   float boost = 10.0f);

    int num_classes() const override { return truth_.num_classes; }
    int condition_channels() const override { return condition_channels_; }
    Field predict_x0_logits(const DenoiserInput& in) override;

    const SemanticGrid& truth() const { return truth_; }
    bool wraps() const { return wrap_; }
    float boost() const { return boost_; }

private:
    SemanticGrid truth_;
    int condition_channels_ = 0;
    bool wrap_ = false;
    float boost_ = 10.0f;
};

// Adapts the tape-based network to the Field interface (batch of one).
class UNetDenoiser final : public Denoiser {
public:
    explicit UNetDenoiser(UNet model) : model_(std::move(model)) {}

    int num_classes() const override { return model_.num_classes(); }
    int condition_channels() const override { return model_.condition_channels(); }
    Field predict_x0_logits(const DenoiserInput& in) override;

    UNet& model() { return model_; }
    const UNet& model() const { return model_; }

private:
    UNet model_;
};

// Field (voxel-major rows) <-> Tensor (channel planes) for one batch element.
Tensor field_to_tensor(const Field& f);
Field tensor_to_field(const Tensor& t, int batch_index = 0);
// Appends condition channels after the x_t channels, in tensor layout.
Tensor pack_input_tensor(const Field& x_t, const Field* condition);

void check_denoiser_input(const Denoiser& model, const DenoiserInput& in);

} // namespace voxdiff
