#pragma once

// Desk-scale training: plane-symmetry augmentation, AdamW with decoupled
// weight decay, the per-scale training loop (corrupt, predict, hybrid loss,
// step), and checkpoint-based fine-tuning with frozen scales.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "voxdiff/denoiser.hpp"
#include "voxdiff/diffusion.hpp"
#include "voxdiff/pyramid.hpp"

namespace voxdiff {

struct AugmentFlags {
    bool flip_x = false;
    bool flip_y = false;
    bool rotate_z = false; // quarter turns about the vertical axis; needs h == w
};

// One plane symmetry: an optional x-mirror applied first, then quarter turns
// about the vertical axis.
struct Symmetry {
    int quarter_turns = 0; // 0..3
    bool mirror = false;
};

// Every distinct symmetry generated by the enabled flags, canonically ordered.
// Sizes are always powers of two (1, 2, 4, or 8), so a uniform pick by modulo
// is exactly unbiased.
std::vector<Symmetry> symmetry_group(const AugmentFlags& flags);

SemanticGrid apply_symmetry(const SemanticGrid& g, const Symmetry& s);

// Uniformly chosen element of the group, decided by the single counter-based
// draw at (stream, step, index).
SemanticGrid augment(const SemanticGrid& g, const AugmentFlags& flags, const VoxelRng& rng,
                     uint64_t stream, uint64_t step, uint64_t index);

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
    int epochs = 1;
    int batch_size = 8;
    double lambda_aux = 0.001;
    int T = 20; // schedule length for config-driven runs
    AugmentFlags augment;
    SafMode saf_mode = SafMode::kTrilinear;
    uint64_t seed = 0;
    std::string diagnostics_dir = "."; // where a non-finite batch gets dumped
};

void validate_train_config(const TrainConfig& cfg);

// AdamW with decoupled weight decay; optimizer state is kept in double no
// matter the parameter type, and the whole update is evaluated in double so
// the float and double instantiations walk the same arithmetic.
template <typename T>
class AdamWT {
public:
    explicit AdamWT(const TrainConfig& cfg)
        : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.epsilon),
          wd_(cfg.weight_decay) {}

    void update(std::vector<NamedParamT<T>>& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].value.v.size(), 0.0);
                v_[i].assign(params[i].value.v.size(), 0.0);
            }
        }
        if (m_.size() != params.size())
            throw ConfigError("optimizer state does not match the parameter list");
        ++steps_;
        double bc1 = 1.0 - std::pow(beta1_, double(steps_));
        double bc2 = 1.0 - std::pow(beta2_, double(steps_));
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<T>& value = params[i].value;
            const TensorT<T>& grad = params[i].grad;
            if (value.v.size() != m_[i].size() || grad.v.size() != m_[i].size())
                throw ConfigError("optimizer state does not match parameter " + params[i].name);
            for (size_t j = 0; j < value.v.size(); ++j) {
                double g = double(grad.v[j]);
                double& m = m_[i][j];
                double& v = v_[i][j];
                m = beta1_ * m + (1.0 - beta1_) * g;
                v = beta2_ * v + (1.0 - beta2_) * g * g;
                double step = lr_ * ((m / bc1) / (std::sqrt(v / bc2) + eps_) +
                                     wd_ * double(value.v[j]));
                value.v[j] = T(double(value.v[j]) - step);
            }
        }
    }

    int64_t steps() const { return steps_; }

private:
    double lr_, beta1_, beta2_, eps_, wd_;
    int64_t steps_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

using AdamW = AdamWT<float>;

struct TrainResult {
    std::vector<LossBreakdown> epochs; // per-epoch means over examples
};

// "epoch,mean_total,mean_kl,mean_aux" rows, epochs 1-based.
void write_loss_csv(const std::string& path, const TrainResult& curve);

// Trains the denoiser of one pyramid scale. `scenes` hold full-resolution
// grids (the finest scale's dims); each step augments a scene, rebuilds its
// pyramid, corrupts the scale's level at a uniform t, and seeds the tape with
// the exact hybrid-loss gradient. Condition channels by model width: scale 0
// takes none, finer scales K (SAF of the coarser level) or 2K (SAF plus a
// simulated known-strip overlap, matching the subdivision inference layout).
TrainResult train_scale(UNetDenoiser& model, int scale, const std::vector<SemanticGrid>& scenes,
                        const PyramidSpec& pyramid, const NoiseSchedule& schedule,
                        const TrainConfig& cfg, const VoxelRng& rng);

struct FinetunePlan {
    std::vector<std::string> source_checkpoints; // one per pyramid scale
    std::vector<int> train_scales;               // scales to fine-tune; rest stay frozen
};

struct FinetuneResult {
    std::vector<std::unique_ptr<Denoiser>> models; // one per scale
    std::vector<TrainResult> curves;               // empty for frozen scales
};

// Loads every scale from its checkpoint and trains only the listed scales on
// the target scenes; frozen scales keep their loaded parameters bit-exactly.
FinetuneResult finetune(const FinetunePlan& plan, const std::vector<SemanticGrid>& target_scenes,
                        const PyramidSpec& pyramid, const NoiseSchedule& schedule,
                        const TrainConfig& cfg, const VoxelRng& rng);

} // namespace voxdiff
