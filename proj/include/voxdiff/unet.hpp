#pragma once

// Miniature 3D U-Net over voxel class channels. Input is the one-hot noisy
// volume optionally concatenated with condition channels; output is a
// K-channel clean-label logit volume at the same resolution. Templated on
// the scalar so gradient checks can run the whole network in double.

#include <string>
#include <unordered_map>
#include <vector>

#include "voxdiff/autodiff.hpp"
#include "voxdiff/rng.hpp"

namespace voxdiff {

struct UNetConfig {
    int base_channels = 16;
    int depth = 2;          // number of 2x downsampling levels
    int time_embed_dim = 32;
};

inline void validate_unet_config(const UNetConfig& cfg) {
    if (cfg.base_channels < 1) throw ConfigError("unet base_channels must be >= 1");
    if (cfg.depth < 1) throw ConfigError("unet depth must be >= 1");
    if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
        throw ConfigError("unet time_embed_dim must be even and >= 2");
}

template <typename T>
struct NamedParamT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
};

// Encoder/decoder with residual conv blocks, average-pool downsampling,
// nearest-neighbour upsampling, skip concatenation at matching resolutions,
// and a per-level projected time embedding added as a per-channel bias. The
// head is a zero-initialized 1x1x1 conv, so a fresh network emits all-zero
// (uniform) logits.
template <typename T>
class UNetT {
public:
    using Tensor = TensorT<T>;
    using Tape = TapeT<T>;

    UNetT(UNetConfig cfg, int num_classes, int condition_channels, const VoxelRng& rng)
        : cfg_(cfg), num_classes_(num_classes), condition_channels_(condition_channels) {
        validate_unet_config(cfg_);
        if (num_classes_ < 2) throw ConfigError("unet needs at least 2 classes");
        if (condition_channels_ < 0) throw ConfigError("negative condition channels");
        int in_ch = num_classes_ + condition_channels_;
        int e = cfg_.time_embed_dim;

        add_conv("stem", in_ch, ch(0), 3, rng);
        for (int l = 0; l < cfg_.depth; ++l) {
            add_conv("enc" + std::to_string(l) + ".time", e, ch(l), 1, rng);
            add_block("enc" + std::to_string(l), ch(l), rng);
            add_conv("down" + std::to_string(l), ch(l), ch(l + 1), 1, rng);
        }
        add_conv("mid.time", e, ch(cfg_.depth), 1, rng);
        add_block("mid", ch(cfg_.depth), rng);
        for (int l = cfg_.depth - 1; l >= 0; --l) {
            std::string p = "up" + std::to_string(l);
            add_conv(p + ".conv_in", ch(l + 1), ch(l), 1, rng);
            add_conv(p + ".merge", 2 * ch(l), ch(l), 3, rng);
            add_conv(p + ".time", e, ch(l), 1, rng);
            add_block(p, ch(l), rng);
        }
        add_conv("head", ch(0), num_classes_, 1, rng, /*zero_init=*/true);
    }

    const UNetConfig& config() const { return cfg_; }
    int num_classes() const { return num_classes_; }
    int condition_channels() const { return condition_channels_; }
    int input_channels() const { return num_classes_ + condition_channels_; }

    std::vector<NamedParamT<T>>& params() { return params_; }
    const std::vector<NamedParamT<T>>& params() const { return params_; }

    NamedParamT<T>& param(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ConfigError("unknown unet parameter: " + name);
        return params_[it->second];
    }

    int64_t num_parameters() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_)
            std::fill(p.grad.v.begin(), p.grad.v.end(), T(0));
    }

    // Builds the forward graph on the caller's tape and returns the logits
    // node (N, K, h, w, d). One timestep per batch element.
    int forward(Tape& tape, Tensor x, const std::vector<int>& timesteps) {
        if (x.c != input_channels())
            throw ConfigError("unet expects " + std::to_string(input_channels()) +
                              " input channels, got " + std::to_string(x.c));
        if (int(timesteps.size()) != x.n)
            throw ConfigError("unet needs one timestep per batch element");
        int stride = 1 << cfg_.depth;
        if (x.h % stride || x.w % stride || x.d % stride)
            throw ConfigError("unet depth " + std::to_string(cfg_.depth) +
                              " needs dims divisible by " + std::to_string(stride) + ", got " +
                              x.shape_string());

        Tensor emb = Tensor::zeros(x.n, cfg_.time_embed_dim, 1, 1, 1);
        for (int bn = 0; bn < x.n; ++bn) {
            auto e = time_embedding<T>(timesteps[size_t(bn)], cfg_.time_embed_dim);
            std::copy(e.begin(), e.end(), emb.v.begin() + bn * cfg_.time_embed_dim);
        }

        std::unordered_map<std::string, int> ids;
        auto P = [&](const std::string& name) {
            auto it = ids.find(name);
            if (it != ids.end()) return it->second;
            NamedParamT<T>& p = param(name);
            int id = tape.param(&p.value, &p.grad);
            ids.emplace(name, id);
            return id;
        };
        auto conv = [&](const std::string& name, int in_id) {
            return tape.conv3d(in_id, P(name + ".w"), P(name + ".b"));
        };
        auto block = [&](const std::string& prefix, int in_id) {
            for (int b = 0; b < 2; ++b) {
                std::string p = prefix + ".block" + std::to_string(b);
                int h = tape.affine(in_id, P(p + ".affine1.scale"), P(p + ".affine1.shift"));
                h = conv(p + ".conv1", tape.relu(h));
                h = tape.affine(h, P(p + ".affine2.scale"), P(p + ".affine2.shift"));
                h = conv(p + ".conv2", tape.relu(h));
                in_id = tape.add(in_id, h);
            }
            return in_id;
        };
        int emb_id = tape.input(std::move(emb));
        auto with_time = [&](const std::string& name, int in_id) {
            return tape.broadcast_spatial_add(in_id, conv(name, emb_id));
        };
        int cur = conv("stem", tape.input(std::move(x)));
        std::vector<int> skips;
        for (int l = 0; l < cfg_.depth; ++l) {
            std::string sl = std::to_string(l);
            cur = with_time("enc" + sl + ".time", cur);
            cur = block("enc" + sl, cur);
            skips.push_back(cur);
            cur = conv("down" + sl, tape.avg_pool2(cur));
        }
        cur = with_time("mid.time", cur);
        cur = block("mid", cur);
        for (int l = cfg_.depth - 1; l >= 0; --l) {
            std::string p = "up" + std::to_string(l);
            cur = conv(p + ".conv_in", tape.upsample_nearest2(cur));
            cur = conv(p + ".merge", tape.concat_channels(cur, skips[size_t(l)]));
            cur = with_time(p + ".time", cur);
            cur = block(p, cur);
        }
        return conv("head", cur);
    }

private:
    int ch(int level) const { return cfg_.base_channels << level; }

    NamedParamT<T>& add_param(const std::string& name, Tensor value) {
        Tensor grad = Tensor::zeros(value.n, value.c, value.h, value.w, value.d);
        params_.push_back(NamedParamT<T>{name, std::move(value), std::move(grad)});
        by_name_.emplace(name, params_.size() - 1);
        return params_.back();
    }

    void add_conv(const std::string& name, int in_ch, int out_ch, int k, const VoxelRng& rng,
                  bool zero_init = false) {
        Tensor w = Tensor::zeros(out_ch, in_ch, k, k, k);
        if (!zero_init) {
            // He init: std = sqrt(2 / fan_in), drawn from the kWeights stream
            // keyed by parameter index so layout changes never reshuffle draws
            // within a layer.
            double std_dev = std::sqrt(2.0 / (double(in_ch) * k * k * k));
            uint64_t step = uint64_t(params_.size());
            uint64_t stream = stream_id(RngStream::kWeights);
            for (size_t i = 0; i < w.v.size(); ++i)
                w.v[i] = T(std_dev * rng.normal(stream, step, uint64_t(i)));
        }
        add_param(name + ".w", std::move(w));
        add_param(name + ".b", Tensor::zeros(1, out_ch, 1, 1, 1));
    }

    void add_block(const std::string& prefix, int channels, const VoxelRng& rng) {
        for (int b = 0; b < 2; ++b) {
            std::string p = prefix + ".block" + std::to_string(b);
            for (int a = 1; a <= 2; ++a) {
                std::string ap = p + ".affine" + std::to_string(a);
                Tensor scale = Tensor::zeros(1, channels, 1, 1, 1);
                std::fill(scale.v.begin(), scale.v.end(), T(1));
                add_param(ap + ".scale", std::move(scale));
                add_param(ap + ".shift", Tensor::zeros(1, channels, 1, 1, 1));
            }
            add_conv(p + ".conv1", channels, channels, 3, rng);
            add_conv(p + ".conv2", channels, channels, 3, rng);
        }
    }

    UNetConfig cfg_;
    int num_classes_ = 0;
    int condition_channels_ = 0;
    std::vector<NamedParamT<T>> params_;
    std::unordered_map<std::string, size_t> by_name_;
};

using UNet = UNetT<float>;
using UNetD = UNetT<double>;

} // namespace voxdiff
