#include "voxdiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "voxdiff/checkpoint.hpp"
#include "voxdiff/pipeline.hpp"

namespace voxdiff {

namespace {

int symmetry_key(const Symmetry& s) { return s.quarter_turns * 2 + (s.mirror ? 1 : 0); }

// Dihedral composition, f after g: mirrors flip the sense of later turns.
Symmetry compose(const Symmetry& f, const Symmetry& g) {
    int turned = f.mirror ? (4 - g.quarter_turns) % 4 : g.quarter_turns;
    return Symmetry{(f.quarter_turns + turned) % 4, f.mirror != g.mirror};
}

// One-hot rows of `x0` on a simulated already-known region (an edge strip of
// random side and width, or nothing), uniform rows elsewhere — the training
// analog of the subdivision overlap channels.
Field training_overlap(const SemanticGrid& x0, const VoxelRng& rng, uint64_t stream,
                       uint64_t step, uint64_t base_index) {
    int num_classes = x0.num_classes;
    Field cond = new_field<float>(x0.dims, num_classes);
    float uniform = 1.0f / float(num_classes);
    int side = -1; // -1 none, 0 low-y strip, 1 low-x strip
    int width = 0;
    if (rng.uniform(stream, step, base_index) < 0.5) {
        side = rng.uniform(stream, step, base_index + 1) < 0.5 ? 0 : 1;
        int extent = side == 0 ? x0.dims.w : x0.dims.h;
        int max_width = std::max(1, extent / 4);
        width = 1 + int(rng.uniform(stream, step, base_index + 2) * max_width);
        width = std::min(width, max_width);
    }
    for (int z = 0; z < x0.dims.d; ++z)
        for (int y = 0; y < x0.dims.w; ++y)
            for (int x = 0; x < x0.dims.h; ++x) {
                int64_t v = x + int64_t(x0.dims.h) * (y + int64_t(x0.dims.w) * z);
                float* row = cond.row(v);
                bool known = (side == 0 && y < width) || (side == 1 && x < width);
                if (known) {
                    row[x0.at(x, y, z)] = 1.0f;
                } else {
                    for (int c = 0; c < num_classes; ++c) row[c] = uniform;
                }
            }
    return cond;
}

void pack_field(Tensor& x, int batch_index, int channel_offset, const Field& f) {
    for (int c = 0; c < f.channels; ++c) {
        float* dst = x.v.data() + x.plane(batch_index, channel_offset + c);
        for (int64_t v = 0; v < f.dims.voxels(); ++v) dst[v] = f.row(v)[c];
    }
}

void dump_batch(const std::string& dir, int scale, int epoch,
                const std::vector<SemanticGrid>& x0s, const std::vector<int>& ts) {
    std::filesystem::create_directories(dir);
    for (size_t b = 0; b < x0s.size(); ++b) {
        std::string path = dir + "/nonfinite_scale" + std::to_string(scale) + "_epoch" +
                           std::to_string(epoch) + "_example" + std::to_string(b) + "_t" +
                           std::to_string(ts[b]) + ".sgrid";
        save_sgrid(path, x0s[b]);
    }
}

} // namespace

std::vector<Symmetry> symmetry_group(const AugmentFlags& flags) {
    std::vector<Symmetry> gens;
    if (flags.flip_x) gens.push_back(Symmetry{0, true});
    if (flags.flip_y) gens.push_back(Symmetry{2, true});
    if (flags.rotate_z) gens.push_back(Symmetry{1, false});

    bool have[8] = {};
    std::vector<Symmetry> out{Symmetry{0, false}};
    have[0] = true;
    bool grew = true;
    while (grew) {
        grew = false;
        size_t sz = out.size();
        for (size_t i = 0; i < sz; ++i)
            for (const Symmetry& g : gens) {
                Symmetry h = compose(g, out[i]);
                if (!have[symmetry_key(h)]) {
                    have[symmetry_key(h)] = true;
                    out.push_back(h);
                    grew = true;
                }
            }
    }
    std::sort(out.begin(), out.end(),
              [](const Symmetry& a, const Symmetry& b) { return symmetry_key(a) < symmetry_key(b); });
    return out;
}

SemanticGrid apply_symmetry(const SemanticGrid& g, const Symmetry& s) {
    int q = ((s.quarter_turns % 4) + 4) % 4;
    if ((q == 1 || q == 3) && g.dims.h != g.dims.w)
        throw ConfigError("quarter turns need a square horizontal footprint");
    SemanticGrid cur = g;
    if (s.mirror) {
        SemanticGrid m = new_grid(cur.dims, cur.num_classes);
        for (int z = 0; z < cur.dims.d; ++z)
            for (int y = 0; y < cur.dims.w; ++y)
                for (int x = 0; x < cur.dims.h; ++x)
                    m.set(x, y, z, cur.at(cur.dims.h - 1 - x, y, z));
        cur = std::move(m);
    }
    if (q == 2) {
        SemanticGrid r = new_grid(cur.dims, cur.num_classes);
        for (int z = 0; z < cur.dims.d; ++z)
            for (int y = 0; y < cur.dims.w; ++y)
                for (int x = 0; x < cur.dims.h; ++x)
                    r.set(cur.dims.h - 1 - x, cur.dims.w - 1 - y, z, cur.at(x, y, z));
        cur = std::move(r);
    } else {
        for (int i = 0; i < q; ++i) {
            SemanticGrid r = new_grid(cur.dims, cur.num_classes);
            for (int z = 0; z < cur.dims.d; ++z)
                for (int y = 0; y < cur.dims.w; ++y)
                    for (int x = 0; x < cur.dims.h; ++x)
                        r.set(y, cur.dims.h - 1 - x, z, cur.at(x, y, z));
            cur = std::move(r);
        }
    }
    return cur;
}

SemanticGrid augment(const SemanticGrid& g, const AugmentFlags& flags, const VoxelRng& rng,
                     uint64_t stream, uint64_t step, uint64_t index) {
    if (flags.rotate_z && g.dims.h != g.dims.w)
        throw ConfigError("rotation augmentation needs a square horizontal footprint");
    std::vector<Symmetry> group = symmetry_group(flags);
    uint64_t pick = rng.bits(stream, step, index) % group.size();
    return apply_symmetry(g, group[size_t(pick)]);
}

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
        throw ConfigError("learning_rate must be finite and >= 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
        throw ConfigError("optimizer betas must lie in [0, 1)");
    if (!(cfg.epsilon > 0.0)) throw ConfigError("optimizer epsilon must be positive");
    if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.lambda_aux >= 0.0)) throw ConfigError("lambda_aux must be >= 0");
    if (cfg.T < 1) throw ConfigError("schedule length T must be >= 1");
}

void write_loss_csv(const std::string& path, const TrainResult& curve) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write loss curve to " + path);
    out << "epoch,mean_total,mean_kl,mean_aux\n";
    out << std::setprecision(17);
    for (size_t e = 0; e < curve.epochs.size(); ++e)
        out << (e + 1) << ',' << curve.epochs[e].total << ',' << curve.epochs[e].kl << ','
            << curve.epochs[e].aux << '\n';
    if (!out) throw ConfigError("failed while writing " + path);
}

TrainResult train_scale(UNetDenoiser& model, int scale, const std::vector<SemanticGrid>& scenes,
                        const PyramidSpec& pyramid, const NoiseSchedule& schedule,
                        const TrainConfig& cfg, const VoxelRng& rng) {
    validate_train_config(cfg);
    validate_pyramid(pyramid);
    int levels = int(pyramid.scales.size());
    if (scale < 0 || scale >= levels)
        throw ConfigError("scale " + std::to_string(scale) + " out of range for " +
                          std::to_string(levels) + " scales");
    if (scenes.empty()) throw ConfigError("training needs at least one scene");
    UNet& net = model.model();
    int num_classes = net.num_classes();
    int cc = net.condition_channels();
    if (scale == 0) {
        if (cc != 0) throw ConfigError("the coarsest scale trains unconditioned");
    } else if (cc != num_classes && cc != 2 * num_classes) {
        throw ConfigError("scale " + std::to_string(scale) + " model must take K or 2K " +
                          "condition channels, got " + std::to_string(cc));
    }
    for (const SemanticGrid& s : scenes) {
        if (!(s.dims == pyramid.scales.back()))
            throw ConfigError("training scene dims " + to_string(s.dims) +
                              " do not match the finest scale " +
                              to_string(pyramid.scales.back()));
        if (s.num_classes != num_classes)
            throw ConfigError("training scene class count does not match the model");
    }

    const size_t n = scenes.size();
    const Dims3 dims = pyramid.scales[size_t(scale)];
    const uint64_t shuffle_stream = stream_id(RngStream::kShuffle, uint64_t(scale));
    const uint64_t time_stream = stream_id(RngStream::kTrainTime, uint64_t(scale));
    const uint64_t aug_stream = stream_id(RngStream::kTrainAug, uint64_t(scale));

    AdamW opt(cfg);
    TrainResult curve;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));

    for (int e = 0; e < cfg.epochs; ++e) {
        for (size_t i = n - 1; i > 0; --i) {
            uint64_t j = rng.bits(shuffle_stream, uint64_t(e), uint64_t(i)) % (i + 1);
            std::swap(order[i], order[size_t(j)]);
        }
        LossBreakdown epoch_sum;
        for (size_t start = 0; start < n; start += size_t(cfg.batch_size)) {
            const int batch = int(std::min(size_t(cfg.batch_size), n - start));
            std::vector<SemanticGrid> x0s, xts;
            std::vector<Field> conds;
            std::vector<int> ts;
            x0s.reserve(size_t(batch));
            xts.reserve(size_t(batch));
            ts.reserve(size_t(batch));
            for (int b = 0; b < batch; ++b) {
                size_t idx = order[start + size_t(b)];
                SemanticGrid scene =
                    augment(scenes[idx], cfg.augment, rng, aug_stream, uint64_t(e),
                            8 * uint64_t(idx));
                std::vector<SemanticGrid> pyr = build_pyramid(scene, pyramid);
                SemanticGrid x0 = std::move(pyr[size_t(scale)]);
                int t = 1 + int(rng.bits(time_stream, uint64_t(e), uint64_t(idx)) %
                                uint64_t(schedule.T));
                SemanticGrid xt =
                    forward_sample(x0, schedule, t, rng,
                                   stream_id(RngStream::kForward, uint64_t(scale),
                                             uint64_t(e) * uint64_t(n) + uint64_t(idx)));
                if (cc > 0) {
                    Field saf = saf_upsample(one_hot(pyr[size_t(scale) - 1]), dims,
                                             cfg.saf_mode);
                    if (cc == 2 * num_classes) {
                        Field both = new_field<float>(dims, 2 * num_classes);
                        Field strips = training_overlap(x0, rng, aug_stream, uint64_t(e),
                                                        8 * uint64_t(idx) + 1);
                        for (int64_t v = 0; v < dims.voxels(); ++v) {
                            float* row = both.row(v);
                            const float* sf = saf.row(v);
                            const float* st = strips.row(v);
                            for (int k = 0; k < num_classes; ++k) row[k] = sf[k];
                            for (int k = 0; k < num_classes; ++k)
                                row[num_classes + k] = st[k];
                        }
                        conds.push_back(std::move(both));
                    } else {
                        conds.push_back(std::move(saf));
                    }
                }
                x0s.push_back(std::move(x0));
                xts.push_back(std::move(xt));
                ts.push_back(t);
            }

            Tensor x = Tensor::zeros(batch, num_classes + cc, dims.h, dims.w, dims.d);
            for (int b = 0; b < batch; ++b) {
                pack_field(x, b, 0, one_hot(xts[size_t(b)]));
                if (cc > 0) pack_field(x, b, num_classes, conds[size_t(b)]);
            }
            Tape tape;
            int logits_id = net.forward(tape, std::move(x), ts);
            const Tensor& logits = tape.value(logits_id);

            Tensor seed = Tensor::zeros(batch, num_classes, dims.h, dims.w, dims.d);
            const float inv_batch = 1.0f / float(batch);
            for (int b = 0; b < batch; ++b) {
                Field lf = tensor_to_field(logits, b);
                Field grad;
                LossBreakdown lb = hybrid_loss_grad(lf, x0s[size_t(b)], xts[size_t(b)],
                                                    schedule, ts[size_t(b)], cfg.lambda_aux,
                                                    &grad);
                if (!std::isfinite(lb.total)) {
                    dump_batch(cfg.diagnostics_dir, scale, e, x0s, ts);
                    throw NumericalError(
                        "non-finite loss at scale " + std::to_string(scale) + ", epoch " +
                        std::to_string(e) + "; offending batch dumped to " +
                        cfg.diagnostics_dir);
                }
                epoch_sum.total += lb.total;
                epoch_sum.kl += lb.kl;
                epoch_sum.aux += lb.aux;
                for (int c = 0; c < num_classes; ++c) {
                    float* dst = seed.v.data() + seed.plane(b, c);
                    for (int64_t v = 0; v < dims.voxels(); ++v)
                        dst[v] = grad.row(v)[c] * inv_batch;
                }
            }
            net.zero_grads();
            tape.backward(logits_id, &seed);
            opt.update(net.params());
        }
        LossBreakdown mean;
        mean.total = epoch_sum.total / double(n);
        mean.kl = epoch_sum.kl / double(n);
        mean.aux = epoch_sum.aux / double(n);
        curve.epochs.push_back(mean);
    }
    return curve;
}

FinetuneResult finetune(const FinetunePlan& plan, const std::vector<SemanticGrid>& target_scenes,
                        const PyramidSpec& pyramid, const NoiseSchedule& schedule,
                        const TrainConfig& cfg, const VoxelRng& rng) {
    validate_pyramid(pyramid);
    int levels = int(pyramid.scales.size());
    if (plan.source_checkpoints.size() != size_t(levels))
        throw ConfigError("fine-tune plan needs one source checkpoint per scale: " +
                          std::to_string(levels) + " scales, " +
                          std::to_string(plan.source_checkpoints.size()) + " checkpoints");
    std::vector<bool> listed(size_t(levels), false);
    for (int l : plan.train_scales) {
        if (l < 0 || l >= levels)
            throw ConfigError("fine-tune scale " + std::to_string(l) + " out of range");
        if (listed[size_t(l)])
            throw ConfigError("fine-tune scale " + std::to_string(l) + " listed twice");
        listed[size_t(l)] = true;
    }

    FinetuneResult res;
    res.curves.resize(size_t(levels));
    for (int l = 0; l < levels; ++l)
        res.models.push_back(load_model(plan.source_checkpoints[size_t(l)]));
    std::vector<Denoiser*> raw;
    for (auto& m : res.models) raw.push_back(m.get());
    check_pyramid_models(raw, pyramid);

    for (int l : plan.train_scales) {
        auto* trainable = dynamic_cast<UNetDenoiser*>(res.models[size_t(l)].get());
        if (!trainable)
            throw ConfigError("checkpoint " + plan.source_checkpoints[size_t(l)] +
                              " is not a trainable network");
        res.curves[size_t(l)] =
            train_scale(*trainable, l, target_scenes, pyramid, schedule, cfg, rng);
    }
    return res;
}

} // namespace voxdiff
