#include "voxdiff/pipeline.hpp"

namespace voxdiff {

SemanticGrid reverse_chain(Denoiser& model, const NoiseSchedule& schedule, Dims3 dims,
                           const Field* condition, bool deterministic, const VoxelRng& rng,
                           uint64_t scale, uint64_t tile, int ox, int oy, int oz) {
    int num_classes = model.num_classes();
    SemanticGrid x = init_noise(dims, num_classes, rng, stream_id(RngStream::kInit, scale, tile));
    uint64_t step_stream = stream_id(RngStream::kReverse, scale, tile);
    for (int t = schedule.T; t >= 1; --t) {
        Field x_t = one_hot(x);
        DenoiserInput in{&x_t, t, condition};
        in.ox = ox;
        in.oy = oy;
        in.oz = oz;
        Field logits = model.predict_x0_logits(in);
        x = sample_reverse_step(logits, x, schedule, t, rng, step_stream, deterministic);
    }
    return x;
}

int check_pyramid_models(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid) {
    validate_pyramid(pyramid);
    if (models.size() != pyramid.scales.size())
        throw ConfigError("need one model per scale: " + std::to_string(pyramid.scales.size()) +
                          " scales, " + std::to_string(models.size()) + " models");
    for (const Denoiser* m : models)
        if (!m) throw MissingArtifactError("missing model for a pyramid scale");
    int num_classes = models[0]->num_classes();
    for (size_t l = 1; l < models.size(); ++l)
        if (models[l]->num_classes() != num_classes)
            throw ConfigError("models disagree on class count: scale 0 has " +
                              std::to_string(num_classes) + ", scale " + std::to_string(l) +
                              " has " + std::to_string(models[l]->num_classes()));
    return num_classes;
}

GenerateResult generate(const std::vector<Denoiser*>& models, const PyramidSpec& pyramid,
                        const NoiseSchedule& schedule, const GenerateOptions& opt,
                        const VoxelRng& rng) {
    int num_classes = check_pyramid_models(models, pyramid);
    int levels = int(pyramid.scales.size());
    int l0 = opt.start_from_scale;
    if (l0 < 0 || l0 >= levels)
        throw ConfigError("start_from_scale " + std::to_string(l0) + " out of range for " +
                          std::to_string(levels) + " scales");
    if (l0 > 0) {
        if (!opt.coarse)
            throw ConfigError("start_from_scale > 0 needs a coarse scene to condition on");
        if (!(opt.coarse->dims == pyramid.scales[size_t(l0 - 1)]))
            throw ConfigError("coarse scene dims " + to_string(opt.coarse->dims) +
                              " do not match scale " + std::to_string(l0 - 1) + " dims " +
                              to_string(pyramid.scales[size_t(l0 - 1)]));
        if (opt.coarse->num_classes != num_classes)
            throw ConfigError("coarse scene class count does not match the models");
    } else if (opt.coarse) {
        throw ConfigError("a coarse scene is only used with start_from_scale > 0");
    }

    GenerateResult res;
    SemanticGrid prev;
    bool have_prev = false;
    if (l0 > 0) {
        prev = *opt.coarse;
        have_prev = true;
    }
    for (int l = l0; l < levels; ++l) {
        Field condition;
        const Field* cond_ptr = nullptr;
        if (have_prev) {
            condition = saf_upsample(one_hot(prev), pyramid.scales[size_t(l)], opt.saf_mode);
            cond_ptr = &condition;
        }
        SemanticGrid out = reverse_chain(*models[size_t(l)], schedule, pyramid.scales[size_t(l)],
                                         cond_ptr, opt.deterministic, rng, uint64_t(l), 0);
        if (opt.keep_intermediate) res.per_scale.push_back(out);
        prev = std::move(out);
        have_prev = true;
    }
    res.scene = std::move(prev);
    return res;
}

} // namespace voxdiff
